import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amazon_landcover.errors import (
    EmptyDatasetError,
    MalformedRowError,
    ManifestNotFoundError,
    ShapeError,
    UnknownTagError,
)
from amazon_landcover.labels import (
    ATMOSPHERIC,
    COMMON_LAND,
    RARE_LAND,
    DatasetManifest,
    SampleRecord,
    check_atmospheric,
    decode_vector,
    default_catalog,
    encode_tags,
    load_catalog_file,
    load_manifest,
    split_train_val,
    write_manifest,
)

PLANET_TAGS = {
    "agriculture", "artisinal_mine", "bare_ground", "blooming", "blow_down", "clear", "cloudy",
    "conventional_mine", "cultivation", "habitation", "haze", "partly_cloudy", "primary", "road",
    "selective_logging", "slash_burn", "water",
}


def _manifest(n, catalog):
    recs = [SampleRecord(f"img_{i}", f"img_{i}.jpg", {"primary"}) for i in range(n)]
    return DatasetManifest(tuple(recs), catalog)


class TestCatalog:
    def test_seventeen_tags(self, catalog):
        assert len(catalog) == 17
        assert set(catalog.tags) == PLANET_TAGS

    def test_alphabetical(self, catalog):
        assert list(catalog.tags) == sorted(catalog.tags)
        assert catalog.index("agriculture") == 0
        assert catalog.index("water") == 16

    def test_groups(self, catalog):
        assert "haze" in catalog.group(ATMOSPHERIC)
        assert set(catalog.group(ATMOSPHERIC)) == {"clear", "cloudy", "haze", "partly_cloudy"}
        every = catalog.group(ATMOSPHERIC) + catalog.group(COMMON_LAND) + catalog.group(RARE_LAND)
        assert sorted(every) == sorted(catalog.tags)

    def test_stable_across_calls(self):
        assert default_catalog() == default_catalog()
        assert default_catalog().groups == default_catalog().groups

    def test_subset_keeps_order(self, catalog):
        sub = catalog.subset(["water", "haze", "agriculture"])
        assert sub.tags == ("agriculture", "haze", "water")
        with pytest.raises(UnknownTagError):
            catalog.subset(["swamp"])

    def test_atmospheric_convention(self):
        assert check_atmospheric({"clear", "primary"})
        assert not check_atmospheric({"primary"})
        assert not check_atmospheric({"clear", "haze"})


class TestEncoding:
    def test_singleton(self, catalog):
        v = encode_tags({"primary"}, catalog)
        assert v.sum() == 1 and v[catalog.index("primary")] == 1

    def test_three_tags(self, catalog):
        v = encode_tags({"agriculture", "road", "primary"}, catalog)
        assert v.sum() == 3

    def test_unknown_tag(self, catalog):
        with pytest.raises(UnknownTagError, match="swamp"):
            encode_tags({"swamp"}, catalog)

    def test_decode_zeros(self, catalog):
        assert decode_vector(np.zeros(17), catalog) == set()

    def test_decode_roundtrip_example(self, catalog):
        assert decode_vector(encode_tags({"haze", "primary"}, catalog), catalog) == {"haze", "primary"}

    def test_decode_wrong_length(self, catalog):
        with pytest.raises(ShapeError):
            decode_vector(np.zeros(16), catalog)

    @settings(max_examples=200, deadline=None)
    @given(st.sets(st.sampled_from(sorted(PLANET_TAGS))))
    def test_roundtrip_property(self, tags):
        cat = default_catalog()
        assert decode_vector(encode_tags(tags, cat), cat) == tags


class TestManifest:
    def write(self, tmp_path, body, header="image_name,tags"):
        p = tmp_path / "labels.csv"
        p.write_text(header + "\n" + body, encoding="utf-8")
        return p

    def test_parse_row(self, tmp_path, catalog):
        m = load_manifest(self.write(tmp_path, "img_0,haze primary\n"), catalog)
        assert m.records[0].tags == {"haze", "primary"}
        assert m.records[0].image_path.endswith("img_0.jpg")

    def test_three_rows(self, tmp_path, catalog):
        m = load_manifest(self.write(tmp_path, "a,primary\nb,clear primary\nc,water\n"), catalog)
        assert len(m) == 3 and m.chip_ids == ["a", "b", "c"]

    def test_image_dir(self, tmp_path, catalog):
        m = load_manifest(self.write(tmp_path, "a,primary\n"), catalog, image_dir="/data/train-jpg")
        assert m.records[0].image_path == "/data/train-jpg/a.jpg"

    def test_empty_tags(self, tmp_path, catalog):
        with pytest.raises(MalformedRowError) as err:
            load_manifest(self.write(tmp_path, "img_0,primary\nimg_1,\n"), catalog)
        assert err.value.row == 3

    def test_unknown_tag_row(self, tmp_path, catalog):
        with pytest.raises(UnknownTagError) as err:
            load_manifest(self.write(tmp_path, "img_0,swamp\n"), catalog)
        assert err.value.row == 2 and "swamp" in str(err.value)

    def test_bad_header(self, tmp_path, catalog):
        with pytest.raises(MalformedRowError):
            load_manifest(self.write(tmp_path, "img_0,primary\n", header="id,labels"), catalog)

    def test_wrong_field_count(self, tmp_path, catalog):
        with pytest.raises(MalformedRowError):
            load_manifest(self.write(tmp_path, "img_0,primary,extra\n"), catalog)

    def test_duplicate_id(self, tmp_path, catalog):
        with pytest.raises(MalformedRowError):
            load_manifest(self.write(tmp_path, "a,primary\na,water\n"), catalog)

    def test_missing_file(self, tmp_path, catalog):
        with pytest.raises(ManifestNotFoundError):
            load_manifest(tmp_path / "nope.csv", catalog)

    def test_atmospheric_warning_only(self, tmp_path, catalog):
        with pytest.warns(UserWarning, match="atmospheric"):
            m = load_manifest(self.write(tmp_path, "a,primary\n"), catalog, warn_atmospheric=True)
        assert len(m) == 1

    def test_write_read_roundtrip(self, tmp_path, catalog):
        src = load_manifest(self.write(tmp_path, "a,primary water\nb,clear\n"), catalog)
        out = tmp_path / "copy.csv"
        write_manifest(src, out)
        again = load_manifest(out, catalog)
        assert [(r.chip_id, r.tags) for r in again] == [(r.chip_id, r.tags) for r in src]

    def test_catalog_file(self, tmp_path):
        p = tmp_path / "catalog.txt"
        p.write_text("water\nprimary\n")
        assert load_catalog_file(p).tags == ("primary", "water")


class TestSplit:
    @pytest.mark.parametrize("n,n_train,n_val", [(100, 80, 20), (5, 4, 1), (7, 6, 1), (3, 2, 1)])
    def test_sizes(self, catalog, n, n_train, n_val):
        train, val = split_train_val(_manifest(n, catalog), 0.2, seed=0)
        assert (len(train), len(val)) == (n_train, n_val)

    def test_deterministic(self, catalog):
        m = _manifest(50, catalog)
        a = split_train_val(m, 0.2, seed=11)
        b = split_train_val(m, 0.2, seed=11)
        assert a[0].chip_ids == b[0].chip_ids and a[1].chip_ids == b[1].chip_ids

    def test_empty(self, catalog):
        with pytest.raises(EmptyDatasetError):
            split_train_val(DatasetManifest((), catalog), 0.2, seed=0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 200), st.floats(0.01, 0.99), st.integers(0, 2**31))
    def test_partition(self, n, frac, seed):
        m = _manifest(n, default_catalog())
        train, val = split_train_val(m, frac, seed)
        ids_t, ids_v = set(train.chip_ids), set(val.chip_ids)
        assert not ids_t & ids_v
        assert ids_t | ids_v == set(m.chip_ids)
        assert len(train) + len(val) == n
