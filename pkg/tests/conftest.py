import numpy as np
import pytest

from amazon_landcover.imaging import generate_synthetic_dataset
from amazon_landcover.labels import default_catalog

# Filled by test_acceptance.py, printed at the end of the session.
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        status, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {status}  {detail}")


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """40 synthetic 4-class chips at 32 px."""
    out = tmp_path_factory.mktemp("synth_small")
    manifest = generate_synthetic_dataset(40, 4, seed=3, out_dir=out, size=32)
    return out, manifest
