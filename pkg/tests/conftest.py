import os
from pathlib import Path

import pytest

from faciesml.data_model import dataset_to_csv, parse_dataset
from faciesml.synthetic import make_synthetic_dataset

DATA_ENV = "FACIES_TRAINING_DATA"
DEFAULT_DATA = Path(__file__).resolve().parent.parent / "data" / "training_data.csv"


def training_data_path() -> Path | None:
    candidate = Path(os.environ.get(DATA_ENV, DEFAULT_DATA))
    return candidate if candidate.is_file() else None


@pytest.fixture(scope="session")
def training_data():
    """The contest file; tests that need it fail (not skip) when it is absent."""
    path = training_data_path()
    if path is None:
        pytest.fail(
            f"training_data.csv not found: set {DATA_ENV} or place it at {DEFAULT_DATA}",
            pytrace=False,
        )
    return parse_dataset(path)


@pytest.fixture(scope="session")
def synthetic():
    return make_synthetic_dataset(n_wells=4, rows_per_well=(60, 90), seed=7)


@pytest.fixture
def synthetic_csv(tmp_path, synthetic):
    path = tmp_path / "wells.csv"
    path.write_text(dataset_to_csv(synthetic))
    return path


_acceptance: dict[str, bool] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        name = marker.args[0]
        _acceptance[name] = _acceptance.get(name, True) and call.excinfo is None


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in _acceptance.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
