from pathlib import Path

import pytest

from scoring_models import load_model, load_table_model_file

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_path(name: str) -> str:
    return str(FIXTURES / name)


@pytest.fixture
def stationary():
    return load_table_model_file(fixture_path("stationary.json"))


@pytest.fixture
def gap_model():
    return load_table_model_file(fixture_path("gap.json"))


@pytest.fixture
def flip_model():
    return load_table_model_file(fixture_path("flip.json"))


@pytest.fixture
def superset_model():
    return load_table_model_file(fixture_path("superset_counterexample.json"))


@pytest.fixture
def corpus_path():
    return fixture_path("corpus.txt")


@pytest.fixture
def copy_model():
    return load_model("copy:base=seeded:v=6,seed=7,bias=2.0,slack=0")


@pytest.fixture
def reports_dir(tmp_path, monkeypatch):
    import report_utils
    monkeypatch.setattr(report_utils, "REPORTS_DIR", tmp_path / "reports")
    return tmp_path / "reports"
