import os
from pathlib import Path

import numpy as np
import pytest

from _synth import write_synthetic_csv

REFERENCE_ENV = "SHAPSTAB_UCI_CSV"
_REPO_ROOT = Path(__file__).resolve().parents[1]
_REFERENCE_CANDIDATES = (
    _REPO_ROOT / "data" / "default_credit.csv",
    _REPO_ROOT / "data" / "UCI_Credit_Card.csv",
)


def reference_csv_path():
    env = os.environ.get(REFERENCE_ENV)
    if env:
        return env if os.path.isfile(env) else None
    for candidate in _REFERENCE_CANDIDATES:
        if candidate.is_file():
            return str(candidate)
    return None


@pytest.fixture(scope="session")
def reference_csv():
    path = reference_csv_path()
    if path is None:
        pytest.skip("reference credit-default CSV not present "
                    f"(set {REFERENCE_ENV} or place it under data/)")
    return path


@pytest.fixture(scope="session")
def synth_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "synthetic.csv"
    write_synthetic_csv(path, n_rows=600, seed=11)
    return str(path)


@pytest.fixture(scope="session")
def synth_raw(synth_csv):
    from shapstab import load_dataset

    return load_dataset(synth_csv)


@pytest.fixture(scope="session")
def synth_matrix(synth_raw):
    from shapstab import clean_education, one_hot_encode

    return one_hot_encode(clean_education(synth_raw))


@pytest.fixture()
def rng():
    return np.random.default_rng(20250810)
