import os

import numpy as np
import pytest

from fedsim.data import LabeledDataset, load_csv

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CALIFORNIA_CSV = os.path.join(ROOT, "data", "california_housing.csv")
CONFIG_DIR = os.path.join(ROOT, "configs")


@pytest.fixture(scope="session")
def california():
    return load_csv(CALIFORNIA_CSV, "MedHouseVal", ["MedInc", "HouseAge"])


def make_dataset(features, labels) -> LabeledDataset:
    return LabeledDataset(np.asarray(features, dtype=float), np.asarray(labels))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
