from pathlib import Path

import pytest

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def machine_csv():
    return DATA_DIR / "machine.csv"
