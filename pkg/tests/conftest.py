import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))


@pytest.fixture(scope="session")
def acceptance_data():
    """Grid sweeps and single certification cells used by the acceptance
    tests, built once per library state (disk-cached across runs)."""
    from _acceptance_data import load_or_build

    return load_or_build()


@pytest.fixture
def announce(capsys):
    """Print a line that stays visible despite pytest's output capture."""

    def _print(line: str) -> None:
        with capsys.disabled():
            print(line, flush=True)

    return _print
