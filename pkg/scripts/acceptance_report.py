"""Run the acceptance module and print its PASS/FAIL lines (extra arguments go to pytest)."""
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    sys.exit(pytest.main(["-q", "-rxX", str(ROOT / "tests" / "test_acceptance.py"), *sys.argv[1:]]))
