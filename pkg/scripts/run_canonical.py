"""Run every lab task on the canonical configuration and write artefacts to out/canonical."""
import sys
from pathlib import Path

from logcircle.lab_cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    sys.exit(main(["all", "--config", str(ROOT / "configs" / "canonical.yaml"), *sys.argv[1:]]))
