"""Retrain at several flow depths and report reconstruction error per depth."""
import sys
from pathlib import Path

from apcm.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else str(ROOT / "runs" / "depth_sweep")
    sys.exit(main(["noise", "--sweep", "--config", str(ROOT / "configs" / "quick.json"), "--out", out,
                   "--depths", "2", "4", "6", "8"]))
