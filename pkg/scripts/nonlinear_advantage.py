"""IDRP vs PCA at m = 16 on the 2-D sinusoidal manifold (acceptance configuration).

Takes roughly 15 minutes on one core.  Pass a different config as the first
argument, e.g. ``configs/quick.json`` for a one-minute smoke run.
"""
import json
import sys
import time
from pathlib import Path

from apcm.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    cfg = sys.argv[1] if len(sys.argv) > 1 else str(ROOT / "configs" / "nonlinear_advantage.json")
    out = sys.argv[2] if len(sys.argv) > 2 else str(ROOT / "runs" / Path(cfg).stem)
    t0 = time.time()
    code = main(["compare", "--config", cfg, "--out", out])
    if code:
        sys.exit(code)
    s = json.loads((Path(out) / "compare_summary.json").read_text())
    print(f"test MSE: IDRP {s['idrp']['mse']:.4e}, PCA {s['pca']['mse']:.4e}, ratio {s['mse_ratio']:.4g}")
    print(f"elapsed {time.time() - t0:.0f} s; artifacts in {out}")
