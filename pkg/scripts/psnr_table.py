"""Recompute PSNR from each reference MSE listing and show the deviation."""
from apcm.metrics import psnr_from_mse
from apcm.verify import PSNR_TOL_DB, REFERENCE_LISTINGS

if __name__ == "__main__":
    print(f"{'listing':32s} {'MSE':>9s} {'listed':>7s} {'recomputed':>10s} {'diff':>7s}")
    for label, mse, psnr in REFERENCE_LISTINGS:
        got = psnr_from_mse(mse)
        flag = "" if abs(got - psnr) <= PSNR_TOL_DB else "  <-- outside tolerance"
        print(f"{label:32s} {mse:9.6f} {psnr:7.2f} {got:10.4f} {got - psnr:+7.4f}{flag}")
