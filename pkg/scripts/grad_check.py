"""Finite-difference check of every parameter group of a small model.

    python scripts/grad_check.py --seeds 0 1 2
"""

import argparse

from tsat.model import TsatConfig
from tsat.training import grad_check


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--tolerance", type=float, default=1e-4)
    args = ap.parse_args()
    cfg = TsatConfig(n_series=4, backcast=16, horizon=4, n_imfs=3, d_model=8, d_k=4, d_v=4, n_heads=2, n_blocks=1)
    ok = True
    for seed in args.seeds:
        report = grad_check(cfg, args.tolerance, seed)
        print(f"seed {seed}: max relative error {report.max_error:.2e}")
        print(report)
        ok &= report.passed
    raise SystemExit(0 if ok else 1)


if __name__ == "__main__":
    main()
