"""Time-step sweep for the parabolic study at fixed eps.

Separates the homogenization error from the implicit Euler error: once dt is
small the final-time error should stop changing.

Usage: python3 scripts/dt_refinement.py [--n 8] [--config configs/parabolic_linear.ini]
"""

import argparse
from dataclasses import replace
from pathlib import Path

from perfhom import studies
from perfhom.config import load_config

DEFAULT = Path(__file__).resolve().parent.parent / "configs" / "parabolic_linear.ini"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(DEFAULT))
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--dts", type=float, nargs="*", default=[1 / 8, 1 / 16, 1 / 32, 1 / 64])
    args = ap.parse_args()
    base = load_config(args.config)
    print(f"{'dt':>10} {'error_L2_final':>16} {'error_L2_time_avg':>18}")
    for dt in args.dts:
        report = studies.run_study(replace(base, dt=dt, n_list=[args.n]))
        row = report.rows[0]
        print(f"{dt:>10.6f} {float(row[2]):>16.6e} {float(row[3]):>18.6e}")


if __name__ == "__main__":
    main()
