"""Run every shipped study config and print one summary line per study.

Usage: python3 scripts/run_all_studies.py [--out results] [--only trace identity]
"""

import argparse
import time
from pathlib import Path

from perfhom import studies
from perfhom.config import load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
ORDER = ("verify", "verify_no_offsets", "verify_kappa_overstated", "residual_linear", "trace",
         "identity", "uniqueness", "elliptic_linear", "elliptic_nonlinear", "parabolic_linear")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--only", nargs="*", default=ORDER)
    args = ap.parse_args()
    for name in args.only:
        cfg = load_config(CONFIGS / f"{name}.ini")
        t0 = time.perf_counter()
        report = studies.run_study(cfg)
        studies.write_report(report, cfg, Path(args.out) / name)
        failed = [c.name for c in report.checks if not c.passed]
        status = "pass" if report.passed else "FAIL (" + "; ".join(failed) + ")"
        print(f"{name:<26} {time.perf_counter() - t0:7.1f} s  {status}")


if __name__ == "__main__":
    main()
