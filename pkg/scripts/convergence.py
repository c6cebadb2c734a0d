"""Manufactured-solution convergence studies; one CSV per study in --out."""
import argparse
from pathlib import Path

from fchflow.verification import convergence_study, make_mms

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=ROOT / "out" / "convergence")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    decaying, steady = make_mms("decaying"), make_mms("steady")
    studies = {
        "temporal_euler": lambda p: convergence_study(decaying, dts=[0.04, 0.02, 0.01, 0.005], n=8, csv_path=p),
        "temporal_rk4": lambda p: convergence_study(decaying, dts=[0.1, 0.05, 0.025, 0.0125], n=8,
                                                    scheme="rk4", csv_path=p),
        "spatial": lambda p: convergence_study(steady, ns=[8, 16, 24, 32, 48], dt=1e-3, t_end=0.05, csv_path=p),
    }
    for name, fn in studies.items():
        res = fn(out / f"{name}.csv")
        errs = ", ".join(f"{e:.2e}" for e in res.errors)
        print(f"{name:15s} slope {res.slope:7.3f}  errors [{errs}]")


if __name__ == "__main__":
    main()
