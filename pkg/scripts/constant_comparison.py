"""Tabulate the half and full running-supremum constants over a (p, q3) grid."""
import argparse

import numpy as np

from stochgronwall import constants


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--p", type=float, nargs="+", default=[2.0, 4.0, 8.0])
    ap.add_argument("--points", type=int, default=6, help="q3 values per p, spread over (0, p)")
    args = ap.parse_args()

    print(f"{'p':>5s} {'q3':>7s} {'half':>14s} {'full':>14s} {'full/half^2':>12s}")
    for p in args.p:
        for q3 in np.linspace(0.0, p, args.points + 2)[1:-1]:
            half = constants.sup_constant(p, q3, "half").value
            full = constants.sup_constant(p, q3, "full").value
            print(f"{p:5g} {q3:7.3f} {half:14.6g} {full:14.6g} {full / half ** 2:12.9f}")


if __name__ == "__main__":
    main()
