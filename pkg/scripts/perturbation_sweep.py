"""Euler error against the exact OU transition, with the perturbation bound, over a step sweep.

Prints h, the L2 error, its bound and the fitted log-log slopes.
"""
import argparse

from stochgronwall.gronwall_core import loglog_slope
from stochgronwall.harness import ExperimentSpec, run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--kmin", type=int, default=4)
    ap.add_argument("--kmax", type=int, default=10)
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--delta", type=float, default=0.25)
    ap.add_argument("--theta", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=12345)
    args = ap.parse_args()

    hs, errs, bnds = [], [], []
    print(f"{'h':>10s} {'error':>12s} {'ci_hi':>12s} {'bound':>12s}  verdict")
    for k in range(args.kmin, args.kmax + 1):
        spec = ExperimentSpec(id=f"h{k}", inequality="perturbation_marginal", model="ou", p=2,
                              delta=args.delta, model_params={"theta": args.theta},
                              sim={"T": 1.0, "n_steps": 2 ** k, "n_paths": args.paths},
                              seed=args.seed)
        r = run_experiment(spec)
        if r.lhs is None:
            print(f"{2.0 ** -k:10.3e}  {r.verdict}: {r.message}")
            continue
        hs.append(2.0 ** -k)
        errs.append(r.lhs.point)
        bnds.append(r.rhs.value)
        print(f"{hs[-1]:10.3e} {errs[-1]:12.4e} {r.lhs.ci_hi:12.4e} {bnds[-1]:12.4e}  {r.verdict}")
    if len(hs) > 1:
        print(f"slope: error {loglog_slope(hs, errs):.3f}, bound {loglog_slope(hs, bnds):.3f}")


if __name__ == "__main__":
    main()
