"""Held-out model selection for log-normal and Gaussian emission HMMs on log-normal data.

    python3 scripts/fig3_model_selection.py --seeds 0,1,2
"""
import argparse

import numpy as np

from sghmm.experiments import fig3_run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--T", type=int, default=20_000)
    ap.add_argument("--T-test", type=int, default=2_000)
    args = ap.parse_args()

    Ks = (1, 2, 3, 4)
    for seed in (int(s) for s in args.seeds.split(",")):
        scores = fig3_run(T=args.T, T_test=args.T_test, seed=seed, Ks=Ks)
        print(f"seed {seed}")
        for fam in ("lognormal", "gaussian"):
            vals = np.array([scores[(fam, K)] for K in Ks])
            best = Ks[int(np.argmax(vals))]
            cells = "  ".join(f"K={K}: {v:10.1f}" for K, v in zip(Ks, vals))
            print(f"  {fam:>9}  {cells}   best K={best}   spread over K>=2: {vals[1:].max() - vals[1:].min():.2f}")


if __name__ == "__main__":
    main()
