"""Per-iteration cost of full-gradient vs minibatch updates against the operation-count prediction.

    python3 scripts/speedup.py
"""
import argparse

from sghmm.datasets import make_dataset
from sghmm.experiments import per_iteration_times
from sghmm.samplers import SamplerConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--T", type=int, default=50_000)
    ap.add_argument("--sg-iter", type=int, default=100)
    ap.add_argument("--batch-iter", type=int, default=3)
    args = ap.parse_args()

    y, _ = make_dataset("dd", args.T, 0)
    print(f"{'L':>3} {'|S|':>4} {'B':>3} {'sg ms':>8} {'batch ms':>9} {'ratio':>7} {'predicted':>9}")
    for L, S, B in [(2, 10, 2), (2, 10, 8), (2, 10, 20), (5, 4, 8), (5, 4, 20)]:
        cfg = SamplerConfig(K=8, L=L, n_windows=S, step_size=1e-4, emission_step_size=1e-5)
        r = per_iteration_times(y, cfg, args.sg_iter, args.batch_iter, B=B)
        pred = len(y) / (S * (2 * L + 1 + 2 * B))
        print(f"{L:>3} {S:>4} {B:>3} {r['sg_ms']:>8.2f} {r['batch_ms']:>9.0f} {r['ratio']:>7.0f} {pred:>9.0f}")


if __name__ == "__main__":
    main()
