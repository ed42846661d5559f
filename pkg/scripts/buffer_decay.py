"""Boundary-message error against buffer length, with the fitted slope and the Lyapunov estimate.

    python3 scripts/buffer_decay.py
"""
import numpy as np

from sghmm.experiments import decay_fit, inflated_instance
from sghmm.hmm import simulate

# Emission covariances are inflated so that the error stays above machine
# precision for several buffer steps; the benchmark covariances forget in 1-2 steps.
SETUPS = [("dd", 200.0, 2, range(0, 13)), ("rc", 20.0, 5, range(0, 7))]


def main():
    for kind, scale, L, Bs in SETUPS:
        p = inflated_instance(kind, scale)
        y, _ = simulate(p, 20_000, 0)
        r = decay_fit(p, y, L, list(Bs))
        print(f"{kind} (covariance x{scale:g}, L={L})")
        for B, e, used in zip(r["B"], r["log_error"], r["used"]):
            print(f"  B={B:2d}  mean ln error {e:9.2f}{'' if used else '  (below floor)'}")
        lam = r["lyapunov"]
        print(f"  slope {r['slope']:.3f} (r2 {r['r2']:.3f})  exponent {lam.exponent:.3f} +- {lam.std_error:.3f}")
        print(f"  ratio {abs(r['slope']) / abs(lam.exponent):.2f}")


if __name__ == "__main__":
    main()
