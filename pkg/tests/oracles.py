"""Independent reference computations: path enumeration and finite differences."""
import itertools

import numpy as np
from scipy.special import logsumexp


def path_log_probs(A, pi0, logp):
    """ln p(x_{-1}, x_0..x_{T-1}, y) for every state path, by enumeration."""
    T, K = logp.shape
    with np.errstate(divide="ignore"):
        lA = np.log(A)
        lpi = np.log(pi0)
    out = {}
    for path in itertools.product(range(K), repeat=T + 1):
        lp = lpi[path[0]]
        for t in range(T):
            lp += lA[path[t + 1], path[t]] + logp[t, path[t + 1]]
        out[path] = lp
    return out


def brute_log_likelihood(A, pi0, logp):
    return float(logsumexp(list(path_log_probs(A, pi0, logp).values())))


def brute_filter(A, pi0, logp, t):
    """p(state that emitted y[t-1] | y[:t]); pi0 when t = 0."""
    if t == 0:
        return np.asarray(pi0, dtype=float)
    K = len(pi0)
    paths = path_log_probs(A, pi0, logp[:t])
    w = np.full(K, -np.inf)
    for path, lp in paths.items():
        w[path[-1]] = np.logaddexp(w[path[-1]], lp)
    return np.exp(w - logsumexp(w))


def brute_backward(A, logp):
    """Vector i -> p(y[0:n] | state before y[0] = i) by enumeration."""
    n, K = logp.shape
    out = np.empty(K)
    for i in range(K):
        e = np.zeros(K)
        e[i] = 1.0
        out[i] = np.exp(brute_log_likelihood(A, e, logp)) if n else 1.0
    return out


def brute_k_step(A, pi0, logp, t, k):
    """ln p(y[t:t+k] | y[:t]) from the enumerated filter and enumerated futures."""
    f = brute_filter(A, pi0, logp, t)
    return brute_log_likelihood(A, f, logp[t : t + k]) if k else 0.0


def central_diff(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))
