"""Synthetic benchmark HMMs: diagonally dominant, reversed cycles, log-normal, segmentation."""
from __future__ import annotations

import hashlib

import numpy as np

from .emissions import GaussianEmission, LogNormalEmission
from .exceptions import ValidationError
from .hmm import HmmParams, simulate

# Rows are destinations, columns are sources: A[i, j] = Pr(next = i | current = j).
A_DD = np.array(
    [
        [0.999, 0.001, 0, 0, 0, 0, 0, 0],
        [0, 0.999, 0.001, 0, 0, 0, 0, 0],
        [0, 0, 0.999, 0.001, 0, 0, 0, 0],
        [0, 0, 0, 0.999, 0.001, 0, 0, 0],
        [0, 0, 0, 0, 0.999, 0.001, 0, 0],
        [0, 0, 0, 0, 0, 0.999, 0.001, 0],
        [0, 0, 0, 0, 0, 0, 0.999, 0.001],
        [0.001, 0, 0, 0, 0, 0, 0, 0.999],
    ]
)
MU_DD = np.array([(0, 20), (20, 0), (-30, -30), (30, -30), (-20, 0), (0, -20), (30, 30), (-30, 30)], dtype=float)
SIGMA_DD = 1.0

A_RC = np.array(
    [
        [0.01, 0, 0.85, 0, 0, 0, 0, 1],
        [0.99, 0.01, 0, 0, 0, 0, 0, 0],
        [0, 0.99, 0, 0, 0, 0, 0, 0],
        [0, 0, 0.15, 0, 0, 0, 0, 0],
        [0, 0, 0, 1, 0.01, 0, 0.85, 0],
        [0, 0, 0, 0, 0.99, 0.01, 0, 0],
        [0, 0, 0, 0, 0, 0.99, 0, 0],
        [0, 0, 0, 0, 0, 0, 0.15, 0],
    ]
)
MU_RC = np.array([(-50, 0), (30, -30), (30, 30), (-100, -10), (40, -40), (-65, 0), (40, 40), (100, 10)], dtype=float)
SIGMA_RC = 20.0

A_LOGNORMAL = np.array([[0.1, 0.9], [0.9, 0.1]])
MU_LOGNORMAL = (0.0, 4.0)
SIGMA_LOGNORMAL = (2.0, 2.0)

# 1-d sticky three-level switching signal standing in for a channel recording.
A_SEGMENT = np.array([[0.995, 0.004, 0.001], [0.004, 0.99, 0.004], [0.001, 0.006, 0.995]])
MU_SEGMENT = (-1.0, 0.0, 1.2)
SIGMA_SEGMENT = (0.15, 0.2, 0.15)

KINDS = ("dd", "rc", "lognormal", "segment")


def constants_checksum():
    """sha256 over the printed benchmark constants, for drift detection."""
    h = hashlib.sha256()
    for arr in (A_DD, MU_DD, A_RC, MU_RC, A_LOGNORMAL, np.array(MU_LOGNORMAL), np.array(SIGMA_LOGNORMAL)):
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    h.update(np.array([SIGMA_DD, SIGMA_RC], dtype="<f8").tobytes())
    return h.hexdigest()


def _column_normalized(A, name):
    colsum = A.sum(axis=0)
    adjust = float(np.max(np.abs(colsum - 1.0)))
    if adjust > 1e-12:
        raise ValidationError(f"{name} columns deviate from 1 by {adjust:g}")
    return A / colsum


def true_params(kind) -> HmmParams:
    kind = kind.lower()
    if kind == "dd":
        A = _column_normalized(A_DD, "A_DD")
        em = [GaussianEmission(m, SIGMA_DD * np.eye(2)) for m in MU_DD]
    elif kind == "rc":
        A = _column_normalized(A_RC, "A_RC")
        em = [GaussianEmission(m, SIGMA_RC * np.eye(2)) for m in MU_RC]
    elif kind == "lognormal":
        A = A_LOGNORMAL
        em = [LogNormalEmission(m, s) for m, s in zip(MU_LOGNORMAL, SIGMA_LOGNORMAL)]
    elif kind == "segment":
        A = A_SEGMENT / A_SEGMENT.sum(axis=0)
        em = [GaussianEmission([m], [[s * s]]) for m, s in zip(MU_SEGMENT, SIGMA_SEGMENT)]
    else:
        raise ValidationError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    K = A.shape[0]
    return HmmParams(A, em, np.full(K, 1.0 / K))


def make_dataset(kind, T, seed):
    """Simulate ``T`` observations from a benchmark model; returns (y, params)."""
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    params = true_params(kind)
    y, _ = simulate(params, T, seed)
    return y, params
