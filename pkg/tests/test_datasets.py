import numpy as np
import pytest

from sghmm.datasets import (
    A_DD,
    A_RC,
    KINDS,
    MU_DD,
    MU_RC,
    constants_checksum,
    make_dataset,
    true_params,
)
from sghmm.emissions import LogNormalEmission
from sghmm.exceptions import ValidationError


def test_constants_frozen():
    assert constants_checksum() == "c5e68c6882735e940f26b08af833cf540e977d4783e1743bde65d516c69c32ad"


def test_dd_layout():
    assert A_DD[0, 0] == 0.999 and A_DD[0, 1] == 0.001
    np.testing.assert_allclose(A_DD.sum(axis=0), 1.0)
    assert np.all(np.diag(A_DD) == 0.999)
    assert MU_DD.shape == (8, 2)


def test_rc_layout():
    # state 0 lingers with .01 and otherwise moves to state 1
    assert A_RC[0, 0] == 0.01 and A_RC[1, 0] == 0.99
    # the two branch points split .85 / .15
    assert A_RC[0, 2] == 0.85 and A_RC[3, 2] == 0.15
    assert A_RC[4, 6] == 0.85 and A_RC[7, 6] == 0.15
    np.testing.assert_allclose(A_RC.sum(axis=0), 1.0)
    assert MU_RC.shape == (8, 2)


def test_lognormal_constants():
    p = true_params("lognormal")
    assert p.K == 2
    np.testing.assert_allclose(p.A, [[0.1, 0.9], [0.9, 0.1]])
    assert all(isinstance(e, LogNormalEmission) for e in p.emissions)
    assert [(e.mu, e.sigma) for e in p.emissions] == [(0.0, 2.0), (4.0, 2.0)]


@pytest.mark.parametrize("kind", KINDS)
def test_make_dataset_deterministic(kind):
    y1, p = make_dataset(kind, 300, 5)
    y2, _ = make_dataset(kind, 300, 5)
    np.testing.assert_array_equal(y1.data, y2.data)
    assert len(y1) == 300 and y1.d == p.emissions[0].d
    if kind == "lognormal":
        assert np.all(y1.data > 0)


def test_bad_requests():
    with pytest.raises(ValidationError):
        make_dataset("dd", 0, 0)
    with pytest.raises(ValidationError):
        true_params("spiral")
