from __future__ import annotations

import math

import numpy as np
import pytest

from lordiag.frame import ETA
from lordiag.grid import Grid
from lordiag.so21 import (
    GaugeField,
    group_defect,
    params_from_matrix,
    so21_algebra,
    so21_exp,
    so21_from_params,
)


def series_exp(mat, terms=20):
    """Truncated matrix exponential, the independent oracle for boosts."""
    out = np.eye(3)
    term = np.eye(3)
    for n in range(1, terms):
        term = term @ mat / n
        out = out + term
    return out


def test_zero_params_give_identity():
    assert np.array_equal(so21_from_params(0.0, 0.0, 0.0), np.eye(3))


def test_quarter_rotation():
    b = so21_from_params(math.pi / 2, 0.0, 0.0)
    expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(b, expected, atol=1e-15)


def test_pure_boost_matches_series_exponential():
    b = so21_from_params(0.0, 0.7, 0.0)
    ch, sh = math.cosh(0.7), math.sinh(0.7)
    expected = np.array([[ch, 0.0, sh], [0.0, 1.0, 0.0], [sh, 0.0, ch]])
    assert np.allclose(b, expected, rtol=1e-15)
    oracle = series_exp(so21_algebra(0.0, 0.7, 0.0))
    assert np.allclose(b, oracle, atol=1e-14)


def test_group_membership_for_random_params():
    rng = np.random.default_rng(3)
    theta = rng.uniform(-math.pi, math.pi, size=50)
    phi1 = rng.uniform(-2, 2, size=50)
    phi2 = rng.uniform(-2, 2, size=50)
    b = so21_from_params(theta, phi1, phi2)
    assert group_defect(b) < 1e-12


def test_group_membership_at_larger_rapidity():
    # defect grows like cosh(phi)^2 * eps; stays tiny well past the trust region scale
    rng = np.random.default_rng(4)
    b = so21_from_params(rng.uniform(-3, 3, 50), rng.uniform(-5, 5, 50), rng.uniform(-5, 5, 50))
    assert group_defect(b) < 1e-7


def test_chart_inversion_round_trip():
    rng = np.random.default_rng(5)
    theta = rng.uniform(-3.0, 3.0, size=100)
    phi1 = rng.uniform(-3.0, 3.0, size=100)
    phi2 = rng.uniform(-3.0, 3.0, size=100)
    t2, p1, p2 = params_from_matrix(so21_from_params(theta, phi1, phi2))
    assert np.max(np.abs(t2 - theta)) < 1e-10
    assert np.max(np.abs(p1 - phi1)) < 1e-10
    assert np.max(np.abs(p2 - phi2)) < 1e-10


def test_closed_form_exp_matches_series():
    rng = np.random.default_rng(9)
    for _ in range(25):
        a, c, d = rng.uniform(-1.5, 1.5, size=3)
        beta = so21_algebra(a, c, d)
        assert np.allclose(so21_exp(beta), series_exp(beta, terms=30), atol=1e-12)


def test_closed_form_exp_near_null_generator():
    # q = a^2 - c^2 - d^2 close to zero exercises the series fallback
    beta = so21_algebra(1.0, 1.0, 1e-6)
    assert np.allclose(so21_exp(beta), series_exp(beta, terms=30), atol=1e-12)
    beta = so21_algebra(1.0, 1.0, 0.0)
    assert np.allclose(so21_exp(beta), series_exp(beta, terms=30), atol=1e-12)


def test_exp_lands_in_group_and_composes():
    rng = np.random.default_rng(13)
    b = so21_from_params(0.3, -0.2, 0.9)
    for _ in range(10):
        beta = so21_algebra(*rng.uniform(-0.5, 0.5, size=3))
        b = so21_exp(beta) @ b
        assert group_defect(b) < 1e-12


def test_gauge_field_identity_and_rebuild():
    grid = Grid.box(((0.0, 1.0),) * 3, 9)
    gf = GaugeField.identity(grid)
    assert np.allclose(gf.matrix(), np.eye(3), atol=0)
    assert gf.max_rapidity() == 0.0
    rng = np.random.default_rng(17)
    theta = rng.uniform(-1, 1, grid.shape)
    phi1 = rng.uniform(-1, 1, grid.shape)
    phi2 = rng.uniform(-1, 1, grid.shape)
    gf2 = GaugeField(grid, theta, phi1, phi2)
    rebuilt = GaugeField.from_matrix(grid, gf2.matrix())
    assert np.max(np.abs(rebuilt.theta - theta)) < 1e-11
    assert group_defect(rebuilt.matrix()) < 1e-12


def test_gauge_field_shape_validation():
    grid = Grid.box(((0.0, 1.0),) * 3, 9)
    with pytest.raises(ValueError, match="shape"):
        GaugeField(grid, np.zeros((3, 3, 3)), np.zeros(grid.shape), np.zeros(grid.shape))


def test_eta_antisymmetry_of_algebra():
    beta = so21_algebra(0.4, -1.2, 0.7)
    assert np.max(np.abs(beta.T @ ETA + ETA @ beta)) == 0.0
