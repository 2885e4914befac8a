"""SO(2,1) gauge fields in a rotation-boost-boost chart.

A group element is stored through three per-node parameters
(theta, phi1, phi2) as b = R(theta) B1(phi1) B2(phi2), where R rotates in
the (1,2) plane and Bk is the hyperbolic boost mixing direction k with the
timelike direction 3.  The chart covers the identity component; the
extraction below inverts it from the last matrix row, which is always
future-pointing there.  Rebuilding b from parameters keeps b^T eta b = eta
at rounding level, so group membership never drifts across iterations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frame import ETA
from .grid import Grid

RAPIDITY_LIMIT = 10.0


def rotation(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    out = np.zeros(theta.shape + (3, 3))
    c, s = np.cos(theta), np.sin(theta)
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    out[..., 2, 2] = 1.0
    return out


def boost1(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    out = np.zeros(phi.shape + (3, 3))
    ch, sh = np.cosh(phi), np.sinh(phi)
    out[..., 0, 0] = ch
    out[..., 0, 2] = sh
    out[..., 1, 1] = 1.0
    out[..., 2, 0] = sh
    out[..., 2, 2] = ch
    return out


def boost2(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    out = np.zeros(phi.shape + (3, 3))
    ch, sh = np.cosh(phi), np.sinh(phi)
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = ch
    out[..., 1, 2] = sh
    out[..., 2, 1] = sh
    out[..., 2, 2] = ch
    return out


def so21_from_params(theta, phi1, phi2) -> np.ndarray:
    """R(theta) B1(phi1) B2(phi2); broadcasts over leading axes."""
    return np.einsum(
        "...ij,...jk,...kl->...il", rotation(theta), boost1(phi1), boost2(phi2)
    )


def params_from_matrix(b: np.ndarray) -> tuple:
    """Invert the chart on the identity component.

    The last row of b determines the boosts (it lies on the future unit
    hyperboloid), after which the remaining factor is a plane rotation.
    """
    b = np.asarray(b, dtype=np.float64)
    phi1 = np.arcsinh(b[..., 2, 0])
    phi2 = np.arcsinh(b[..., 2, 1] / np.cosh(phi1))
    rest = np.einsum("...ij,...jk,...kl->...il", b, boost2(-phi2), boost1(-phi1))
    theta = np.arctan2(rest[..., 1, 0], rest[..., 0, 0])
    return theta, phi1, phi2


def so21_algebra(a, c, d) -> np.ndarray:
    """eta-antisymmetric generator with entries beta^1_2=a, beta^1_3=c, beta^2_3=d."""
    a = np.asarray(a, dtype=np.float64)
    out = np.zeros(a.shape + (3, 3))
    out[..., 0, 1] = a
    out[..., 1, 0] = -a
    out[..., 0, 2] = c
    out[..., 2, 0] = c
    out[..., 1, 2] = d
    out[..., 2, 1] = d
    return out


def so21_exp(beta: np.ndarray) -> np.ndarray:
    """Closed-form exponential of an so(2,1) generator.

    Generators satisfy beta^3 = -q beta with q = a^2 - c^2 - d^2, so the
    exponential collapses to I + k1(q) beta + k2(q) beta^2 with the
    trigonometric/hyperbolic coefficient pair picked by the sign of q.
    """
    beta = np.asarray(beta, dtype=np.float64)
    a = beta[..., 0, 1]
    c = beta[..., 0, 2]
    d = beta[..., 1, 2]
    q = a * a - c * c - d * d

    k1 = np.empty_like(q)
    k2 = np.empty_like(q)
    small = np.abs(q) < 1e-8
    qs = np.where(small, 0.0, q)
    with np.errstate(invalid="ignore", divide="ignore"):
        pos = q >= 0
        root = np.sqrt(np.abs(qs))
        k1 = np.where(pos, np.sin(root) / np.where(root == 0, 1.0, root),
                      np.sinh(root) / np.where(root == 0, 1.0, root))
        k2 = np.where(pos, (1.0 - np.cos(root)), (1.0 - np.cosh(root))) / np.where(qs == 0, 1.0, qs)
    # series fallback near q = 0 (both branches share it)
    k1 = np.where(small, 1.0 - q / 6.0 + q * q / 120.0, k1)
    k2 = np.where(small, 0.5 - q / 24.0 + q * q / 720.0, k2)

    eye = np.broadcast_to(np.eye(3), beta.shape)
    beta2 = np.einsum("...ij,...jk->...ik", beta, beta)
    return eye + k1[..., None, None] * beta + k2[..., None, None] * beta2


def group_defect(b: np.ndarray) -> float:
    """max-norm of b^T eta b - eta over all leading axes."""
    gram = np.einsum("...ji,jk,...kl->...il", b, ETA, b)
    return float(np.max(np.abs(gram - ETA)))


@dataclass(frozen=True)
class GaugeField:
    """Per-node SO(2,1) element in the rotation-boost-boost chart."""

    grid: Grid
    theta: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray

    def __post_init__(self):
        for name in ("theta", "phi1", "phi2"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != self.grid.shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {self.grid.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def identity(cls, grid: Grid) -> "GaugeField":
        zero = np.zeros(grid.shape)
        return cls(grid, zero, zero.copy(), zero.copy())

    @classmethod
    def from_matrix(cls, grid: Grid, b: np.ndarray) -> "GaugeField":
        theta, phi1, phi2 = params_from_matrix(b)
        return cls(grid, theta, phi1, phi2)

    def matrix(self) -> np.ndarray:
        return so21_from_params(self.theta, self.phi1, self.phi2)

    def max_rapidity(self) -> float:
        return float(max(np.max(np.abs(self.phi1)), np.max(np.abs(self.phi2))))
