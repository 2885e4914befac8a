"""Lorentz-orthonormal frames, dual coframes, and connection 1-forms.

Conventions fixed throughout the package: the frame metric is
eta = diag(1, 1, -1) with the third frame direction timelike; frames are
built deterministically by Gram-Schmidt on d/dy1, d/dy2 (spacelike first)
completed by the timelike direction, whose d/dy3 component is kept
positive.  Connection forms follow d(omega^i) = sum_j omega^j ^ omega^i_j
with the metric-compatibility pattern

    omega^2_1 = -omega^1_2,   omega^3_1 = omega^1_3,   omega^3_2 = omega^2_3,

so only the (1,2), (1,3), (2,3) entries are stored; the rest expand by rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    Grid,
    MetricField,
    OneFormField,
    TwoFormField,
    VectorField,
    ext_d,
    wedge,
)

ETA = np.diag([1.0, 1.0, -1.0])
ETA_DIAG = np.array([1.0, 1.0, -1.0])

PIVOT_FLOOR = 1e-10


class FrameError(ValueError):
    def __init__(self, message: str, node: tuple):
        super().__init__(f"{message} at node {node}")
        self.node = node


def _first_bad(mask: np.ndarray) -> tuple:
    return tuple(int(i) for i in np.argwhere(mask)[0])


@dataclass(frozen=True)
class OrthonormalFrame:
    """Three vector fields with g(e_i, e_j) = eta_ij (e_3 timelike)."""

    vectors: tuple  # three VectorField

    @property
    def grid(self) -> Grid:
        return self.vectors[0].grid

    def matrix(self) -> np.ndarray:
        """(...,3,3) array E with E[...,i,alpha] the alpha-component of e_i."""
        return np.stack([v.comp for v in self.vectors], axis=-2)

    @classmethod
    def from_matrix(cls, grid: Grid, emat: np.ndarray) -> "OrthonormalFrame":
        return cls(tuple(VectorField(grid, emat[..., i, :]) for i in range(3)))


@dataclass(frozen=True)
class Coframe:
    """Three 1-form fields dual to an orthonormal frame."""

    forms: tuple  # three OneFormField

    @property
    def grid(self) -> Grid:
        return self.forms[0].grid

    def matrix(self) -> np.ndarray:
        """(...,3,3) array W with W[...,i,alpha] the dy^alpha component of omega^i."""
        return np.stack([f.comp for f in self.forms], axis=-2)

    @classmethod
    def from_matrix(cls, grid: Grid, wmat: np.ndarray) -> "Coframe":
        return cls(tuple(OneFormField(grid, wmat[..., i, :]) for i in range(3)))


def lorentz_gram_schmidt(g: MetricField) -> OrthonormalFrame:
    """Deterministic orthonormal frame for a (+,+,-) metric.

    Orthonormalizes d/dy1 then d/dy2 (both must come out spacelike) and
    completes with the timelike direction; raises FrameError with the first
    offending node on a signature failure or a near-degenerate pivot.
    """
    gm = g.comp
    shape = g.grid.shape

    def inner(u, v):
        return np.einsum("...ij,...i,...j->...", gm, u, v)

    basis = np.zeros(shape + (3, 3))
    for al in range(3):
        basis[..., al, al] = 1.0

    frame = np.empty(shape + (3, 3))
    u1 = basis[..., 0, :]
    p1 = inner(u1, u1)
    if np.any(p1 <= 0):
        raise FrameError("signature failure: d/dy1 is not spacelike", _first_bad(p1 <= 0))
    if np.any(p1 < PIVOT_FLOOR):
        raise FrameError("near-degenerate pivot on direction 1", _first_bad(p1 < PIVOT_FLOOR))
    frame[..., 0, :] = u1 / np.sqrt(p1)[..., None]

    u2 = basis[..., 1, :] - inner(basis[..., 1, :], frame[..., 0, :])[..., None] * frame[..., 0, :]
    p2 = inner(u2, u2)
    if np.any(p2 <= 0):
        raise FrameError("signature failure: reduced d/dy2 is not spacelike", _first_bad(p2 <= 0))
    if np.any(p2 < PIVOT_FLOOR):
        raise FrameError("near-degenerate pivot on direction 2", _first_bad(p2 < PIVOT_FLOOR))
    frame[..., 1, :] = u2 / np.sqrt(p2)[..., None]

    u3 = basis[..., 2, :]
    u3 = u3 - inner(u3, frame[..., 0, :])[..., None] * frame[..., 0, :]
    u3 = u3 - inner(u3, frame[..., 1, :])[..., None] * frame[..., 1, :]
    p3 = inner(u3, u3)
    if np.any(p3 >= 0):
        raise FrameError("signature failure: completed direction is not timelike", _first_bad(p3 >= 0))
    if np.any(p3 > -PIVOT_FLOOR):
        raise FrameError("near-degenerate pivot on direction 3", _first_bad(p3 > -PIVOT_FLOOR))
    e3 = u3 / np.sqrt(-p3)[..., None]
    # Gram-Schmidt leaves the d/dy3 component positive; keep it that way.
    flip = e3[..., 2] < 0
    e3 = np.where(flip[..., None], -e3, e3)
    frame[..., 2, :] = e3

    return OrthonormalFrame.from_matrix(g.grid, frame)


def dual_coframe(frame: OrthonormalFrame) -> Coframe:
    """Per-node inverse-transpose of the frame component matrix."""
    emat = frame.matrix()
    det = np.linalg.det(emat)
    singular = np.abs(det) < 1e-14
    if np.any(singular):
        raise FrameError("singular frame matrix", _first_bad(singular))
    wmat = np.linalg.inv(np.swapaxes(emat, -1, -2))
    return Coframe.from_matrix(frame.grid, wmat)


def frame_of_coframe(coframe: Coframe) -> OrthonormalFrame:
    """Frame dual to a coframe (inverse-transpose of the component matrix)."""
    wmat = coframe.matrix()
    det = np.linalg.det(wmat)
    singular = np.abs(det) < 1e-14
    if np.any(singular):
        raise FrameError("singular coframe matrix", _first_bad(singular))
    emat = np.linalg.inv(np.swapaxes(wmat, -1, -2))
    return OrthonormalFrame.from_matrix(coframe.grid, emat)


@dataclass(frozen=True)
class ConnectionForms:
    """Connection 1-forms of an orthonormal coframe, stored as the three
    independent entries; all others expand by the symmetry rule."""

    omega12: OneFormField
    omega13: OneFormField
    omega23: OneFormField

    @property
    def grid(self) -> Grid:
        return self.omega12.grid

    def form(self, i: int, j: int) -> OneFormField:
        """Entry omega^i_j (0-based indices), expanded by rule."""
        grid = self.grid
        table = {
            (0, 1): (1.0, self.omega12),
            (1, 0): (-1.0, self.omega12),
            (0, 2): (1.0, self.omega13),
            (2, 0): (1.0, self.omega13),
            (1, 2): (1.0, self.omega23),
            (2, 1): (1.0, self.omega23),
        }
        if i == j:
            return OneFormField(grid, np.zeros(grid.shape + (3,)))
        sign, base = table[(i, j)]
        return base if sign > 0 else OneFormField(grid, -base.comp)

    def independent(self) -> tuple:
        return (self.omega12, self.omega13, self.omega23)


def structure_coefficients(coframe: Coframe, frame: OrthonormalFrame) -> np.ndarray:
    """c[...,i,j,k] = (d omega^i)(e_j, e_k), antisymmetric in (j,k)."""
    emat = frame.matrix()
    shape = coframe.grid.shape
    c = np.zeros(shape + (3, 3, 3))
    d_forms = [ext_d(f).comp for f in coframe.forms]
    for j in range(3):
        for k in range(j + 1, 3):
            cross = np.cross(emat[..., j, :], emat[..., k, :])
            for i in range(3):
                val = np.einsum("...a,...a->...", d_forms[i], cross)
                c[..., i, j, k] = val
                c[..., i, k, j] = -val
    return c


def connection_from_structure(c: np.ndarray) -> np.ndarray:
    """Solve the first structure equation under the eta-symmetry pattern.

    Input c[...,i,j,k] are the coefficients of d(omega^i) on the frame;
    output gamma[...,p,q,r] are the components of omega^p_r along omega^q.
    The combination below is the unique torsion-free, eta-compatible
    resolution of the structure coefficients.
    """
    clow = ETA_DIAG[:, None, None] * c
    gamma_low = 0.5 * (
        np.einsum("...qrp->...pqr", clow)
        - np.einsum("...rpq->...pqr", clow)
        - clow
    )
    return ETA_DIAG[:, None, None] * gamma_low


def connection_forms(coframe: Coframe) -> ConnectionForms:
    """Connection 1-forms solving the first structure equation."""
    frame = frame_of_coframe(coframe)
    c = structure_coefficients(coframe, frame)
    gamma = connection_from_structure(c)
    wmat = coframe.matrix()
    grid = coframe.grid

    def entry(i, j):
        comp = np.einsum("...q,...qa->...a", gamma[..., i, :, j], wmat)
        return OneFormField(grid, comp)

    return ConnectionForms(omega12=entry(0, 1), omega13=entry(0, 2), omega23=entry(1, 2))


def structure_residual(coframe: Coframe, conn: ConnectionForms) -> np.ndarray:
    """Max-norm per i of d(omega^i) - sum_j omega^j ^ omega^i_j."""
    out = np.zeros(3)
    for i in range(3):
        resid = ext_d(coframe.forms[i]).comp.copy()
        for j in range(3):
            if i == j:
                continue
            resid -= wedge(coframe.forms[j], conn.form(i, j)).comp
        out[i] = np.max(np.abs(resid))
    return out


def christoffel_oracle(g: MetricField) -> np.ndarray:
    """Coordinate Christoffel symbols Gamma^a_bc by central differences.

    Independent validation route for connection_forms; all derivatives are
    finite differences of the sampled metric.
    """
    grid = g.grid
    ginv = g.inverse()
    dg = np.stack(
        [np.gradient(g.comp, grid.spacing[al], axis=al, edge_order=2) for al in range(3)],
        axis=-3,
    )  # dg[..., beta, i, j] = d_beta g_ij
    # 0.5 * g^{ad} (d_b g_{dc} + d_c g_{db} - d_d g_{bc})
    term = (
        np.einsum("...bdc->...dbc", dg)
        + np.einsum("...cdb->...dbc", dg)
        - dg
    )
    return 0.5 * np.einsum("...ad,...dbc->...abc", ginv, term)


def connection_forms_from_christoffel(
    g: MetricField, frame: OrthonormalFrame, coframe: Coframe
) -> ConnectionForms:
    """Frame-index connection forms assembled from the Christoffel oracle.

    Uses omega^k_j(v) = omega^k(nabla_v e_j) with nabla from christoffel_oracle
    and frame derivatives by central differences; this is the independent
    route against which connection_forms is validated.
    """
    grid = g.grid
    gamma = christoffel_oracle(g)
    emat = frame.matrix()
    wmat = coframe.matrix()
    dE = np.stack(
        [np.gradient(emat, grid.spacing[al], axis=al, edge_order=2) for al in range(3)],
        axis=-3,
    )  # dE[..., beta, j, alpha]
    # conn[..., k, j, beta] = W[k,a] (d_beta E[j,a] + Gamma^a_{beta c} E[j,c])
    covar = np.einsum("...bja->...jab", dE) + np.einsum("...abc,...jc->...jab", gamma, emat)
    conn = np.einsum("...ka,...jab->...kjb", wmat, covar)

    def entry(i, j):
        return OneFormField(grid, conn[..., i, j, :])

    return ConnectionForms(omega12=entry(0, 1), omega13=entry(0, 2), omega23=entry(1, 2))


def frame_orthonormality_defect(g: MetricField, frame: OrthonormalFrame) -> float:
    """max over nodes and (i,j) of |g(e_i,e_j) - eta_ij|."""
    emat = frame.matrix()
    gram = np.einsum("...ia,...ab,...jb->...ij", emat, g.comp, emat)
    return float(np.max(np.abs(gram - ETA)))
