"""Gauge solve: rotate a reference coframe until it satisfies the
integrability system.

The unknown is an SO(2,1)-valued field b acting on a fixed orthonormal
coframe, omega^i = b^i_j obar^j.  The three residuals are the volume
coefficients of

    omega^1 ^ omega^2 ^ omega^1_2,
    omega^2 ^ omega^3 ^ omega^2_3,
    omega^1 ^ omega^3 ^ omega^1_3,

with the connection entries of the rotated coframe re-derived from the
first structure equation: d(omega^i) is expanded through the frame
derivatives of b and the reference connection, evaluated on the rotated
frame, and resolved by the eta-symmetric combination (antisymmetric in the
rotation entry, symmetric in the two boost entries).  Every step of the
assembly is smooth pointwise algebra on top of linear difference stencils,
so the exact directional derivative is available by the product rule; the
Picard sweep drops its zero-order terms and transports each so(2,1)
increment entry along its own frame direction, outward from the Cauchy
surface, updating b by a group exponential on the left.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .frame import (
    ConnectionForms,
    Coframe,
    OrthonormalFrame,
    connection_from_structure,
    connection_forms,
    dual_coframe,
    lorentz_gram_schmidt,
)
from .grid import Grid, MetricField, OneFormField, ScalarField, VectorField, ext_d
from .so21 import (
    ETA,
    GaugeField,
    RAPIDITY_LIMIT,
    group_defect,
    so21_algebra,
    so21_exp,
)
from .transport import CauchySurface, TransversalityReport, solve_transport, transversality_check

ETA_DIAG = np.array([1.0, 1.0, -1.0])


class SolverDivergence(RuntimeError):
    pass


class TrustRegionError(RuntimeError):
    pass


def worker_cap(default: int = 1) -> int:
    """Worker-thread cap from LORDIAG_THREADS (>=1, at most one per equation).

    The three transports are independent and can run on a thread pool, but
    the march kernel is made of many small array operations that hold the
    GIL, so threading pays off only on large grids; the default is a single
    worker and LORDIAG_THREADS raises the cap explicitly.
    """
    raw = os.environ.get("LORDIAG_THREADS", "")
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"LORDIAG_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"LORDIAG_THREADS must be >= 1, got {value}")
    return min(3, value)


@dataclass(frozen=True)
class BaseGeometry:
    """Reference structures of a metric, computed once per problem."""

    metric: MetricField
    frame: OrthonormalFrame
    coframe: Coframe
    connection: ConnectionForms
    dcoframe: np.ndarray  # (...,3,3): 2-form components of d(obar^j)

    @property
    def grid(self) -> Grid:
        return self.metric.grid


def base_geometry(g: MetricField) -> BaseGeometry:
    frame = lorentz_gram_schmidt(g)
    coframe = dual_coframe(frame)
    conn = connection_forms(coframe)
    dco = np.stack([ext_d(f).comp for f in coframe.forms], axis=-2)
    return BaseGeometry(metric=g, frame=frame, coframe=coframe, connection=conn, dcoframe=dco)


def gauge_apply(b: GaugeField, base: Coframe) -> Coframe:
    """Rotated coframe omega^i = b^i_j obar^j."""
    wn = np.einsum("...ij,...ja->...ia", b.matrix(), base.matrix())
    return Coframe.from_matrix(base.grid, wn)


def _grad_matrix(grid: Grid, bmat: np.ndarray) -> np.ndarray:
    """dB[..., a, i, j] = d_a b^i_j with the shared 2nd-order stencils."""
    return np.stack(
        [np.gradient(bmat, grid.spacing[al], axis=al, edge_order=2) for al in range(3)],
        axis=-3,
    )


@dataclass
class ResidualBundle:
    """Residuals of the integrability system plus the rotated structures."""

    residuals: tuple  # three (nx,ny,nz) arrays, volume-form coefficients
    coframe_mat: np.ndarray  # rotated coframe rows
    frame_mat: np.ndarray  # rotated frame rows
    volume: np.ndarray  # coefficient of omega^1^omega^2^omega^3 on dy-volume

    def max_interior(self) -> float:
        sl = (slice(1, -1),) * 3
        return max(float(np.max(np.abs(r[sl]))) for r in self.residuals)


def _rotated_structure(base: BaseGeometry, bmat: np.ndarray, dbmat: Optional[np.ndarray] = None):
    """Shared assembly; with dbmat, also propagates the first variation."""
    grid = base.grid
    wbar = base.coframe.matrix()
    ebar = base.frame.matrix()

    binv = np.einsum("ij,...kj,kl->...il", ETA, bmat, ETA)  # eta b^T eta
    wn = np.einsum("...ij,...ja->...ia", bmat, wbar)
    en = np.einsum("...ji,...ja->...ia", binv, ebar)

    dB = _grad_matrix(grid, bmat)  # (...,a,i,j)
    # d(omega^i) = sum_j d(b^i_j) ^ obar^j + b^i_j d(obar^j)
    grad_forms = np.einsum("...aij->...ija", dB)  # (...,i,j,a) 1-form d(b^i_j)
    cross_terms = np.cross(grad_forms, wbar[..., None, :, :], axis=-1)  # (...,i,j,3)
    dwn = cross_terms.sum(axis=-2) + np.einsum("...ij,...ja->...ia", bmat, base.dcoframe)

    pairs = ((0, 1), (0, 2), (1, 2))
    cc = np.zeros(grid.shape + (3, 3, 3))
    cross_en = {}
    for l, m in pairs:
        ce = np.cross(en[..., l, :], en[..., m, :])
        cross_en[(l, m)] = ce
        val = np.einsum("...ia,...a->...i", dwn, ce)
        cc[..., :, l, m] = val
        cc[..., :, m, l] = -val

    gamma = connection_from_structure(cc)
    conn = {
        (i, j): np.einsum("...q,...qa->...a", gamma[..., i, :, j], wn)
        for (i, j) in pairs
    }

    def vol_coeff(i, j, form):
        return np.einsum("...a,...a->...", np.cross(wn[..., i, :], wn[..., j, :]), form)

    residuals = (
        vol_coeff(0, 1, conn[(0, 1)]),
        vol_coeff(1, 2, conn[(1, 2)]),
        vol_coeff(0, 2, conn[(0, 2)]),
    )
    volume = np.einsum("...a,...a->...", np.cross(wn[..., 0, :], wn[..., 1, :]), wn[..., 2, :])

    bundle = ResidualBundle(
        residuals=residuals, coframe_mat=wn, frame_mat=en, volume=volume
    )
    if dbmat is None:
        return bundle, None

    # first variation, product rule through the same pipeline
    d_binv = -np.einsum("...ij,...jk,...kl->...il", binv, dbmat, binv)
    d_wn = np.einsum("...ij,...ja->...ia", dbmat, wbar)
    d_en = np.einsum("...ji,...ja->...ia", d_binv, ebar)
    d_dB = _grad_matrix(grid, dbmat)
    d_grad_forms = np.einsum("...aij->...ija", d_dB)
    d_cross = np.cross(d_grad_forms, wbar[..., None, :, :], axis=-1)
    d_dwn = d_cross.sum(axis=-2) + np.einsum("...ij,...ja->...ia", dbmat, base.dcoframe)

    d_cc = np.zeros(grid.shape + (3, 3, 3))
    for l, m in pairs:
        d_ce = np.cross(d_en[..., l, :], en[..., m, :]) + np.cross(en[..., l, :], d_en[..., m, :])
        val = np.einsum("...ia,...a->...i", d_dwn, cross_en[(l, m)]) + np.einsum(
            "...ia,...a->...i", dwn, d_ce
        )
        d_cc[..., :, l, m] = val
        d_cc[..., :, m, l] = -val

    d_gamma = connection_from_structure(d_cc)
    d_res = []
    for (i, j), (r_i, r_j) in zip(((0, 1), (1, 2), (0, 2)), ((0, 1), (1, 2), (0, 2))):
        d_conn = np.einsum("...q,...qa->...a", d_gamma[..., i, :, j], wn) + np.einsum(
            "...q,...qa->...a", gamma[..., i, :, j], d_wn
        )
        d_pair = np.cross(d_wn[..., r_i, :], wn[..., r_j, :]) + np.cross(
            wn[..., r_i, :], d_wn[..., r_j, :]
        )
        d_res.append(
            np.einsum("...a,...a->...", d_pair, conn[(i, j)])
            + np.einsum("...a,...a->...", np.cross(wn[..., r_i, :], wn[..., r_j, :]), d_conn)
        )
    return bundle, tuple(d_res)


def residual_bundle(base: BaseGeometry, bmat: np.ndarray) -> ResidualBundle:
    bundle, _ = _rotated_structure(base, bmat)
    return bundle


def nonlinear_residual(b: GaugeField, base: BaseGeometry) -> tuple:
    """The three integrability residuals as ScalarFields."""
    bundle = residual_bundle(base, b.matrix())
    return tuple(ScalarField(base.grid, r) for r in bundle.residuals)


def residual_directional_derivative(
    base: BaseGeometry, bmat: np.ndarray, dbmat: np.ndarray
) -> tuple:
    """Exact derivative of the residual triple along the perturbation dbmat.

    The residual map is a composition of linear stencils and pointwise
    smooth algebra, so this is its true Frechet derivative; finite
    differences in the perturbation scale reproduce it to the step's
    truncation error.
    """
    _, deriv = _rotated_structure(base, bmat, dbmat)
    return deriv


@dataclass(frozen=True)
class LinearizedState:
    """Frozen-coefficient transports for the so(2,1) increment.

    Unknowns in order (beta^2_3, beta^1_3, beta^1_2), advected along the
    rotated frame directions e_1, e_2, e_3 respectively; sources carry all
    remaining (zero-order) content of the current residuals.
    """

    directions: tuple  # three VectorField
    sources: tuple  # three ScalarField

    @property
    def grid(self) -> Grid:
        return self.directions[0].grid


# Signs chosen so that + the transported increment cancels the principal
# part of each residual; see the directional-derivative checks.
_SOURCE_SIGNS = (1.0, -1.0, 1.0)  # for (beta23 <- R2, beta13 <- -R3, beta12 <- R1)


def linearize(b: GaugeField, base: BaseGeometry) -> LinearizedState:
    bundle = residual_bundle(base, b.matrix())
    return linearize_bundle(bundle, base.grid)


def linearize_bundle(bundle: ResidualBundle, grid: Grid) -> LinearizedState:
    r1, r2, r3 = bundle.residuals
    en = bundle.frame_mat
    vol = bundle.volume
    directions = tuple(VectorField(grid, en[..., i, :]) for i in range(3))
    sources = (
        ScalarField(grid, _SOURCE_SIGNS[0] * r2 / vol),
        ScalarField(grid, _SOURCE_SIGNS[1] * r3 / vol),
        ScalarField(grid, _SOURCE_SIGNS[2] * r1 / vol),
    )
    return LinearizedState(directions=directions, sources=sources)


@dataclass
class IterationRecord:
    index: int
    res: tuple  # interior max of |R1|, |R2|, |R3|
    max_rapidity: float
    group_defect: float


@dataclass
class SolveResult:
    gauge: GaugeField
    iterations: int
    converged: bool
    stagnated: bool
    residual_max: float
    log: list = field(default_factory=list)
    transversality: Optional[TransversalityReport] = None

    def log_csv(self) -> str:
        lines = ["iteration,res1,res2,res3,max_rapidity,group_defect"]
        for rec in self.log:
            cells = [str(rec.index)] + [f"{v:.17e}" for v in rec.res]
            cells += [f"{rec.max_rapidity:.17e}", f"{rec.group_defect:.17e}"]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def solve_cauchy(
    base: BaseGeometry,
    surface: CauchySurface,
    tol: float = 1e-8,
    max_iter: int = 200,
    trust_region: float = RAPIDITY_LIMIT,
    check_transversality: bool = True,
) -> SolveResult:
    """Picard iteration on the diagonal transports, from b = identity on the
    Cauchy surface.

    Stops on: residual below tol (converged), or a stagnation signal (the
    residual flat on its discretization floor, or no new best iterate for
    twelve iterations); stagnation returns the best iterate seen.  Raises
    SolverDivergence after five consecutive meaningful residual increases
    and TrustRegionError when a boost rapidity leaves the chart's trusted
    range.
    """
    grid = base.grid
    report = None
    if check_transversality:
        report = transversality_check(base.frame, surface)
        report.raise_if_failed()

    gauge = GaugeField.identity(grid)
    log: list = []
    best = (np.inf, gauge)
    increases = 0
    since_best = 0

    for it in range(1, max_iter + 1):
        bmat = gauge.matrix()
        bundle = residual_bundle(base, bmat)
        sl = (slice(1, -1),) * 3
        res = tuple(float(np.max(np.abs(r[sl]))) for r in bundle.residuals)
        r_max = max(res)
        log.append(
            IterationRecord(
                index=it,
                res=res,
                max_rapidity=gauge.max_rapidity(),
                group_defect=group_defect(bmat),
            )
        )

        if r_max < best[0]:
            best = (r_max, gauge)
            since_best = 0
        else:
            since_best += 1
        # count an increase only when clearly above the best floor seen, so
        # rounding-level oscillation at stagnation never reads as divergence
        meaningful = len(log) > 1 and r_max > max(log[-2].res) and r_max > 2.0 * best[0]
        increases = increases + 1 if meaningful else 0

        if r_max < tol:
            return SolveResult(
                gauge=gauge, iterations=it, converged=True, stagnated=False,
                residual_max=r_max, log=log, transversality=report,
            )
        if increases >= 5:
            raise SolverDivergence(
                f"residual increased over five consecutive iterations (now {r_max:.3e})"
            )
        # stagnation: the residual sits flat on its discretization floor, or
        # nothing has improved on the best iterate for a long stretch
        flat = len(log) >= 4 and all(
            abs(max(rec.res) - r_max) <= 5e-3 * max(r_max, 1e-300) for rec in log[-4:]
        )
        if flat or since_best >= 12:
            r_best, g_best = best
            return SolveResult(
                gauge=g_best, iterations=it, converged=False, stagnated=True,
                residual_max=r_best, log=log, transversality=report,
            )

        state = linearize_bundle(bundle, grid)

        def march(k):
            return solve_transport(
                surface, state.directions[k].comp, state.sources[k].data
            ).values

        cap = worker_cap()
        if cap > 1:
            with ThreadPoolExecutor(max_workers=cap) as pool:
                beta23, beta13, beta12 = pool.map(march, range(3))
        else:
            beta23, beta13, beta12 = (march(k) for k in range(3))

        beta = so21_algebra(beta12, beta13, beta23)
        new_mat = np.einsum("...ij,...jk->...ik", so21_exp(beta), bmat)
        gauge = GaugeField.from_matrix(grid, new_mat)
        if gauge.max_rapidity() > trust_region:
            raise TrustRegionError(
                f"boost rapidity {gauge.max_rapidity():.3f} exceeds the trusted range {trust_region}"
            )

    r_best, g_best = best
    return SolveResult(
        gauge=g_best, iterations=max_iter, converged=False, stagnated=False,
        residual_max=r_best, log=log, transversality=report,
    )
