"""First-order upwind transport marched outward from a Cauchy plane.

solve_transport treats the plane's level sets as march slabs: nodes are
grouped into bands of constant signed distance, processed outward from the
seed band on both sides, and each node is updated from its per-axis upwind
neighbors (chosen by the sign of the advection component on that axis).
Where a band couples against the march direction the sweep is repeated;
each pass is a Gauss-Seidel step in slab order, and the monotone stencil
(all weights nonnegative) makes the iteration contract.  Advection fields
whose characteristic leaves the box before reaching the seed are closed
with a zero-gradient ghost at the face they enter through; that face layer
sits inside the one-node boundary rind that reported maxima exclude.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .frame import OrthonormalFrame
from .grid import Grid

try:  # tight sweep kernel; the numpy band loop below is the fallback
    from numba import njit

    @njit(cache=True, nogil=True)
    def _sweep_bands(u, s, den, k0, k1, k2, n0, n1, n2, nodes, offsets):
        for b in range(offsets.size - 1):
            for m in range(offsets[b], offsets[b + 1]):
                n = nodes[m]
                acc = s[n] + k0[n] * u[n0[n]] + k1[n] * u[n1[n]] + k2[n] * u[n2[n]]
                u[n] = acc / den[n]

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is normally present
    _sweep_bands = None
    _HAVE_NUMBA = False

TRANSVERSALITY_THRESHOLD = 0.1
DEN_FLOOR = 1e-12


class TransversalityError(RuntimeError):
    def __init__(self, index: int, value: float):
        super().__init__(
            f"Cauchy surface is tangent to frame direction e_{index + 1}: "
            f"min normalized pairing {value:.3e} <= {TRANSVERSALITY_THRESHOLD}"
        )
        self.index = index
        self.value = value


@dataclass(frozen=True)
class TransversalityReport:
    """Minimum |<ds, e_i>| / |e_i| over the seed nodes, per frame index."""

    minima: tuple  # three floats
    threshold: float = TRANSVERSALITY_THRESHOLD

    @property
    def passed(self) -> bool:
        return min(self.minima) > self.threshold

    @property
    def worst_index(self) -> int:
        return int(np.argmin(self.minima))

    def raise_if_failed(self) -> None:
        if not self.passed:
            i = self.worst_index
            raise TransversalityError(i, float(self.minima[i]))


@dataclass
class MarchProblem:
    """Level structure a transport marches against.

    ``levels`` is any scalar function vanishing on the seed set (signed
    affine value for a plane, distance for a curve); ``grad`` its gradient,
    used to orient the advection away from the seed; bands group nodes by
    quantized level, processed outward.
    """

    grid: Grid
    levels: np.ndarray
    grad: np.ndarray  # (nx,ny,nz,3)
    seed_mask: np.ndarray
    delta: float
    _bands: Optional[list] = field(default=None, repr=False)

    def bands(self) -> list:
        if self._bands is None:
            band_id = np.rint(self.levels / self.delta).astype(np.int64)
            flat_band = band_id.ravel().copy()
            flat_band[self.seed_mask.ravel()] = 0
            order = []
            for bid in sorted(np.unique(flat_band), key=lambda b: (abs(b), b)):
                if bid == 0:
                    continue  # seed band holds fixed data
                order.append(np.nonzero(flat_band == bid)[0])
            self._bands = order
        return self._bands


@dataclass
class CauchySurface:
    """Affine plane {a x + b y + c z = s0} plus the derived march structure."""

    grid: Grid
    normal: tuple
    offset: float
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if all(abs(c) < 1e-300 for c in self.normal):
            raise ValueError("degenerate surface: normal coefficients are all zero")

    @property
    def sigma(self) -> np.ndarray:
        """Signed affine value a x + b y + c z - s0 at every node."""
        if "sigma" not in self._cache:
            xs, ys, zs = self.grid.meshgrid()
            a, b, c = self.normal
            self._cache["sigma"] = a * xs + b * ys + c * zs - self.offset
        return self._cache["sigma"]

    @property
    def seed_mask(self) -> np.ndarray:
        """Nodes within h/2 (Euclidean) of the plane; the Cauchy data set."""
        if "seed" not in self._cache:
            norm = float(np.linalg.norm(self.normal))
            h = max(self.grid.spacing)
            mask = np.abs(self.sigma) / norm <= 0.5 * h
            if not mask.any():
                raise ValueError("no grid nodes within h/2 of the Cauchy surface")
            self._cache["seed"] = mask
        return self._cache["seed"]

    def march_problem(self) -> MarchProblem:
        if "march" not in self._cache:
            spacing = self.grid.spacing
            steps = [abs(n) * h for n, h in zip(self.normal, spacing) if abs(n) * h > 0]
            grad = np.broadcast_to(
                np.asarray(self.normal, dtype=np.float64), self.grid.shape + (3,)
            )
            self._cache["march"] = MarchProblem(
                grid=self.grid,
                levels=self.sigma,
                grad=grad,
                seed_mask=self.seed_mask,
                delta=min(steps),
            )
        return self._cache["march"]


def transversality_check(frame: OrthonormalFrame, surface: CauchySurface) -> TransversalityReport:
    """Normalized pairing of the surface conormal with each frame direction.

    The conormal coefficients are used as given (not unit-normalized), per
    the problem file contents; the frame vectors are normalized by their
    per-node Euclidean component length.
    """
    seed = surface.seed_mask
    n = np.asarray(surface.normal)
    minima = []
    for v in frame.vectors:
        comp = v.comp[seed]
        pairing = np.abs(comp @ n)
        length = np.linalg.norm(comp, axis=-1)
        minima.append(float(np.min(pairing / length)))
    return TransversalityReport(minima=tuple(minima))


@dataclass(frozen=True)
class TransportResult:
    values: np.ndarray
    sweeps: int
    residual: float
    frozen_nodes: int


def solve_transport(
    target,  # CauchySurface or MarchProblem
    direction: np.ndarray,  # (nx,ny,nz,3) advection field
    source: np.ndarray,  # (nx,ny,nz)
    seed_values: Optional[np.ndarray] = None,
    max_sweeps: int = 60,
    tol: Optional[float] = None,
) -> TransportResult:
    """Solve direction(u) = source with u fixed on the seed band.

    The direction field is flipped per node so the flow points away from
    the seed set (the equation is sign-reversible, so this only normalizes
    the march).  Returns the converged values and sweep diagnostics.
    """
    problem = target.march_problem() if isinstance(target, CauchySurface) else target
    grid = problem.grid
    shape = grid.shape
    nn = int(np.prod(shape))
    spacing = grid.spacing
    strides = (shape[1] * shape[2], shape[2], 1)

    sigma = problem.levels.ravel()
    seed = problem.seed_mask.ravel()
    side = np.sign(sigma)
    side[seed] = 0.0

    v = direction.reshape(nn, 3).astype(np.float64).copy()
    s = source.reshape(nn).astype(np.float64).copy()
    w = np.einsum("na,na->n", v, problem.grad.reshape(nn, 3))
    flip = (w * side) < 0
    v[flip] *= -1.0
    s[flip] *= -1.0

    # per-axis upwind neighbor (flow side) and nonnegative weights
    idx = np.arange(nn)
    axis_index = np.stack([g.ravel() for g in np.indices(shape)], axis=-1)
    nbr = np.empty((3, nn), dtype=np.int64)
    kco = np.zeros((3, nn))
    k_missing = np.zeros((3, nn))
    for al in range(3):
        sgn = np.where(v[:, al] >= 0, 1, -1)
        target = axis_index[:, al] - sgn
        valid = (target >= 0) & (target < shape[al])
        weight = np.abs(v[:, al]) / spacing[al]
        nbr[al] = np.where(valid, idx - sgn * strides[al], idx)
        kco[al] = np.where(valid, weight, 0.0)
        k_missing[al] = np.where(valid, 0.0, weight)

    den = kco.sum(axis=0)
    missing_total = k_missing.sum(axis=0)
    # Closure at box faces whose characteristic enters from outside: when
    # the missing upwind weight dominates the remaining stencil the node is
    # held at zero (Cauchy-style inflow data for the part of the box the
    # surface cannot reach); a small missing weight is simply dropped.  The
    # upwind diffusion smears the branch seam this introduces, so it stays
    # confined near the faces.
    inflow = (~seed) & (missing_total > den)
    live = (~seed) & ~inflow & (den > DEN_FLOOR)
    frozen = int(np.count_nonzero(inflow | ((~seed) & ~inflow & ~live)))

    u = np.zeros(nn)
    if seed_values is not None:
        u[seed] = np.asarray(seed_values, dtype=np.float64).ravel()[seed]

    bands = problem.bands()
    band_live = [b[live[b]] for b in bands]

    if tol is None:
        tol = 1e-12 * max(1.0, float(np.max(np.abs(s))))

    flat_nodes = np.concatenate(band_live) if band_live else np.empty(0, dtype=np.int64)
    offsets = np.zeros(len(band_live) + 1, dtype=np.int64)
    np.cumsum([b.size for b in band_live], out=offsets[1:])

    sweeps = 0
    resid = np.inf
    for sweeps in range(1, max_sweeps + 1):
        if _HAVE_NUMBA:
            _sweep_bands(u, s, den, kco[0], kco[1], kco[2], nbr[0], nbr[1], nbr[2], flat_nodes, offsets)
        else:
            for nodes in band_live:
                if nodes.size == 0:
                    continue
                acc = s[nodes]
                for al in range(3):
                    acc = acc + kco[al][nodes] * u[nbr[al][nodes]]
                u[nodes] = acc / den[nodes]
        gathered = kco[0] * u[nbr[0]] + kco[1] * u[nbr[1]] + kco[2] * u[nbr[2]]
        eq = den * u - gathered - s
        resid = float(np.max(np.abs(eq[live]))) if live.any() else 0.0
        if resid <= tol:
            break

    return TransportResult(
        values=u.reshape(shape), sweeps=sweeps, residual=resid, frozen_nodes=frozen
    )
