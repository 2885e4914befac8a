"""Independent verification: pull the metric back through computed
coordinates and measure the normalized off-diagonal content; build oracle
problems whose diagonalizing chart is known; assemble machine-readable
reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import expressions as ex
from .coordinates import CoordinateSystem
from .grid import Grid, MetricField, ScalarField
from .problem import ProblemSpec


class VerificationError(ValueError):
    def __init__(self, message: str, node: Optional[tuple] = None):
        super().__init__(message if node is None else f"{message} at node {node}")
        self.node = node


def interior_max(data: np.ndarray) -> float:
    """Max over the grid minus a one-node boundary rind."""
    return float(np.max(np.abs(data[1:-1, 1:-1, 1:-1])))


def pullback_offdiagonal(g: MetricField, coords: CoordinateSystem) -> ScalarField:
    """Normalized off-diagonal size of the metric in the computed chart.

    Per node: max_{i != j} |g^_ij| / sqrt(|g^_ii g^_jj|) with
    g^ = J^-T g J^-1, J the finite-difference Jacobian of the coordinates.
    The one-sided boundary stencils make the rind unreliable; report maxima
    should use interior_max.
    """
    jac = coords.jacobian()
    det = np.linalg.det(jac)
    interior_bad = np.abs(det[1:-1, 1:-1, 1:-1]) < 1e-12
    if interior_bad.any():
        node = tuple(int(v) + 1 for v in np.argwhere(interior_bad)[0])
        raise VerificationError("singular coordinate Jacobian", node)
    # the rind may still be singular; fall back to pseudo-inverses there
    jinv = np.linalg.pinv(jac) if np.any(np.abs(det) < 1e-12) else np.linalg.inv(jac)
    ghat = np.einsum("...ai,...ab,...bj->...ij", jinv, g.comp, jinv)
    diag = np.abs(np.einsum("...ii->...i", ghat))
    out = np.zeros(g.grid.shape)
    for i in range(3):
        for j in range(i + 1, 3):
            ratio = np.abs(ghat[..., i, j]) / np.sqrt(diag[..., i] * diag[..., j])
            out = np.maximum(out, ratio)
    return ScalarField(g.grid, out)


def make_pullback_metric(
    diag_exprs: Sequence,
    jacobian_exprs: Sequence,
    domain,
    resolution: int,
    sigma_normal=(1.0, 1.0, 1.0),
    sigma_offset: Optional[float] = None,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> ProblemSpec:
    """Problem whose metric is J^T D J: guaranteed diagonalizable.

    ``diag_exprs`` are the three diagonal entries of D and
    ``jacobian_exprs`` the nine entries of J (row i = gradient of the i-th
    new coordinate), all as Expr trees or parseable strings, so the
    Jacobian is exact rather than differenced.  D is evaluated at the base
    chart point; composing it with the map would change the coefficient
    values but not the existence of the diagonalizing chart.
    """
    def as_expr(e):
        return ex.parse_expr(e) if isinstance(e, str) else e

    dd = [as_expr(e) for e in diag_exprs]
    jj = [as_expr(e) for e in jacobian_exprs]
    if len(dd) != 3 or len(jj) != 9:
        raise ValueError("need 3 diagonal entries and 9 Jacobian entries")

    def jmat(i, al):
        return jj[3 * i + al]

    metric = {}
    names = {(0, 0): "g11", (0, 1): "g12", (0, 2): "g13", (1, 1): "g22", (1, 2): "g23", (2, 2): "g33"}
    for (al, be), key in names.items():
        acc = ex.const(0.0)
        for i in range(3):
            acc = ex.add(acc, ex.mul(ex.mul(jmat(i, al), dd[i]), jmat(i, be)))
        metric[key] = acc

    if sigma_offset is None:
        sigma_offset = sum(
            n * 0.5 * (lo + hi) for n, (lo, hi) in zip(sigma_normal, domain)
        )
    spec = ProblemSpec(
        metric=metric,
        domain=tuple(tuple(map(float, iv)) for iv in domain),
        resolution=int(resolution),
        sigma_normal=tuple(map(float, sigma_normal)),
        sigma_offset=float(sigma_offset),
        tol=tol,
        max_iter=max_iter,
    )
    grid = spec.grid()
    jdet = np.zeros(grid.shape)
    xs, ys, zs = grid.meshgrid()
    jvals = np.stack(
        [
            np.broadcast_to(np.asarray(ex.evaluate(e, xs, ys, zs), dtype=np.float64), grid.shape)
            for e in jj
        ],
        axis=-1,
    ).reshape(grid.shape + (3, 3))
    jdet = np.linalg.det(jvals)
    singular = np.abs(jdet) < 1e-12
    if singular.any():
        node = tuple(int(v) for v in np.argwhere(singular)[0])
        raise VerificationError("pullback Jacobian is singular", node)
    spec.sample_metric(grid)  # validates finiteness and signature
    return spec


REPORT_KEYS = ("offdiag_max", "frobenius_max", "gauge_residual_max", "iterations", "h", "pass")


@dataclass
class DiagonalizationReport:
    offdiag_max: float
    frobenius_max: float
    gauge_residual_max: float
    iterations: int
    h: float
    offdiag_tol: float
    frobenius_tol: float
    gauge_tol: float
    problem_sha256: str = ""
    config: dict = field(default_factory=dict)

    @property
    def failures(self) -> tuple:
        out = []
        if not self.offdiag_max < self.offdiag_tol:
            out.append("offdiag")
        if not self.frobenius_max < self.frobenius_tol:
            out.append("frobenius")
        if not self.gauge_residual_max < self.gauge_tol:
            out.append("gauge_residual")
        return tuple(out)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_text(self) -> str:
        lines = [
            f"offdiag_max = {self.offdiag_max:.17e}",
            f"frobenius_max = {self.frobenius_max:.17e}",
            f"gauge_residual_max = {self.gauge_residual_max:.17e}",
            f"iterations = {self.iterations}",
            f"h = {self.h:.17e}",
            f"pass = {'true' if self.passed else 'false'}",
            f"offdiag_tol = {self.offdiag_tol:.17e}",
            f"frobenius_tol = {self.frobenius_tol:.17e}",
            f"gauge_tol = {self.gauge_tol:.17e}",
            f"problem_sha256 = {self.problem_sha256}",
        ]
        for key in sorted(self.config):
            lines.append(f"config.{key} = {self.config[key]}")
        if self.failures:
            lines.append("failed = " + ",".join(self.failures))
        return "\n".join(lines) + "\n"


def parse_report(text: str) -> DiagonalizationReport:
    values = {}
    config = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key.startswith("config."):
            config[key[len("config."):]] = raw
        else:
            values[key] = raw
    report = DiagonalizationReport(
        offdiag_max=float(values["offdiag_max"]),
        frobenius_max=float(values["frobenius_max"]),
        gauge_residual_max=float(values["gauge_residual_max"]),
        iterations=int(values["iterations"]),
        h=float(values["h"]),
        offdiag_tol=float(values["offdiag_tol"]),
        frobenius_tol=float(values["frobenius_tol"]),
        gauge_tol=float(values["gauge_tol"]),
        problem_sha256=values.get("problem_sha256", ""),
        config=config,
    )
    stated = values.get("pass", "false") == "true"
    if stated != report.passed:
        raise ValueError("report pass flag inconsistent with its maxima")
    return report


def assemble_report(
    offdiag: ScalarField,
    frobenius: Sequence[ScalarField],
    gauge_residual_max: float,
    iterations: int,
    grid: Grid,
    problem_sha256: str = "",
    config: Optional[dict] = None,
) -> DiagonalizationReport:
    """Report with rind-excluded maxima and h-scaled tolerances.

    Gates: offdiag and gauge residual against 10 h^2 (the smooth
    second-order floor), integrability defect against 10 h.
    """
    h = max(grid.spacing)
    return DiagonalizationReport(
        offdiag_max=interior_max(offdiag.data),
        frobenius_max=max(interior_max(f.data) for f in frobenius),
        gauge_residual_max=gauge_residual_max,
        iterations=iterations,
        h=h,
        offdiag_tol=10.0 * h * h,
        frobenius_tol=10.0 * h,
        gauge_tol=10.0 * h * h,
        problem_sha256=problem_sha256,
        config=dict(config or {}),
    )
