"""Problem files: metric coefficients, chart domain, Cauchy surface, solver knobs.

The on-disk format is a plain-text sectioned key-value layout:

    [metric]
    g11 = <expr>   g12 = <expr>   g13 = <expr>
    g22 = <expr>   g23 = <expr>   g33 = <expr>
    [domain]
    x = <lo> <hi>   y = <lo> <hi>   z = <lo> <hi>
    resolution = <odd int>
    [sigma]
    normal = <a> <b> <c>
    offset = <s0>
    [solver]
    tol = <float>      # default 1e-8
    max_iter = <int>   # default 200

``#`` starts a comment.  Several ``key = value`` pairs may share a line.
``[sigma]`` and ``[solver]`` may be omitted; the surface then defaults to
normal (1,1,1)/sqrt(3) through the domain center.  An optional
``[coframe]`` section with keys w11..w33 (component of the i-th 1-form on
dy^j) supplies an explicit coframe for residual checks.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .expressions import Expr, ExprError, evaluate, parse_expr, print_expr
from .grid import Grid, MetricField, OneFormField, ScalarField

METRIC_KEYS = ("g11", "g12", "g13", "g22", "g23", "g33")
COFRAME_KEYS = tuple(f"w{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3))

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200


class ProblemError(ValueError):
    """Malformed or inconsistent problem input."""


@dataclass
class ProblemSpec:
    metric: dict  # key -> Expr for the six symmetric components
    domain: tuple  # ((x0,x1),(y0,y1),(z0,z1))
    resolution: int
    sigma_normal: tuple
    sigma_offset: float
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    coframe: Optional[dict] = None  # key -> Expr, w11..w33
    source_hash: str = ""
    source_path: str = field(default="")

    def __post_init__(self):
        missing = [k for k in METRIC_KEYS if k not in self.metric]
        if missing:
            raise ProblemError(f"missing component {missing[0]}")
        if self.resolution % 2 == 0:
            raise ProblemError(f"resolution must be odd, got {self.resolution}")
        if self.resolution < 9:
            raise ProblemError(f"resolution must be >= 9, got {self.resolution}")
        for name, (lo, hi) in zip("xyz", self.domain):
            if not hi > lo:
                raise ProblemError(f"domain interval for {name} has nonpositive length")
        if all(abs(c) < 1e-300 for c in self.sigma_normal):
            raise ProblemError("degenerate sigma: normal coefficients are all zero")
        if self.coframe is not None:
            missing = [k for k in COFRAME_KEYS if k not in self.coframe]
            if missing:
                raise ProblemError(f"coframe section is missing {missing[0]}")
        if not self.source_hash:
            self.source_hash = hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def grid(self) -> Grid:
        return Grid.box(self.domain, self.resolution)

    def sample_scalar(self, expr: Expr, grid: Grid, what: str = "expression") -> np.ndarray:
        xs, ys, zs = grid.meshgrid()
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            values = np.broadcast_to(np.asarray(evaluate(expr, xs, ys, zs), dtype=np.float64), grid.shape)
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise ProblemError(f"{what} evaluates non-finite at node {tuple(int(i) for i in bad)}")
        return np.array(values)

    def sample_metric(self, grid: Optional[Grid] = None) -> MetricField:
        grid = grid or self.grid()
        comps = [self.sample_scalar(self.metric[k], grid, what=k) for k in METRIC_KEYS]
        return MetricField.from_components(grid, *comps)

    def sample_coframe(self, grid: Optional[Grid] = None):
        if self.coframe is None:
            raise ProblemError("problem file has no [coframe] section")
        grid = grid or self.grid()
        forms = []
        for i in (1, 2, 3):
            comp = np.stack(
                [self.sample_scalar(self.coframe[f"w{i}{j}"], grid, what=f"w{i}{j}") for j in (1, 2, 3)],
                axis=-1,
            )
            forms.append(OneFormField(grid, comp))
        return tuple(forms)

    def to_text(self) -> str:
        lines = ["[metric]"]
        lines.append(f"g11 = {print_expr(self.metric['g11'])}")
        lines.append(f"g12 = {print_expr(self.metric['g12'])}")
        lines.append(f"g13 = {print_expr(self.metric['g13'])}")
        lines.append(f"g22 = {print_expr(self.metric['g22'])}")
        lines.append(f"g23 = {print_expr(self.metric['g23'])}")
        lines.append(f"g33 = {print_expr(self.metric['g33'])}")
        lines.append("[domain]")
        for name, (lo, hi) in zip("xyz", self.domain):
            lines.append(f"{name} = {lo!r} {hi!r}")
        lines.append(f"resolution = {self.resolution}")
        lines.append("[sigma]")
        lines.append("normal = " + " ".join(repr(float(c)) for c in self.sigma_normal))
        lines.append(f"offset = {float(self.sigma_offset)!r}")
        lines.append("[solver]")
        lines.append(f"tol = {self.tol!r}")
        lines.append(f"max_iter = {self.max_iter}")
        if self.coframe is not None:
            lines.append("[coframe]")
            for i in (1, 2, 3):
                row = "   ".join(f"w{i}{j} = {print_expr(self.coframe[f'w{i}{j}'])}" for j in (1, 2, 3))
                lines.append(row)
        return "\n".join(lines) + "\n"


_KEY_RE = re.compile(r"\b([A-Za-z_]\w*)\s*=")


def _split_pairs(line: str):
    """Split 'a = ...  b = ...' into (key, value-text) pairs."""
    matches = list(_KEY_RE.finditer(line))
    pairs = []
    for n, m in enumerate(matches):
        end = matches[n + 1].start() if n + 1 < len(matches) else len(line)
        pairs.append((m.group(1), line[m.end():end].strip()))
    if matches and line[: matches[0].start()].strip():
        raise ProblemError(f"stray text before {matches[0].group(1)!r}: {line!r}")
    return pairs


def _parse_sections(text: str) -> dict:
    sections: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ProblemError(f"line {lineno}: malformed section header {line!r}")
            current = line[1:-1].strip().lower()
            sections.setdefault(current, {})
            continue
        if current is None:
            raise ProblemError(f"line {lineno}: key-value pair outside any section")
        for key, value in _split_pairs(line):
            if key in sections[current]:
                raise ProblemError(f"line {lineno}: duplicate key {key!r} in [{current}]")
            if not value:
                raise ProblemError(f"line {lineno}: empty value for {key!r}")
            sections[current][key] = value
    return sections


def _floats(text: str, count: int, what: str) -> tuple:
    parts = text.split()
    if len(parts) != count:
        raise ProblemError(f"{what} needs {count} numbers, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ProblemError(f"{what} has a malformed number in {text!r}") from None


def _expr(text: str, what: str) -> Expr:
    try:
        return parse_expr(text)
    except ExprError as err:
        raise ProblemError(f"{what}: {err}") from None


def parse_problem(text: str, source_path: str = "") -> ProblemSpec:
    sections = _parse_sections(text)
    if "metric" not in sections:
        raise ProblemError("missing [metric] section")
    if "domain" not in sections:
        raise ProblemError("missing [domain] section")

    metric = {}
    for key in METRIC_KEYS:
        if key not in sections["metric"]:
            raise ProblemError(f"missing component {key}")
        metric[key] = _expr(sections["metric"][key], key)

    dom = sections["domain"]
    for name in "xyz":
        if name not in dom:
            raise ProblemError(f"missing domain interval for {name}")
    domain = tuple(_floats(dom[name], 2, f"domain {name}") for name in "xyz")
    if "resolution" not in dom:
        raise ProblemError("missing resolution")
    try:
        resolution = int(dom["resolution"])
    except ValueError:
        raise ProblemError(f"resolution must be an integer, got {dom['resolution']!r}") from None

    if "sigma" in sections:
        sig = sections["sigma"]
        if "normal" not in sig:
            raise ProblemError("missing sigma normal")
        normal = _floats(sig["normal"], 3, "sigma normal")
        if "offset" not in sig:
            raise ProblemError("missing sigma offset")
        offset = _floats(sig["offset"], 1, "sigma offset")[0]
    else:
        inv = 1.0 / math.sqrt(3.0)
        normal = (inv, inv, inv)
        offset = sum(inv * 0.5 * (lo + hi) for (lo, hi) in domain)

    tol = DEFAULT_TOL
    max_iter = DEFAULT_MAX_ITER
    if "solver" in sections:
        sol = sections["solver"]
        if "tol" in sol:
            tol = _floats(sol["tol"], 1, "tol")[0]
        if "max_iter" in sol:
            try:
                max_iter = int(sol["max_iter"])
            except ValueError:
                raise ProblemError(f"max_iter must be an integer, got {sol['max_iter']!r}") from None
        unknown = set(sol) - {"tol", "max_iter"}
        if unknown:
            raise ProblemError(f"unknown solver key {sorted(unknown)[0]!r}")

    coframe = None
    if "coframe" in sections:
        coframe = {}
        for key in COFRAME_KEYS:
            if key not in sections["coframe"]:
                raise ProblemError(f"coframe section is missing {key}")
            coframe[key] = _expr(sections["coframe"][key], key)

    return ProblemSpec(
        metric=metric,
        domain=domain,
        resolution=resolution,
        sigma_normal=normal,
        sigma_offset=offset,
        tol=tol,
        max_iter=max_iter,
        coframe=coframe,
        source_hash=hashlib.sha256(text.encode("utf-8")).hexdigest(),
        source_path=source_path,
    )


def load_problem(path) -> ProblemSpec:
    """Load and fully validate a problem file."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_problem(text, source_path=str(path))
