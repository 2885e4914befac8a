"""Structured box grids and differential-form fields over them.

All fields store per-node components in the chart coordinate basis:
1-forms on dy1,dy2,dy3; 2-forms on dy2^dy3, dy3^dy1, dy1^dy2; 3-forms on
dy1^dy2^dy3.  Exterior derivatives use 2nd-order central differences in
the interior and 2nd-order one-sided stencils on boundary faces, so the
whole grid converges at the same O(h^2) rate.  Fields are immutable after
construction (backing arrays are frozen) and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class FieldError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Grid:
    """Uniform node-centered grid over a closed box."""

    axes: tuple  # three 1-d coordinate arrays

    def __post_init__(self):
        if len(self.axes) != 3:
            raise FieldError("grid needs exactly three axes")
        object.__setattr__(self, "axes", tuple(_frozen(a) for a in self.axes))
        for a in self.axes:
            n = a.size
            if n % 2 == 0 or n < 9:
                raise FieldError(f"nodes per axis must be odd and >= 9, got {n}")
            steps = np.diff(a)
            if steps[0] <= 0 or not np.allclose(steps, steps[0], rtol=1e-12, atol=0):
                raise FieldError("grid axes must be uniformly spaced and increasing")

    @classmethod
    def box(cls, bounds: Sequence[Sequence[float]], resolution: int) -> "Grid":
        axes = []
        for lo, hi in bounds:
            if not hi > lo:
                raise FieldError(f"interval [{lo}, {hi}] has nonpositive length")
            axes.append(np.linspace(lo, hi, resolution))
        return cls(tuple(axes))

    @property
    def shape(self) -> tuple:
        return tuple(a.size for a in self.axes)

    @property
    def spacing(self) -> tuple:
        return tuple(float(a[1] - a[0]) for a in self.axes)

    @property
    def center_index(self) -> tuple:
        return tuple((a.size - 1) // 2 for a in self.axes)

    def meshgrid(self):
        return np.meshgrid(*self.axes, indexing="ij")

    def node_coords(self) -> np.ndarray:
        """(nx,ny,nz,3) array of node coordinates."""
        return np.stack(self.meshgrid(), axis=-1)


def _check(grid: Grid, arr: np.ndarray, shape: tuple) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape != shape:
        raise FieldError(f"component array has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise FieldError(f"non-finite entry at index {tuple(int(i) for i in bad)}")
    return _frozen(arr)


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    data: np.ndarray
    degree = 0

    def __post_init__(self):
        object.__setattr__(self, "data", _check(self.grid, self.data, self.grid.shape))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))


@dataclass(frozen=True)
class VectorField:
    grid: Grid
    comp: np.ndarray  # (nx,ny,nz,3) on d/dy^alpha

    def __post_init__(self):
        object.__setattr__(self, "comp", _check(self.grid, self.comp, self.grid.shape + (3,)))


@dataclass(frozen=True)
class OneFormField:
    grid: Grid
    comp: np.ndarray  # (nx,ny,nz,3) on dy^alpha
    degree = 1

    def __post_init__(self):
        object.__setattr__(self, "comp", _check(self.grid, self.comp, self.grid.shape + (3,)))

    @classmethod
    def basis(cls, grid: Grid, alpha: int) -> "OneFormField":
        comp = np.zeros(grid.shape + (3,))
        comp[..., alpha] = 1.0
        return cls(grid, comp)


@dataclass(frozen=True)
class TwoFormField:
    grid: Grid
    comp: np.ndarray  # (nx,ny,nz,3) on dy2^dy3, dy3^dy1, dy1^dy2
    degree = 2

    def __post_init__(self):
        object.__setattr__(self, "comp", _check(self.grid, self.comp, self.grid.shape + (3,)))


@dataclass(frozen=True)
class ThreeFormField:
    grid: Grid
    data: np.ndarray  # coefficient of dy1^dy2^dy3
    degree = 3

    def __post_init__(self):
        object.__setattr__(self, "data", _check(self.grid, self.data, self.grid.shape))


class MetricSignatureError(ValueError):
    def __init__(self, message: str, node: tuple):
        super().__init__(f"{message} at node {node}")
        self.node = node


@dataclass(frozen=True)
class MetricField:
    """Symmetric metric components of signature (+,+,-) on a grid."""

    grid: Grid
    comp: np.ndarray  # (nx,ny,nz,3,3), symmetric

    def __post_init__(self):
        comp = np.asarray(self.comp, dtype=np.float64)
        if comp.shape != self.grid.shape + (3, 3):
            raise FieldError(f"metric array has shape {comp.shape}")
        if not np.allclose(comp, np.swapaxes(comp, -1, -2), atol=0, rtol=0):
            raise FieldError("metric components are not symmetric")
        object.__setattr__(self, "comp", _check(self.grid, comp, self.grid.shape + (3, 3)))
        self.validate_signature()

    @classmethod
    def from_components(cls, grid: Grid, g11, g12, g13, g22, g23, g33) -> "MetricField":
        comp = np.empty(grid.shape + (3, 3))
        rows = [[g11, g12, g13], [g12, g22, g23], [g13, g23, g33]]
        for i in range(3):
            for j in range(3):
                comp[..., i, j] = rows[i][j]
        return cls(grid, comp)

    def validate_signature(self) -> None:
        eig = np.linalg.eigvalsh(self.comp)
        neg = np.sum(eig < 0, axis=-1)
        bad = neg != 1
        if np.any(bad):
            node = tuple(int(i) for i in np.argwhere(bad)[0])
            raise MetricSignatureError("metric signature is not (+,+,-)", node)
        det = np.linalg.det(self.comp)
        small = np.abs(det) <= 1e-12
        if np.any(small):
            node = tuple(int(i) for i in np.argwhere(small)[0])
            raise MetricSignatureError("metric is numerically degenerate", node)

    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.comp)


# --- pointwise algebra ----------------------------------------------------


def wedge(a, b):
    """Pointwise exterior product; defined for total degree <= 3."""
    ka, kb = a.degree, b.degree
    if ka + kb > 3:
        raise FieldError(f"wedge of degrees {ka} and {kb} exceeds the chart dimension")
    if ka == 0 or kb == 0:
        scalar, form = (a, b) if ka == 0 else (b, a)
        if form.degree == 0:
            return ScalarField(a.grid, a.data * b.data)
        if form.degree == 3:
            return ThreeFormField(form.grid, scalar.data * form.data)
        cls = OneFormField if form.degree == 1 else TwoFormField
        return cls(form.grid, scalar.data[..., None] * form.comp)
    if ka == 1 and kb == 1:
        return TwoFormField(a.grid, np.cross(a.comp, b.comp))
    if {ka, kb} == {1, 2}:
        one, two = (a, b) if ka == 1 else (b, a)
        return ThreeFormField(a.grid, np.einsum("...i,...i->...", one.comp, two.comp))
    raise FieldError(f"unsupported wedge of degrees {ka} and {kb}")


def _partial(grid: Grid, data: np.ndarray, axis: int) -> np.ndarray:
    return np.gradient(data, grid.spacing[axis], axis=axis, edge_order=2)


def ext_d(a):
    """Finite-difference exterior derivative, raising the degree by one."""
    grid = a.grid
    if a.degree == 0:
        comp = np.stack([_partial(grid, a.data, al) for al in range(3)], axis=-1)
        return OneFormField(grid, comp)
    if a.degree == 1:
        d = [[_partial(grid, a.comp[..., c], al) for c in range(3)] for al in range(3)]
        comp = np.stack(
            [d[1][2] - d[2][1], d[2][0] - d[0][2], d[0][1] - d[1][0]], axis=-1
        )
        return TwoFormField(grid, comp)
    if a.degree == 2:
        data = sum(_partial(grid, a.comp[..., al], al) for al in range(3))
        return ThreeFormField(grid, data)
    raise FieldError("exterior derivative of a 3-form is out of range")


def contract(a: OneFormField, v: VectorField) -> ScalarField:
    """Pointwise pairing of a 1-form with a vector field."""
    return ScalarField(a.grid, np.einsum("...i,...i->...", a.comp, v.comp))


def two_form_on_vectors(f: TwoFormField, u: VectorField, v: VectorField) -> ScalarField:
    """Evaluate a 2-form on a pair of vector fields pointwise."""
    return ScalarField(f.grid, np.einsum("...i,...i->...", f.comp, np.cross(u.comp, v.comp)))


# --- CSV dumps --------------------------------------------------------------
#
# Fixed column order: node indices i,j,k; node coordinates y1,y2,y3; then the
# component columns of the field in basis order (value | c1,c2,c3 | vol).


def _component_table(field) -> tuple:
    if isinstance(field, (ScalarField, ThreeFormField)):
        return ("value",), field.data[..., None]
    if isinstance(field, (OneFormField, VectorField, TwoFormField)):
        return ("c1", "c2", "c3"), field.comp
    raise FieldError(f"cannot dump {type(field).__name__}")


def dump_field_csv(field, path) -> None:
    names, values = _component_table(field)
    coords = field.grid.node_coords()
    nx, ny, nz = field.grid.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i,j,k,y1,y2,y3," + ",".join(names) + "\n")
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    cells = [str(i), str(j), str(k)]
                    cells += [f"{c:.17e}" for c in coords[i, j, k]]
                    cells += [f"{c:.17e}" for c in values[i, j, k]]
                    fh.write(",".join(cells) + "\n")
