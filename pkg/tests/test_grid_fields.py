from __future__ import annotations

import numpy as np
import pytest

from lordiag.grid import (
    FieldError,
    Grid,
    MetricField,
    MetricSignatureError,
    OneFormField,
    ScalarField,
    ThreeFormField,
    TwoFormField,
    VectorField,
    contract,
    dump_field_csv,
    ext_d,
    two_form_on_vectors,
    wedge,
)


def unit_grid(n=17):
    return Grid.box(((0.0, 1.0),) * 3, n)


def coordinate_fields(grid):
    xs, ys, zs = grid.meshgrid()
    return xs, ys, zs


# --- grid validation ---------------------------------------------------------


def test_grid_rejects_even_or_small_counts():
    with pytest.raises(FieldError):
        Grid.box(((0, 1),) * 3, 16)
    with pytest.raises(FieldError):
        Grid.box(((0, 1),) * 3, 7)


def test_grid_rejects_nonuniform_axes():
    axis = np.linspace(0, 1, 9)
    crooked = axis.copy()
    crooked[4] += 0.01
    with pytest.raises(FieldError):
        Grid((axis, crooked, axis))


def test_fields_reject_nonfinite_entries():
    grid = unit_grid(9)
    data = np.zeros(grid.shape)
    data[1, 2, 3] = np.inf
    with pytest.raises(FieldError, match="non-finite"):
        ScalarField(grid, data)


# --- wedge -------------------------------------------------------------------


def test_wedge_of_coordinate_basis_forms():
    grid = unit_grid(9)
    dy1 = OneFormField.basis(grid, 0)
    dy2 = OneFormField.basis(grid, 1)
    w = wedge(dy1, dy2)
    assert isinstance(w, TwoFormField)
    assert np.all(w.comp[..., 0] == 0)
    assert np.all(w.comp[..., 1] == 0)
    assert np.all(w.comp[..., 2] == 1.0)


def test_wedge_is_alternating():
    grid = unit_grid(9)
    rng = np.random.default_rng(7)
    a = OneFormField(grid, rng.standard_normal(grid.shape + (3,)))
    assert np.all(wedge(a, a).comp == 0)


def test_wedge_mixed_degree_example():
    grid = unit_grid(9)
    a = OneFormField(grid, np.broadcast_to(np.array([1.0, 1.0, 0.0]), grid.shape + (3,)))
    f = TwoFormField(grid, np.broadcast_to(np.array([1.0, 0.0, 0.0]), grid.shape + (3,)))
    vol = wedge(a, f)
    assert isinstance(vol, ThreeFormField)
    assert np.all(vol.data == 1.0)


def test_wedge_bilinear_and_graded_commutative():
    grid = unit_grid(9)
    rng = np.random.default_rng(11)
    a = OneFormField(grid, rng.standard_normal(grid.shape + (3,)))
    b = OneFormField(grid, rng.standard_normal(grid.shape + (3,)))
    c = OneFormField(grid, rng.standard_normal(grid.shape + (3,)))
    lhs = wedge(OneFormField(grid, 2.0 * a.comp + b.comp), c)
    rhs = 2.0 * wedge(a, c).comp + wedge(b, c).comp
    assert np.allclose(lhs.comp, rhs, atol=1e-14)
    # 1-forms anticommute, a 1-form and a 2-form commute
    assert np.allclose(wedge(a, b).comp, -wedge(b, a).comp, atol=0)
    f = TwoFormField(grid, rng.standard_normal(grid.shape + (3,)))
    assert np.allclose(wedge(a, f).data, wedge(f, a).data, atol=0)


def test_wedge_degree_overflow_rejected():
    grid = unit_grid(9)
    f = TwoFormField(grid, np.ones(grid.shape + (3,)))
    with pytest.raises(FieldError, match="exceeds"):
        wedge(f, f)


# --- exterior derivative -----------------------------------------------------


def test_ext_d_of_constant_one_form_is_zero():
    grid = unit_grid(9)
    a = OneFormField(grid, np.broadcast_to(np.array([1.0, -2.0, 3.0]), grid.shape + (3,)))
    assert np.all(ext_d(a).comp == 0)


def test_ext_d_of_x_dy_is_exact():
    grid = unit_grid(17)
    xs, _, _ = coordinate_fields(grid)
    comp = np.zeros(grid.shape + (3,))
    comp[..., 1] = xs
    da = ext_d(OneFormField(grid, comp))
    # linear coefficient: exact for 2nd-order stencils, including boundaries
    assert np.allclose(da.comp[..., 2], 1.0, atol=1e-12)
    assert np.allclose(da.comp[..., 0], 0.0, atol=1e-12)
    assert np.allclose(da.comp[..., 1], 0.0, atol=1e-12)


def test_d_of_d_scalar_vanishes_identically():
    # Axis-wise difference operators commute (they act along different
    # axes), so the discrete d∘d on scalars is zero to rounding at every
    # resolution, a stronger statement than the O(h^2) bound.
    for n in (9, 17, 33):
        grid = unit_grid(n)
        xs, ys, _ = coordinate_fields(grid)
        f = ScalarField(grid, np.sin(xs) * np.cos(ys))
        dd = ext_d(ext_d(f))
        assert np.max(np.abs(dd.comp)) < 1e-12


def test_d_of_d_one_form_vanishes_identically():
    grid = unit_grid(17)
    xs, ys, zs = coordinate_fields(grid)
    comp = np.stack([np.sin(ys * zs), np.exp(xs / 2), np.cos(xs + ys)], axis=-1)
    ddf = ext_d(ext_d(OneFormField(grid, comp)))
    assert np.max(np.abs(ddf.data)) < 1e-12


def leibniz_defect(n):
    grid = unit_grid(n)
    xs, ys, zs = coordinate_fields(grid)
    f = ScalarField(grid, np.sin(xs) * np.cos(ys) * np.exp(zs / 2))
    a = OneFormField(grid, np.stack([np.cos(ys + zs), np.sin(xs * 2), np.exp(-xs + ys / 2)], axis=-1))
    lhs = ext_d(wedge(f, a))
    rhs = wedge(ext_d(f), a).comp + wedge(f, ext_d(a)).comp
    return np.max(np.abs(lhs.comp - rhs))


def test_leibniz_rule_second_order():
    d1, d2 = leibniz_defect(17), leibniz_defect(33)
    ratio = d1 / d2
    assert 3.4 <= ratio <= 4.6


# --- contraction -------------------------------------------------------------


def test_contract_duality():
    grid = unit_grid(9)
    dy1 = OneFormField.basis(grid, 0)
    e1 = VectorField(grid, np.broadcast_to(np.array([1.0, 0.0, 0.0]), grid.shape + (3,)))
    e2 = VectorField(grid, np.broadcast_to(np.array([0.0, 1.0, 0.0]), grid.shape + (3,)))
    assert np.all(contract(dy1, e1).data == 1.0)
    assert np.all(contract(dy1, e2).data == 0.0)


def test_contract_pointwise_value():
    grid = unit_grid(33)
    xs, _, _ = coordinate_fields(grid)
    comp = np.zeros(grid.shape + (3,))
    comp[..., 1] = xs
    a = OneFormField(grid, comp)
    e2 = VectorField(grid, np.broadcast_to(np.array([0.0, 1.0, 0.0]), grid.shape + (3,)))
    val = contract(a, e2)
    assert val.data[16, 3, 5] == pytest.approx(0.5)


def test_two_form_on_vectors_matches_basis():
    grid = unit_grid(9)
    f = TwoFormField(grid, np.broadcast_to(np.array([0.0, 0.0, 1.0]), grid.shape + (3,)))
    e1 = VectorField(grid, np.broadcast_to(np.array([1.0, 0.0, 0.0]), grid.shape + (3,)))
    e2 = VectorField(grid, np.broadcast_to(np.array([0.0, 1.0, 0.0]), grid.shape + (3,)))
    assert np.all(two_form_on_vectors(f, e1, e2).data == 1.0)
    assert np.all(two_form_on_vectors(f, e2, e1).data == -1.0)


# --- metric fields -----------------------------------------------------------


def test_metric_signature_failure_reports_node():
    grid = unit_grid(9)
    comp = np.broadcast_to(np.diag([1.0, 1.0, -1.0]), grid.shape + (3, 3)).copy()
    comp[2, 3, 4] = np.diag([1.0, 1.0, 1.0])
    with pytest.raises(MetricSignatureError) as err:
        MetricField(grid, comp)
    assert err.value.node == (2, 3, 4)


def test_metric_symmetric_storage():
    grid = unit_grid(9)
    g = MetricField.from_components(grid, 1.0, 0.1, 0.0, 1.01, 0.0, -1.0)
    assert np.allclose(g.comp, np.swapaxes(g.comp, -1, -2), atol=0)


# --- CSV dumps ---------------------------------------------------------------


def test_csv_dump_layout_and_determinism(tmp_path):
    grid = unit_grid(9)
    xs, ys, _ = coordinate_fields(grid)
    f = ScalarField(grid, xs + 2 * ys)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    dump_field_csv(f, p1)
    dump_field_csv(f, p2)
    lines = p1.read_text().splitlines()
    assert lines[0] == "i,j,k,y1,y2,y3,value"
    assert len(lines) == 1 + 9 * 9 * 9
    first = lines[1].split(",")
    assert first[:3] == ["0", "0", "0"]
    assert p1.read_bytes() == p2.read_bytes()
