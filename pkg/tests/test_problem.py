from __future__ import annotations

import math

import numpy as np
import pytest

from lordiag.expressions import Const
from lordiag.problem import ProblemError, load_problem, parse_problem

MINKOWSKI = """
[metric]
g11 = 1   g12 = 0   g13 = 0
g22 = 1   g23 = 0   g33 = -1
[domain]
x = 0 1   y = 0 1   z = 0 1
resolution = 33
[sigma]
normal = 1 1 1
offset = 1.5
[solver]
tol = 1e-8
max_iter = 200
"""


def test_minkowski_loads_constant_metric():
    spec = parse_problem(MINKOWSKI)
    g = spec.sample_metric()
    assert g.comp.shape == (33, 33, 33, 3, 3)
    expected = np.diag([1.0, 1.0, -1.0])
    assert np.array_equal(g.comp[5, 7, 9], expected)
    assert np.array_equal(g.comp[0, 0, 0], expected)


def test_resolution_gives_expected_spacing():
    spec = parse_problem(MINKOWSKI)
    grid = spec.grid()
    assert grid.spacing == (1.0 / 32, 1.0 / 32, 1.0 / 32)


def test_missing_component_is_reported():
    text = MINKOWSKI.replace("g23 = 0   ", "")
    with pytest.raises(ProblemError, match="missing component g23"):
        parse_problem(text)


def test_even_resolution_rejected():
    text = MINKOWSKI.replace("resolution = 33", "resolution = 32")
    with pytest.raises(ProblemError, match="odd"):
        parse_problem(text)


def test_small_resolution_rejected():
    text = MINKOWSKI.replace("resolution = 33", "resolution = 7")
    with pytest.raises(ProblemError, match=">= 9"):
        parse_problem(text)


def test_degenerate_sigma_rejected():
    text = MINKOWSKI.replace("normal = 1 1 1", "normal = 0 0 0")
    with pytest.raises(ProblemError, match="degenerate sigma"):
        parse_problem(text)


def test_empty_domain_rejected():
    text = MINKOWSKI.replace("y = 0 1", "y = 1 1")
    with pytest.raises(ProblemError, match="nonpositive length"):
        parse_problem(text)


def test_defaults_for_omitted_sections():
    text = "\n".join(MINKOWSKI.splitlines()[:7])  # metric + domain only
    spec = parse_problem(text)
    assert spec.tol == 1e-8
    assert spec.max_iter == 200
    inv = 1.0 / math.sqrt(3.0)
    assert spec.sigma_normal == pytest.approx((inv, inv, inv))
    assert spec.sigma_offset == pytest.approx(3 * inv * 0.5)


def test_expressions_with_spaces_share_a_line():
    text = MINKOWSKI.replace("g11 = 1   g12 = 0   g13 = 0", "g11 = 1 + 0*x   g12 = 0   g13 = 0")
    spec = parse_problem(text)
    g = spec.sample_metric()
    assert np.all(g.comp[..., 0, 0] == 1.0)


def test_comments_are_stripped():
    text = MINKOWSKI.replace("tol = 1e-8", "tol = 1e-6      # tighter")
    assert parse_problem(text).tol == 1e-6


def test_round_trip_through_to_text():
    spec = parse_problem(MINKOWSKI)
    again = parse_problem(spec.to_text())
    assert again.metric == spec.metric
    assert again.domain == spec.domain
    assert again.resolution == spec.resolution
    assert again.sigma_normal == spec.sigma_normal
    assert again.tol == spec.tol


def test_optional_coframe_section():
    text = MINKOWSKI + """
[coframe]
w11 = 1   w12 = 0   w13 = 0
w21 = 0   w22 = 1   w23 = 0
w31 = 0   w32 = 0   w33 = 1
"""
    spec = parse_problem(text)
    forms = spec.sample_coframe()
    assert len(forms) == 3
    assert np.all(forms[0].comp[..., 0] == 1.0)
    assert spec.coframe["w22"] == Const(1.0)


def test_coframe_missing_entry():
    text = MINKOWSKI + "\n[coframe]\nw11 = 1\n"
    with pytest.raises(ProblemError, match="coframe section is missing"):
        parse_problem(text)


def test_non_finite_sample_rejected():
    text = MINKOWSKI.replace("g11 = 1", "g11 = 1/x")  # 1/0 at the x=0 face
    with pytest.raises(ProblemError, match="non-finite"):
        parse_problem(text).sample_metric()


def test_load_problem_reads_files(tmp_path):
    path = tmp_path / "mink.prob"
    path.write_text(MINKOWSKI, encoding="utf-8")
    spec = load_problem(path)
    assert spec.source_path.endswith("mink.prob")
    assert len(spec.source_hash) == 64
