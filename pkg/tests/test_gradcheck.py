"""Finite-difference verification of every differentiable op and the
composite forward pass, plus the checker's own bookkeeping."""

import numpy as np
import pytest

from flaming.gradsuite import run_suite, suite_names
from flaming.numerics import (
    FDReport,
    conv2d,
    finite_difference_check,
    matmul,
    parameter,
    rel_error,
    tsum,
)


def test_rel_error_conventions():
    assert rel_error(0.0, 0.0) == 0.0
    assert rel_error(1.0, 1.0) == 0.0
    assert rel_error(1.0, 2.0) > 0.3
    # symmetric in its arguments
    assert rel_error(3.0, 5.0) == pytest.approx(rel_error(5.0, 3.0))


def test_fd_check_passes_on_correct_gradient(rng):
    a = parameter(rng.standard_normal((3, 4)), name="a")
    b = parameter(rng.standard_normal((4, 2)), name="b")
    rep = finite_difference_check(lambda: tsum(matmul(a, b) * matmul(a, b)),
                                  [a, b], name="quadratic")
    assert rep.passed
    assert rep.max_rel_err < 1e-6
    assert rep.n_coords == 20


def test_fd_check_flags_wrong_gradient(rng):
    x = parameter(rng.standard_normal(4) + 3.0, name="x")

    def broken():
        # correct value, broken backward: reuse x where 2x belongs
        from flaming.numerics import constant, tsum as _s
        return _s(x * constant(x.data))

    rep = finite_difference_check(broken, [x], name="broken")
    assert not rep.passed
    assert len(rep.failures) > 0


def test_fd_check_max_coords_limits_probes(rng):
    w = parameter(rng.standard_normal((6, 6)), name="w")
    rep = finite_difference_check(lambda: tsum(matmul(w, w)), [w],
                                  max_coords=5)
    assert rep.n_coords == 5


def test_fd_check_leaves_grads_clean(rng):
    w = parameter(rng.standard_normal((2, 2)), name="w")
    finite_difference_check(lambda: tsum(matmul(w, w)), [w])
    assert w.grad is None


def test_conv2d_gradient_small(rng):
    x = parameter(rng.standard_normal((1, 2, 4, 4)), name="x")
    w = parameter(rng.standard_normal((2, 2, 3, 3)), name="w")
    b = parameter(rng.standard_normal(2), name="b")
    def f():
        c = conv2d(x, w, b, stride=2, padding=1)
        return tsum(c * c)

    rep = finite_difference_check(f, [x, w, b], name="conv2d")
    assert rep.passed, rep.failures


def test_suite_names_cover_all_sections():
    names = suite_names()
    assert set(names) == {"ops", "encoder", "relation", "losses", "composite"}


@pytest.mark.parametrize("section", ["ops", "losses"])
def test_suite_section_passes(section):
    reports = run_suite(seed=0, max_coords=4, sections=(section,))
    assert reports, "section produced no reports"
    for rep in reports:
        assert isinstance(rep, FDReport)
        assert rep.passed, f"{rep.name}: worst {rep.worst}, err {rep.max_rel_err}"


def test_suite_encoder_and_relation_pass():
    reports = run_suite(seed=0, max_coords=3,
                        sections=("encoder", "relation"))
    for rep in reports:
        assert rep.passed, f"{rep.name}: worst {rep.worst}, err {rep.max_rel_err}"
