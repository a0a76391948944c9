import warnings

import numpy as np
import pytest
import sympy as sp

from fictitious_control.benchmarks import case_ii_benchmark, time_only_example, wave_field
from fictitious_control.expressions import T_SYM as t, X_SYM as x, ExpressionError, parse_expression
from fictitious_control.model import (CoefficientError, CoefficientField, CoefficientSet, ProblemSpec,
                                      check_condition_case_i, check_condition_case_ii, ellipticity_constant,
                                      find_i0, find_i0_for, min_abs_det_H, validate_spec)


def two_eq(d=(1, 1), g=((0, 0), (0, 0)), a=((0, 0), (1, 0)), **kw):
    return ProblemSpec(CoefficientSet(d, g, a), **kw)


# ---------------------------------------------------------------- parsing
def test_parse_expression_basic():
    assert parse_expression("1 + t^2") == 1 + t**2
    assert parse_expression("-x*sin(pi*x)") == -x * sp.sin(sp.pi * x)
    assert parse_expression("exp(2*t)/3") == sp.exp(2 * t) / 3
    assert parse_expression("2^-1") == sp.Rational(1, 2)


@pytest.mark.parametrize("text", ["1+", "sin(x", "y*x", "3 $ 4", "", "cosh(x)"])
def test_parse_expression_errors(text):
    with pytest.raises(ExpressionError):
        parse_expression(text)


# ----------------------------------------------------------- coefficients
def test_derivative_beyond_max_orders_is_an_error():
    f = CoefficientField("x^3", max_orders=(1, 2))
    assert f.partial(0, 2)(0.0, 0.5) == pytest.approx(3.0)
    with pytest.raises(CoefficientError):
        f.partial(0, 3)
    with pytest.raises(CoefficientError):
        f.partial(2, 0)


def test_constant_field_is_constant():
    f = CoefficientField(2.5)
    rng = np.random.default_rng(3)
    vals = f(rng.uniform(size=10), rng.uniform(size=10))
    assert f.is_constant and np.all(vals == 2.5)
    assert f.constant_value() == 2.5
    assert not CoefficientField("x").is_constant


def test_finite_difference_fallback_second_order():
    """FD derivatives of a callable agree with the analytic ones at O(h^2)."""
    exact = wave_field(0.0, [1.0], [2.0], [1.5], [0.3])
    errs = []
    for scale in (1.0, 0.5):
        fd = CoefficientField(exact.partial(0, 0), scale=scale)
        with pytest.warns(UserWarning, match="finite differences"):
            d = fd.partial(0, 1)
        errs.append(abs(d(0.2, 0.4) - exact.partial(0, 1)(0.2, 0.4)))
    assert errs[0] < 1e-6
    # halving the step reduces the error roughly fourfold, up to round-off
    assert errs[1] <= errs[0] / 2 or errs[1] < 1e-9


def test_explicit_derivative_callbacks_are_used():
    f = CoefficientField(lambda t, x: x**2, derivatives={(0, 1): lambda t, x: 2 * x})
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert f.partial(0, 1)(0.0, 3.0) == 6.0


def test_coefficient_set_shapes_and_names():
    c = CoefficientSet((1, 1), ((0, 0), (2, 0)), ((0, 0), (0, "x")))
    assert c.m == 2
    assert c.named("g21").constant_value() == 2.0
    assert not c.is_constant
    with pytest.raises(ValueError):
        CoefficientSet((1, 1), ((0,),), ((0, 0), (0, 0)))


# ---------------------------------------------------------- validate_spec
def test_validate_well_formed():
    spec = two_eq(T=0.5, omega=(0.3, 0.7))
    assert validate_spec(spec) == []
    assert spec.control_count == 1


def test_validate_ellipticity():
    assert validate_spec(two_eq(d=(0, 1), T=0.5)) == ["ellipticity violated"]


def test_validate_window_nesting():
    spec = two_eq(T=0.5, omega0=(0.4, 0.6), omega1=(0.35, 0.58))
    assert validate_spec(spec) == ["window nesting violated"]


def test_ellipticity_constant_recorded():
    spec = two_eq(d=("1 + x", 2), T=0.5)
    assert ellipticity_constant(spec) == pytest.approx(1.0)


# ---------------------------------------------------------------- find_i0
def test_find_i0_examples():
    assert find_i0(np.zeros((2, 2)), [[0, 0], [1, 0]]) == 1
    assert find_i0(np.zeros((3, 3)), np.zeros((3, 3))) is None
    G = np.zeros((3, 3, 1))
    G[2, 1, 0] = 2.0
    assert find_i0(G, np.zeros((3, 3))) == 2


def test_find_i0_for_rejects_variable_coefficients():
    with pytest.raises(CoefficientError):
        find_i0_for(case_ii_benchmark().coefficients)


# ---------------------------------------------------------- two-equation
WINDOW = ((0.0, 0.25), (0.3, 0.7))


def test_case_i_examples():
    assert check_condition_case_i(two_eq(T=0.25), WINDOW)
    assert not check_condition_case_i(two_eq(a=((0, 0), ("x - 0.5", 0)), T=0.25), WINDOW)
    assert not check_condition_case_i(two_eq(g=((0, 0), (0.1, 0)), T=0.25), WINDOW)


def test_case_i_window_must_lie_in_omega():
    with pytest.raises(ValueError):
        check_condition_case_i(two_eq(T=0.25), ((0.0, 0.25), (0.1, 0.7)))


def test_case_ii_kappa_example():
    spec = case_ii_benchmark()
    window = ((0.0, spec.T), spec.omega)
    mn, _ = min_abs_det_H(spec, window)
    # the determinant of H itself is kappa^4 d_x a22 = 16 (see the decisions ledger)
    assert mn == pytest.approx(16.0, rel=1e-12)
    assert check_condition_case_ii(spec, window, 1.0)


def test_case_ii_zero_coupling_fails():
    spec = two_eq(a=((0, 0), (0, 0)), T=0.25)
    assert not check_condition_case_ii(spec, WINDOW, 1e-12)
    assert min_abs_det_H(spec, WINDOW)[0] == 0.0


def test_case_ii_time_only_example():
    spec = time_only_example()
    window = ((0.25, 0.75), spec.omega)
    assert check_condition_case_ii(spec, window, 1.0)
    mn, (tm, _) = min_abs_det_H(spec, window)
    assert mn == pytest.approx((1 + tm) ** 2, rel=1e-12)
    assert mn >= 1.25


def test_case_ii_constant_coefficients_degenerate():
    """With constant coefficients every expansion term carries a derivative: det H = 0."""
    spec = two_eq(g=((0, 0), (2.0, 0.3)), a=((0, 0), (1.0, 0.5)), T=0.25)
    assert not check_condition_case_ii(spec, WINDOW, 1e-10)
