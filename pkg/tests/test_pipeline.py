import json

import numpy as np
import pytest

from fictitious_control.benchmarks import case_ii_benchmark, decoupled, initial_state, theorem1_benchmark
from fictitious_control.discretize import DiscreteNorms, Grid, solve_forward
from fictitious_control.pipeline import (ApproximationError, ConditionError, approximate_control, build_cutoff,
                                         check_mode_condition, cutoff_profile, default_cutoff_windows,
                                         make_hum_config, run_pipeline)


# ------------------------------------------------------------------ cutoff
@pytest.mark.parametrize("kind", ["quintic", "smooth"])
def test_cutoff_bounds_and_plateau(kind):
    x = np.linspace(0, 1, 1001)
    th = cutoff_profile(x, (0.4, 0.6), (0.3, 0.7), kind)
    assert np.all((th >= 0) & (th <= 1))
    assert np.all(th[(x >= 0.4) & (x <= 0.6)] == 1.0)
    assert np.all(th[(x <= 0.3) | (x >= 0.7)] == 0.0)
    assert np.allclose(th, th[::-1], atol=1e-12)


def test_quintic_second_difference_jump_is_first_order():
    jumps = []
    for n in (200, 400, 800):
        g = Grid(0, 1, 1, n - 1, 1)
        d2 = np.diff(build_cutoff((0.4, 0.6), (0.3, 0.7), g).values, 2) / g.h**2
        jumps.append(np.max(np.abs(np.diff(d2))))
    assert all(1.5 < a / b < 2.5 for a, b in zip(jumps, jumps[1:]))


def test_cutoff_windows():
    with pytest.raises(ValueError):
        build_cutoff((0.3, 0.6), (0.3, 0.7), Grid(0, 1, 1, 10, 1))
    spec = theorem1_benchmark()
    inner, support = default_cutoff_windows(spec, "theorem1")
    assert inner == spec.omega0 and support == pytest.approx((0.325, 0.675))
    assert default_cutoff_windows(spec, "case_ii") == (spec.omega1, spec.omega0)


# ---------------------------------------------------------------- pipeline
@pytest.fixture(scope="module")
def thm1():
    spec = theorem1_benchmark()
    g = Grid.for_spec(spec, 40, 40)
    return spec, g, make_hum_config(spec, g, "theorem1", k=1e4)


def test_zero_initial_state_gives_zero(thm1):
    spec, g, cfg = thm1
    res = run_pipeline(spec, g, "theorem1", np.zeros((2, g.nx)), cfg)
    assert np.all(res.u.values == 0) and np.all(res.y.values == 0)


def test_benchmark_report(thm1):
    spec, g, cfg = thm1
    res = run_pipeline(spec, g, "theorem1", initial_state(spec, g), cfg)
    rep = res.report
    assert rep.support_violation == 0.0 and rep.boundary_violation == 0.0
    assert rep.zhat_initial == 0.0 and rep.zhat_final == 0.0
    assert rep.terminal_norm <= 2 * rep.terminal_norm_z
    assert rep.consistency <= 1e-10
    assert rep.y0_norm == pytest.approx(1.0, rel=1e-2)  # two copies of sin(pi x)
    data = json.loads(rep.to_json())
    assert data["mode"] == "theorem1" and data["nx"] == 40


def test_pipeline_linearity(thm1):
    spec, g, cfg = thm1
    y0 = initial_state(spec, g)
    u1 = run_pipeline(spec, g, "theorem1", y0, cfg).u.values
    u2 = run_pipeline(spec, g, "theorem1", 2 * y0, cfg).u.values
    ratio = np.max(np.abs(u2)) / np.max(np.abs(u1))
    assert ratio == pytest.approx(2.0, abs=1e-5)


def test_case_ii_pipeline_consistency():
    """``L M = Id`` holds only up to truncation in case (ii): the defect shrinks with the grid."""
    spec = case_ii_benchmark()
    rel = []
    for n in (40, 80):
        g = Grid.for_spec(spec, n, n)
        cfg = make_hum_config(spec, g, "case_ii", k=1e4)
        res = run_pipeline(spec, g, "case_ii", initial_state(spec, g), cfg, C_bound=1.0)
        assert res.report.support_violation == 0.0
        theta_v = res.hum.v.values * cfg.theta[None, None, 1:-1]
        rel.append(res.report.consistency / np.sqrt(g.h * g.tau * np.sum(theta_v**2)))
    assert rel[0] < 0.1 and rel[1] < rel[0] / 2


def test_mode_mismatch_and_conditions(thm1):
    spec, g, cfg = thm1
    with pytest.raises(ValueError):
        run_pipeline(spec, g, "case_ii", initial_state(spec, g), cfg)
    with pytest.raises(ConditionError):
        make_hum_config(decoupled(), g, "theorem1")
    with pytest.raises(ConditionError):
        check_mode_condition(case_ii_benchmark(), "case_ii", ((0, 0.25), (0.3, 0.7)), C_bound=100.0)


# ------------------------------------------------------- approximate control
def test_approximate_control_free_evolution(thm1):
    spec, g, cfg = thm1
    y0 = initial_state(spec, g)
    free = solve_forward(spec, g, y0).final
    _, u, achieved = approximate_control(spec, g, y0, free, 1e-10, cfg)
    assert achieved <= 1e-10
    assert np.max(np.abs(u.values)) == 0.0


def test_approximate_control_to_zero(thm1):
    spec, g, cfg = thm1
    _, _, achieved = approximate_control(spec, g, initial_state(spec, g), np.zeros((2, g.nx)), 1e-6, cfg)
    assert achieved <= 1e-6


def test_approximate_control_random_target(thm1):
    spec, g, cfg = thm1
    rng = np.random.default_rng(0)
    x = g.x_interior
    yT = np.vstack([rng.uniform() * np.sin(2 * np.pi * x), rng.uniform() * x * (1 - x)])
    eps = 1e-2 * DiscreteNorms(g).l2_space(yT) ** 2
    y, _, achieved = approximate_control(spec, g, initial_state(spec, g), yT, eps, cfg)
    assert achieved <= eps
    assert DiscreteNorms(g).l2_space(y.final - yT) ** 2 == pytest.approx(achieved)


def test_approximate_control_reports_best(thm1):
    spec, g, cfg = thm1
    with pytest.raises(ApproximationError) as info:
        approximate_control(spec, g, initial_state(spec, g), np.zeros((2, g.nx)), 1e-30, cfg, k_max=1e4)
    assert info.value.best[2] > 0
