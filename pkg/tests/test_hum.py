import dataclasses

import numpy as np
import pytest

from fictitious_control.benchmarks import case_ii_benchmark, initial_state, theorem1_benchmark
from fictitious_control.discretize import Grid
from fictitious_control.hum import (HumError, HumProblem, control_regularity_report, cost_identity_check,
                                    hum_solve, penalty_sweep, weighted_control)
from fictitious_control.pipeline import make_hum_config


@pytest.fixture(scope="module")
def setup():
    spec = theorem1_benchmark()
    g = Grid.for_spec(spec, 40, 40)
    cfg = make_hum_config(spec, g, "theorem1", k=1e4, cg_tol=1e-12)
    return spec, g, cfg


def test_zero_data_gives_zero_control(setup):
    spec, g, cfg = setup
    sol = hum_solve(spec, g, cfg, np.zeros((2, g.nx)))
    assert np.all(sol.v.values == 0) and sol.cost == 0.0 and sol.cg_iterations == 0


def test_cost_identity(setup):
    spec, g, cfg = setup
    y0 = initial_state(spec, g)
    sol = hum_solve(spec, g, cfg, y0)
    assert cost_identity_check(sol, y0) <= 1e-6 * sol.cost
    loose = hum_solve(spec, g, dataclasses.replace(cfg, cg_tol=1e-2), y0)
    assert cost_identity_check(loose, y0) <= 10 * 1e-2 * loose.cost


def test_gramian_symmetric_semidefinite(setup):
    spec, g, cfg = setup
    prob = HumProblem(spec, g, cfg)
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, 2, g.nx))
    la, lb = prob.gramian(a), prob.gramian(b)
    assert np.sum(la * b) == pytest.approx(np.sum(a * lb), rel=1e-10)
    assert np.sum(la * a) >= -1e-14 * np.sum(a * a)


def test_control_characterization_and_support(setup):
    spec, g, cfg = setup
    sol = hum_solve(spec, g, cfg, initial_state(spec, g))
    # independent transpose of F: theta (g d_x - a) with g = 0, a = 1 for this benchmark
    theta = cfg.theta[1:-1]
    rho = cfg.profile.rho[:, None, 1:-1]
    ref = -rho * theta * (-sol.phi_bar.values)
    assert np.max(np.abs(sol.v.values - ref)) <= 1e-12 * max(np.max(np.abs(ref)), 1e-300)
    outside = theta == 0
    assert np.all(sol.v.values[..., outside] == 0)


def test_linearity_in_initial_state(setup):
    spec, g, cfg = setup
    y0 = initial_state(spec, g)
    v1 = hum_solve(spec, g, cfg, y0).v.values
    v2 = hum_solve(spec, g, cfg, 2 * y0).v.values
    assert np.max(np.abs(v2 - 2 * v1)) <= 1e-8 * np.max(np.abs(v1))


def test_penalty_sweep_decreases_terminal_norm(setup):
    spec, g, cfg = setup
    rows = penalty_sweep(spec, g, cfg, initial_state(spec, g), [1e2, 1e4, 1e6])
    norms = [r["terminal_norm"] for r in rows]
    assert len(rows) == 3 and norms[0] > norms[1] > norms[2]
    with pytest.raises(ValueError):
        penalty_sweep(spec, g, cfg, initial_state(spec, g), [1e4, 1e2])
    with pytest.raises(ValueError):
        penalty_sweep(spec, g, cfg, initial_state(spec, g), [])


def test_cg_failure_raises(setup):
    spec, g, cfg = setup
    bad = dataclasses.replace(cfg, cg_max_iter=1, cg_tol=1e-14, k=1e8)
    with pytest.raises(HumError) as info:
        hum_solve(spec, g, bad, initial_state(spec, g))
    assert info.value.residual is not None


def test_config_validation(setup):
    _, _, cfg = setup
    for kw in ({"k": 0.0}, {"cg_tol": 1.5}, {"mode": "other"}, {"i0": None}):
        with pytest.raises(ValueError):
            dataclasses.replace(cfg, **kw)


def test_regularity_report(setup):
    spec, g, cfg = setup
    sol = hum_solve(spec, g, cfg, initial_state(spec, g))
    rep = control_regularity_report(sol, cfg.profile, 0.5)
    assert set(rep) >= {"value", "dx", "dxx", "dt", "w21"}
    assert all(np.isfinite(v) for v in rep.values())
    w = weighted_control(sol, cfg.profile, 0.5)
    assert np.all(w[[0, -1]] == 0)
    with pytest.raises(ValueError):
        weighted_control(sol, cfg.profile, 1.0)


def test_direct_control_mode():
    spec = case_ii_benchmark()
    g = Grid.for_spec(spec, 40, 40)
    cfg = make_hum_config(spec, g, "case_ii", k=1e4, cg_tol=1e-12)
    assert cfg.mode == "theorem2"
    y0 = initial_state(spec, g)
    sol = hum_solve(spec, g, cfg, y0)
    ref = -cfg.profile.rho[:, None, 1:-1] * cfg.theta[1:-1] * sol.phi_bar.values
    assert np.allclose(sol.v.values, ref, rtol=0, atol=1e-12 * np.max(np.abs(ref)))
    assert sol.terminal_norm < np.sqrt(g.h) * np.linalg.norm(y0)
    assert cost_identity_check(sol, y0) <= 1e-6 * sol.cost
