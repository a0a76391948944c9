import math

import numpy as np
import pytest

from fictitious_control.benchmarks import theorem1_benchmark
from fictitious_control.discretize import Grid
from fictitious_control.weights import (Eta0, WeightError, build_eta0, build_weights, carleman_functional,
                                        default_s_lambda, observability_ratio, write_weights_csv)


def test_eta0_symmetric_window():
    eta0, kappa = build_eta0((0.0, 1.0), (0.4, 0.6))
    x = np.linspace(0, 1, 101)
    assert kappa == pytest.approx(0.2, rel=1e-12)
    assert np.allclose(eta0(x), x * (1 - x), atol=1e-15)
    assert eta0(0.0) == 0.0 and eta0(1.0) == 0.0


def test_eta0_offcentre_properties():
    eta0, kappa = build_eta0((0.0, 2.0), (0.2, 0.5))
    x = np.linspace(0, 2, 4001)
    vals, der = eta0(x), eta0.derivative(x)
    assert vals[0] == pytest.approx(0.0, abs=1e-15) and vals[-1] == pytest.approx(0.0, abs=1e-15)
    assert np.all(vals[1:-1] > 0)
    outside = (x <= 0.2) | (x >= 0.5)
    assert kappa > 0
    assert np.all(np.abs(der[outside]) >= kappa * (1 - 1e-9))
    # the only critical point is the window midpoint
    assert eta0.derivative(0.35) == pytest.approx(0.0, abs=1e-12)
    fd = (eta0(x[2:]) - eta0(x[:-2])) / (x[2] - x[0])
    assert np.max(np.abs(fd - der[1:-1])) < 1e-5


def test_eta0_rejects_boundary_window():
    with pytest.raises(WeightError):
        build_eta0((0.0, 1.0), (0.0, 0.3))
    with pytest.raises(WeightError):
        Eta0((0.0, 1.0), 1.0)


def test_default_s_lambda():
    assert default_s_lambda(1.0) == (2.0, 1.0)
    s0, lam = default_s_lambda(0.5)
    assert s0 == 0.0322265625 and lam == 1.0
    with pytest.raises(WeightError):
        default_s_lambda(0.0)


def profile(nx=20, nt=40, T=0.25, lam=1.0, s=1.0, p=7):
    g = Grid(0.0, 1.0, T, nx, nt)
    eta0, kappa = build_eta0((0.0, 1.0), (0.4, 0.6))
    return build_weights(eta0, lam, s, g, p=p, kappa=kappa)


def test_xi_star_closed_form():
    prof = profile(lam=0.7)
    t = prof.t_interior
    beta = t**5 * (prof.grid.T - t) ** 5
    assert np.allclose(prof.xi_star, np.exp(10 * 0.7 * 0.25) / beta, rtol=1e-12)
    assert np.all(prof.alpha > 0)
    assert np.all(prof.alpha_star >= prof.alpha.max(axis=1))


def test_weight_vanishes_near_endpoints():
    prof = profile(nt=100)
    assert np.max(prof.exp_weight()[0]) < 1e-30
    assert np.max(prof.exp_weight()[-1]) < 1e-30
    assert np.all(prof.rho[0] == 0) and np.all(prof.rho[-1] == 0)
    assert prof.rho.max() == pytest.approx(1.0)
    assert np.all(np.isinf(prof.exp_star(0.5)[[0, -1]]))


def test_weight_errors():
    g = Grid(0.0, 1.0, 0.25, 10, 10)
    eta0, _ = build_eta0((0.0, 1.0), (0.4, 0.6))
    with pytest.raises(WeightError):
        build_weights(eta0, 1.0, 1.0, g, p=8)
    with pytest.raises(WeightError):
        build_weights(eta0, 1.0, 1.0, g, times=[0.0, 0.1])
    with pytest.raises(WeightError):
        build_weights(eta0, -1.0, 1.0, g)


def loop_functional(prof, u, s, lam):
    g = prof.grid
    total = 0.0
    for n in range(1, g.nt):
        k = n - 1
        for i in range(g.nx + 2):
            if i == 0:
                du = (u[n, 1] - u[n, 0]) / g.h
            elif i == g.nx + 1:
                du = (u[n, i] - u[n, i - 1]) / g.h
            else:
                du = (u[n, i + 1] - u[n, i - 1]) / (2 * g.h)
            w = g.h / 2 if i in (0, g.nx + 1) else g.h
            e = math.exp(max(-2 * s * prof.alpha[k, i], math.log(1e-300)))
            xi = prof.xi[k, i]
            total += w * e * (s**3 * lam**4 * xi**3 * u[n, i] ** 2 + s * lam**2 * xi * du**2)
    return g.tau * total


def test_carleman_functional_oracle():
    prof = profile(nx=12, nt=16, T=0.5, s=0.05)
    rng = np.random.default_rng(0)
    u = rng.standard_normal((17, 14))
    u[:, [0, -1]] = 0
    got = carleman_functional(prof, u)
    ref = loop_functional(prof, u, 0.05, 1.0)
    assert got == pytest.approx(ref, rel=1e-10)
    assert carleman_functional(prof, np.zeros_like(u)) == 0.0
    assert carleman_functional(prof, 2 * u) == pytest.approx(4 * got, rel=1e-13)


def test_observability_ratio_homogeneous():
    spec = theorem1_benchmark()
    g = Grid.for_spec(spec, 30, 30)
    eta0, kappa = build_eta0(spec.domain, spec.omega2)
    prof = build_weights(eta0, 1.0, 1e-6, g, p=7, kappa=kappa)
    rng = np.random.default_rng(1)
    psi = rng.standard_normal((2, 30))
    r1, r2 = observability_ratio(spec, g, prof, [psi, 3 * psi], i0=1)
    assert np.isfinite(r1) and r1 > 0
    assert r2 == pytest.approx(r1, rel=1e-12)
    assert observability_ratio(spec, g, prof, [np.zeros((2, 30))]) == [float("inf")]


def test_weights_csv(tmp_path):
    prof = profile(nx=3, nt=4)
    write_weights_csv(prof, tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "t,x,alpha,xi,rho"
    assert len(lines) == 1 + 3 * 5
