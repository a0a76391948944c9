"""Property-based checks of invariants that hold for every admissible input."""

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fictitious_control.algebraic import op_L
from fictitious_control.benchmarks import case_ii_benchmark
from fictitious_control.discretize import Grid, duality_residual
from fictitious_control.model import check_condition_case_ii, find_i0
from fictitious_control.pipeline import cutoff_profile
from fictitious_control.weights import build_eta0, build_weights

FAST = settings(max_examples=25, deadline=None)
sparse_entry = st.sampled_from([0.0, 0.0, 0.5, -1.0, 2.0])


@FAST
@given(m=st.integers(2, 5), data=st.data())
def test_find_i0_permutation_consistent(m, data):
    G = np.array(data.draw(st.lists(sparse_entry, min_size=m * m, max_size=m * m))).reshape(m, m)
    A = np.array(data.draw(st.lists(sparse_entry, min_size=m * m, max_size=m * m))).reshape(m, m)
    coupled = {i + 1 for i in range(m - 1) if G[-1, i] != 0 or A[-1, i] != 0}
    i0 = find_i0(G, A)
    assert (i0 is None) == (not coupled)
    if coupled:
        assert i0 == min(coupled)
    perm = list(data.draw(st.permutations(range(m - 1)))) + [m - 1]
    Gp, Ap = G[np.ix_(perm, perm)], A[np.ix_(perm, perm)]
    j0 = find_i0(Gp, Ap)
    assert (j0 is None) == (i0 is None)
    if j0 is not None:
        assert perm[j0 - 1] + 1 in coupled


@FAST
@given(c1=st.floats(0, 20), c2=st.floats(0, 20))
def test_case_ii_monotone_in_bound(c1, c2):
    spec = case_ii_benchmark()
    window = ((0.0, spec.T), spec.omega)
    lo, hi = sorted((c1, c2))
    if check_condition_case_ii(spec, window, hi, samples=8):
        assert check_condition_case_ii(spec, window, lo, samples=8)


SPEC = case_ii_benchmark()
GRID = Grid(0, 1, 0.25, 8, 6)
field = arrays(np.float64, (3, 7, 10), elements=st.floats(-10, 10))


@FAST
@given(a=field, b=field, s=st.floats(-5, 5))
def test_operator_linearity(a, b, s):
    op = op_L(SPEC)
    lhs = op.apply(a + s * b, GRID)
    rhs = op.apply(a, GRID) + s * op.apply(b, GRID)
    scale = 1 + np.max(np.abs(op.apply(a, GRID))) + abs(s) * np.max(np.abs(op.apply(b, GRID)))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


@FAST
@given(nx=st.integers(3, 25), nt=st.integers(2, 25), seed=st.integers(0, 2**32 - 1))
def test_duality_random_sizes(nx, nt, seed):
    rng = np.random.default_rng(seed)
    g = Grid.for_spec(SPEC, nx, nt)
    r = duality_residual(SPEC, g, rng.standard_normal((2, nx)), rng.standard_normal((nt + 1, 2, nx)),
                         rng.standard_normal((2, nx)))
    assert r <= 1e-10


@FAST
@given(a=st.floats(0.05, 0.3), b=st.floats(0.05, 0.3), kind=st.sampled_from(["quintic", "smooth"]),
       x=arrays(np.float64, 20, elements=st.floats(-0.5, 1.5)))
def test_cutoff_bounds(a, b, kind, x):
    inner, support = (0.5 - a, 0.5 + b), (0.5 - a - 0.1, 0.5 + b + 0.1)
    th = cutoff_profile(x, inner, support, kind)
    assert np.all((th >= 0) & (th <= 1))
    assert np.all(th[(x >= inner[0]) & (x <= inner[1])] == 1)
    assert np.all(th[(x <= support[0]) | (x >= support[1])] == 0)


@FAST
@given(lo=st.floats(0.02, 0.9), width=st.floats(0.01, 0.2))
def test_eta0_positive_inside(lo, width):
    hi = min(lo + width, 0.97)
    eta0, kappa = build_eta0((0.0, 1.0), (lo, hi), samples=2001)
    x = np.linspace(0, 1, 401)[1:-1]
    assert np.all(eta0(x) > 0)
    assert kappa > 0


@FAST
@given(lam=st.floats(0.1, 3), s=st.floats(1e-6, 5), T=st.floats(0.1, 2), p=st.sampled_from([7, 9]))
def test_weight_invariants(lam, s, T, p):
    g = Grid(0, 1, T, 10, 12)
    eta0, _ = build_eta0((0.0, 1.0), (0.45, 0.55), samples=201)
    prof = build_weights(eta0, lam, s, g, p=p)
    assert np.all(prof.alpha > 0) and np.all(prof.xi > 0)
    assert np.array_equal(prof.alpha_star, prof.alpha.max(axis=1))
    assert np.array_equal(prof.xi_star, prof.xi.min(axis=1))
    assert np.all((prof.rho >= 0) & (prof.rho <= 1))
