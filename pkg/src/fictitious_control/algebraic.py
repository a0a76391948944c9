"""Operator algebra of the algebraic step.

Operators built here (``m`` equations, ``m - 1`` controls on the first
``m - 1`` equations, one space dimension):

* ``N``      first-order operator copied on every component,
* ``L``      residual ``(z, v) -> d_t z - d_x(D d_x z) - G d_x z - A z - B v``,
* ``L*``     its exact adjoint (trailing rows ``-phi_i``),
* ``M*``     left inverse of ``L*`` up to ``N*`` (constant case) or the
  identity (two-equation cases), and ``M`` its adjoint, so that
  ``L ∘ M = N`` (resp. ``Id``).

The reference constructions of ``M*`` pair with an adjoint whose trailing rows
are ``+phi_i``; the operators returned here are composed with the sign flip
``J = diag(I_m, -I_{m-1})`` so they pair with the true adjoint of ``L``.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
import sympy as sp

from .discretize import Grid
from .expressions import T_SYM, X_SYM
from .model import CASE_II_ORDERS, CoefficientField, CoefficientSet, ProblemSpec, require_orders
from .operators import Compose, DiffOperator, PointwiseMatrix, Term, signs

TOL_POS = 1e-8


class AlgebraicError(ValueError):
    """Raised when an operator cannot be built for the given coefficients."""


# ------------------------------------------------------------------ helpers
def _mul(field: CoefficientField):
    """``(coef, chain)`` for multiplication by ``field``; ``None`` if identically zero."""
    if field.is_constant:
        c = field.constant_value()
        return None if c == 0.0 else (c, ())
    return (1.0, (("mul", field),))


def _term(coef, chain, src, dst, field=None, after=()):
    """Build ``coef * after ∘ [field] ∘ chain`` or ``None`` when ``field ≡ 0``."""
    if field is not None:
        m = _mul(field)
        if m is None:
            return None
        coef *= m[0]
        chain = tuple(chain) + m[1]
    return Term(coef, tuple(chain) + tuple(after), src, dst)


def _collect(*terms):
    return [t for t in terms if t is not None]


def _constant(field, name):
    if not field.is_constant:
        raise AlgebraicError(f"{name} must be constant in this mode")
    return field.constant_value()


# ----------------------------------------------------------------- N, L, L*
def op_N(i0: int, spec: ProblemSpec) -> DiffOperator:
    """``f_j -> (-g_{m,i0} d_x - a_{m,i0}) f_j`` for every component."""
    m = spec.m
    if not 1 <= i0 <= m - 1:
        raise AlgebraicError(f"i0 must be in 1..{m - 1}")
    g = _constant(spec.coefficients.g[m - 1][i0 - 1], "g_m,i0")
    a = _constant(spec.coefficients.a[m - 1][i0 - 1], "a_m,i0")
    terms = []
    for j in range(m):
        terms += [Term(-g, (("dx",),), j, j), Term(-a, (), j, j)]
    return DiffOperator(m, m, terms)


def op_L(spec: ProblemSpec) -> DiffOperator:
    """Residual operator on ``(z_1..z_m, v_1..v_{m-1})``."""
    m = spec.m
    c = spec.coefficients
    terms = []
    for i in range(m):
        terms.append(Term(1.0, (("dt",),), i, i))
        terms.append(Term(-1.0, (("divgrad", c.d[i]),), i, i))
        for j in range(m):
            terms += _collect(_term(-1.0, (("dx",),), j, i, c.g[i][j]), _term(-1.0, (), j, i, c.a[i][j]))
        if i < m - 1:
            terms.append(Term(-1.0, (), m + i, i))
    return DiffOperator(2 * m - 1, m, terms)


def op_L_star(spec: ProblemSpec) -> DiffOperator:
    """Exact (formal and discrete) adjoint of :func:`op_L`."""
    return op_L(spec).adjoint()


def _flip(n_total: int, m: int):
    return signs(n_total, range(m, n_total))


# ------------------------------------------------------------ constant case
def build_Mstar_thm1(i0: int, spec: ProblemSpec) -> DiffOperator:
    """``M*`` with ``M* ∘ L* = N*`` for constant coefficients (``2m-1 -> m``)."""
    m = spec.m
    c = spec.coefficients
    if not c.is_constant:
        raise AlgebraicError("the m-equation construction needs constant coefficients")
    if not 1 <= i0 <= m - 1:
        raise AlgebraicError(f"i0 must be in 1..{m - 1}")
    k = i0 - 1
    g = c.g[m - 1][k].constant_value()
    a = c.a[m - 1][k].constant_value()
    terms = []
    for i in range(m - 1):
        terms += [Term(g, (("dx",),), m + i, i), Term(-a, (), m + i, i)]
    last = m - 1
    terms.append(Term(1.0, (), k, last))
    terms.append(Term(1.0, (("dt",),), m + k, last))
    terms.append(Term(1.0, (("divgrad", c.d[k]),), m + k, last))
    for j in range(m - 1):
        terms += _collect(_term(-1.0, (("dx",),), m + j, last, c.g[j][k]), _term(1.0, (), m + j, last, c.a[j][k]))
    reference = DiffOperator(2 * m - 1, m, terms)
    flipped = [Term(-t.coef if t.src >= m else t.coef, t.chain, t.src, t.dst) for t in reference.terms]
    return DiffOperator(2 * m - 1, m, flipped)


def op_M_thm1(i0: int, spec: ProblemSpec) -> DiffOperator:
    """``M = (M*)^*``, mapping ``f`` (m components) to ``(z_hat, v_hat)``."""
    return build_Mstar_thm1(i0, spec).adjoint()


def apply_M_thm1(f, grid: Grid, spec: ProblemSpec, i0: int):
    """Closed-form ``M f`` for constant coefficients.

    Parameters
    ----------
    f : ndarray, shape (m, nt+1, nx+2)
        Input on all nodes (zero outside the array).

    Returns
    -------
    z_hat : ndarray, shape (m, nt+1, nx+2)
        ``f_m`` in component ``i0``, zero elsewhere.
    v_hat : ndarray, shape (m-1, nt+1, nx+2)
        ``v_i0 = (d_t - d_i0 d_xx) f_m - (g_i0i0 d_x + a_i0i0) f_m + (g_mi0 d_x + a_mi0) f_i0`` and
        ``v_j = (g_mi0 d_x + a_mi0) f_j - (g_ji0 d_x + a_ji0) f_m`` for ``j != i0``.
    """
    f = np.asarray(f, dtype=float)
    m = spec.m
    d, G, A = spec.coefficients.constant_matrices()
    k = i0 - 1
    h, tau = grid.h, grid.tau

    def dx(u):
        p = np.pad(u, [(0, 0), (1, 1)])
        return (p[:, 2:] - p[:, :-2]) / (2 * h)

    def dxx(u):
        p = np.pad(u, [(0, 0), (1, 1)])
        return (p[:, 2:] - 2 * p[:, 1:-1] + p[:, :-2]) / h**2

    def dt(u):
        p = np.pad(u, [(1, 1), (0, 0)])
        return (p[2:] - p[:-2]) / (2 * tau)

    fm = f[m - 1]
    z_hat = np.zeros_like(f)
    z_hat[k] = fm
    v_hat = np.zeros((m - 1,) + f.shape[1:])
    g, a = G[m - 1, k], A[m - 1, k]
    for j in range(m - 1):
        v_hat[j] = g * dx(f[j]) + a * f[j] - (G[j, k] * dx(fm) + A[j, k] * fm)
    v_hat[k] += dt(fm) - d[k] * dxx(fm)
    return z_hat, v_hat


# ------------------------------------------------------- two-equation cases
def _R1_chains(c: CoefficientSet):
    """``R1 = d_t + d_x(d1 d_x .) - d_x(g11 .) + a11`` as ``(coef, chain)`` pairs."""
    out = [(1.0, (("dt",),)), (1.0, (("divgrad", c.d[0]),))]
    mg = _mul(c.g[0][0])
    if mg is not None:
        out.append((-mg[0], mg[1] + (("dx",),)))
    ma = _mul(c.a[0][0])
    if ma is not None:
        out.append((ma[0], ma[1]))
    return out


def _R2_chains(c: CoefficientSet):
    """``R2 = a12 - d_x(g12 .)``."""
    out = []
    ma = _mul(c.a[0][1])
    if ma is not None:
        out.append((ma[0], ma[1]))
    mg = _mul(c.g[0][1])
    if mg is not None:
        out.append((-mg[0], mg[1] + (("dx",),)))
    return out


def _window_mask(window):
    if window is None:
        return None
    (t0, t1), (x0, x1) = window

    def mask(T, X):
        return (T >= t0) & (T <= t1) & (X > x0) & (X < x1)

    return mask


def _normalize_window(spec, window):
    if window is None:
        return ((0.0, spec.T), spec.omega)
    if len(window) == 2 and np.ndim(window[0]) == 0:
        return ((0.0, spec.T), tuple(window))
    return tuple(tuple(w) for w in window)


def build_Mstar_case_i(spec: ProblemSpec, window=None, tol_pos: float = TOL_POS) -> Compose:
    """``M*`` for ``g21 ≡ 0``, ``a21 != 0`` on ``window`` (``3 -> 2``).

    Outside ``window`` the operator returns zero (or NaN with ``pad="nan"``).
    """
    if spec.m != 2:
        raise AlgebraicError("case (i) is stated for two equations")
    c = spec.coefficients
    window = _normalize_window(spec, window)
    mask = _window_mask(window)
    a21 = c.a[1][0]
    (t0, t1), (x0, x1) = window
    tt = np.linspace(t0, t1, 64)
    xx = np.linspace(x0, x1, 66)[1:-1]
    TT, XX = np.meshgrid(tt, xx, indexing="ij")
    vals = np.broadcast_to(a21(TT, XX), TT.shape)
    # a sign change means a zero between samples even if no sample is small
    if np.min(np.abs(vals)) < tol_pos or np.min(vals) < 0 < np.max(vals):
        raise AlgebraicError("a21 vanishes (below tol_pos) on the working window")
    if np.any(c.g[1][0](TT, XX) != 0):
        raise AlgebraicError("g21 must vanish on the working window")
    terms = [Term(1.0, (), 2, 0), Term(-1.0, (), 0, 1)]
    terms += [Term(-coef, chain, 2, 1) for coef, chain in _R1_chains(c)]
    inner = DiffOperator(3, 2, terms)

    def diag(T, X):
        out = np.zeros(T.shape + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = a21(T, X)
        return out

    scale = PointwiseMatrix(diag, (2, 2), inverse=True, mask=mask, label="diag(1, a21)")
    return Compose(scale, Compose(inner, _flip(3, 2)))


def M_matrix(coeffs: CoefficientSet, t, x) -> np.ndarray:
    """The ``7 x 7`` matrix acting on ``(phi1, phi2, phi2_x, phi2_t, phi2_xx, phi2_xt, phi2_xxx)``."""
    require_orders(coeffs, CASE_II_ORDERS)
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    shape = np.broadcast(t, x).shape

    def P(name, ot=0, ox=0):
        return np.broadcast_to(coeffs.named(name).partial(ot, ox)(t, x), shape)

    a21, a21x, a21xx, a21t = P("a21"), P("a21", 0, 1), P("a21", 0, 2), P("a21", 1, 0)
    g21, g21x, g21xx, g21xxx = P("g21"), P("g21", 0, 1), P("g21", 0, 2), P("g21", 0, 3)
    g21t, g21tx = P("g21", 1, 0), P("g21", 1, 1)
    a22, a22x = P("a22"), P("a22", 0, 1)
    g22, g22x, g22xx = P("g22"), P("g22", 0, 1), P("g22", 0, 2)
    d2, d2x, d2xx = P("d2"), P("d2", 0, 1), P("d2", 0, 2)
    M = np.zeros(shape + (7, 7))
    M[..., 0, 0] = 1.0
    M[..., 1, 1], M[..., 1, 2] = -a21 + g21x, g21
    M[..., 2, 1], M[..., 2, 2], M[..., 2, 4] = -a21x + g21xx, -a21 + 2 * g21x, g21
    M[..., 3, 1], M[..., 3, 2], M[..., 3, 3], M[..., 3, 5] = -a21t + g21tx, g21t, -a21 + g21x, g21
    M[..., 4, 1], M[..., 4, 2], M[..., 4, 4], M[..., 4, 6] = (
        -a21xx + g21xxx, -2 * a21x + 3 * g21xx, -a21 + 3 * g21x, g21)
    M[..., 5, 1], M[..., 5, 2], M[..., 5, 3], M[..., 5, 4] = -a22 + g22x, -d2x + g22, -1.0, -d2
    M[..., 6, 1], M[..., 6, 2] = -a22x + g22xx, -d2xx - a22 + 2 * g22x
    M[..., 6, 4], M[..., 6, 5], M[..., 6, 6] = -2 * d2x + g22, -1.0, -d2
    return M


def build_H(coeffs: CoefficientSet, t, x) -> np.ndarray:
    """The ``6 x 6`` matrix ``H`` (lower-right block of :func:`M_matrix`)."""
    return M_matrix(coeffs, t, x)[..., 1:, 1:]


def det_H_numeric(coeffs: CoefficientSet, t, x):
    """``det H`` by LU factorization (LAPACK)."""
    return np.linalg.det(build_H(coeffs, t, x))


def det_H_remark_expansion(coeffs: CoefficientSet, t, x):
    """The 30-term closed-form reference expansion of the determinant.

    The exact determinant of ``H`` equals ``g21`` times this expression;
    see :func:`det_H_explicit`.
    """
    require_orders(coeffs, CASE_II_ORDERS)

    def P(name, ot=0, ox=0):
        return coeffs.named(name).partial(ot, ox)(t, x)

    a21, ax, axx, at = P("a21"), P("a21", 0, 1), P("a21", 0, 2), P("a21", 1, 0)
    g, gx, gxx, gxxx = P("g21"), P("g21", 0, 1), P("g21", 0, 2), P("g21", 0, 3)
    gt, gxt = P("g21", 1, 0), P("g21", 1, 1)
    a22x = P("a22", 0, 1)
    g22, g22x, g22xx = P("g22"), P("g22", 0, 1), P("g22", 0, 2)
    d, dx, dxx = P("d2"), P("d2", 0, 1), P("d2", 0, 2)
    return (
        2 * ax * dx * g**2 - 4 * ax * d * gx * g + axx * d * g**2 + 2 * a21 * ax * d * g - ax * g**2 * g22
        + at * g**2 - 4 * a21 * dx * gx * g + a21 * dxx * g**2 + a21**2 * dx * g - 3 * a21 * d * gxx * g
        + 6 * a21 * d * gx**2 - 2 * a21**2 * d * gx + a21 * gx * g * g22 - a21 * gt * g - a21 * g**2 * g22x
        + a22x * g**3 - dxx * gx * g**2 - 2 * dx * gxx * g**2 + 3 * dx * gx**2 * g - d * gxxx * g**2
        + 5 * d * gx * gxx * g - 4 * d * gx**3 + gx * g**2 * g22x + gxx * g**2 * g22 - gx**2 * g * g22
        - gxt * g**2 + gx * gt * g - g**3 * g22xx
    )


def det_H_explicit(coeffs: CoefficientSet, t, x):
    """Closed-form ``det H`` (``g21`` times :func:`det_H_remark_expansion`)."""
    return coeffs.named("g21").partial(0, 0)(t, x) * det_H_remark_expansion(coeffs, t, x)


def H_template() -> sp.Matrix:
    """Symbolic ``H`` in terms of undetermined coefficient functions (for audits)."""
    names = ["a21", "g21", "a22", "g22", "d2"]
    a21, g21, a22, g22, d2 = [sp.Function(n)(T_SYM, X_SYM) for n in names]
    D = sp.diff
    return sp.Matrix([
        [-a21 + D(g21, X_SYM), g21, 0, 0, 0, 0],
        [-D(a21, X_SYM) + D(g21, X_SYM, 2), -a21 + 2 * D(g21, X_SYM), 0, g21, 0, 0],
        [-D(a21, T_SYM) + D(g21, T_SYM, X_SYM), D(g21, T_SYM), -a21 + D(g21, X_SYM), 0, g21, 0],
        [-D(a21, X_SYM, 2) + D(g21, X_SYM, 3), -2 * D(a21, X_SYM) + 3 * D(g21, X_SYM, 2), 0,
         -a21 + 3 * D(g21, X_SYM), 0, g21],
        [-a22 + D(g22, X_SYM), g22 - D(d2, X_SYM), -1, -d2, 0, 0],
        [-D(a22, X_SYM) + D(g22, X_SYM, 2), -a22 + 2 * D(g22, X_SYM) - D(d2, X_SYM, 2), 0,
         g22 - 2 * D(d2, X_SYM), -1, -d2],
    ])


def op_S(spec: ProblemSpec) -> DiffOperator:
    """The ``7 x 3`` operator matrix ``S`` (``3 -> 7``)."""
    c = spec.coefficients
    R1, R2 = _R1_chains(c), _R2_chains(c)
    outer = {1: (), 2: (("dx",),), 3: (("dt",),), 4: (("dxx",),)}
    terms = [Term(1.0, (), 2, 0)]
    for row, after in outer.items():
        terms.append(Term(1.0, after, 0, row))
        terms += [Term(coef, chain + after, 2, row) for coef, chain in R1]
    for row, after in {5: (), 6: (("dx",),)}.items():
        terms.append(Term(1.0, after, 1, row))
        terms += [Term(coef, chain + after, 2, row) for coef, chain in R2]
    return DiffOperator(3, 7, terms)


def op_L_star_reference(spec: ProblemSpec) -> DiffOperator:
    """Adjoint with the trailing rows written as ``+phi_i`` (sign convention of the reference ``Q``)."""
    return Compose(_flip(2 * spec.m - 1, spec.m), op_L_star(spec))


def op_Q(spec: ProblemSpec) -> Compose:
    """``Q = S ∘ L*`` (reference sign convention), ``2 -> 7``."""
    return Compose(op_S(spec), op_L_star_reference(spec))


def Q_via_M(spec: ProblemSpec, phi):
    """``M (phi1, phi2, phi2_x, phi2_t, phi2_xx, phi2_xt, phi2_xxx)`` symbolically."""
    c = spec.coefficients
    p1, p2 = (sp.sympify(e) for e in phi)
    D = sp.diff
    vec = [p1, p2, D(p2, X_SYM), D(p2, T_SYM), D(p2, X_SYM, 2), D(p2, X_SYM, T_SYM), D(p2, X_SYM, 3)]
    f = {n: c.named(n).sympy_expr() for n in CASE_II_ORDERS}
    a21, g21, a22, g22, d2 = f["a21"], f["g21"], f["a22"], f["g22"], f["d2"]
    H = H_template().subs({
        sp.Function("a21")(T_SYM, X_SYM): a21, sp.Function("g21")(T_SYM, X_SYM): g21,
        sp.Function("a22")(T_SYM, X_SYM): a22, sp.Function("g22")(T_SYM, X_SYM): g22,
        sp.Function("d2")(T_SYM, X_SYM): d2,
    }).doit()
    M = sp.zeros(7, 7)
    M[0, 0] = 1
    M[1:, 1:] = H
    return list(M * sp.Matrix(vec))


def build_Mstar_case_ii(spec: ProblemSpec, window=None, det_rtol: float = 1e-12) -> Compose:
    """``M* = P M^{-1} S`` (composed with the sign flip), ``3 -> 2``.

    ``M^{-1}`` is formed node by node inside ``window``; nodes with
    ``|det M| < det_rtol ||M||^7`` raise
    :class:`~fictitious_control.operators.SingularNodeError` when applied.
    """
    if spec.m != 2:
        raise AlgebraicError("case (ii) is stated for two equations")
    require_orders(spec.coefficients, CASE_II_ORDERS)
    window = _normalize_window(spec, window)
    coeffs = spec.coefficients
    Pinv = PointwiseMatrix(lambda T, X: M_matrix(coeffs, T, X), (7, 7), inverse=True, rows=(0, 1),
                           mask=_window_mask(window), det_rtol=det_rtol, label="M")
    return Compose(Pinv, Compose(op_S(spec), _flip(3, 2)))


def algebraic_operator(spec: ProblemSpec, mode: str, i0: Optional[int] = None, window=None):
    """``M`` for a mode: ``"theorem1"``, ``"case_i"`` or ``"case_ii"``."""
    if mode == "theorem1":
        return op_M_thm1(i0, spec)
    if mode == "case_i":
        return build_Mstar_case_i(spec, window).adjoint()
    if mode == "case_ii":
        return build_Mstar_case_ii(spec, window).adjoint()
    raise AlgebraicError(f"unknown mode {mode!r}")


def algebraic_target(spec: ProblemSpec, mode: str, i0: Optional[int] = None):
    """The right-hand operator: ``N`` (constant case) or ``None`` for the identity."""
    return op_N(i0, spec) if mode == "theorem1" else None


# ------------------------------------------------------------- verification
def sample_on_grid(exprs, grid: Grid) -> np.ndarray:
    """Evaluate sympy expressions in ``(t, x)`` on all nodes: ``(n, nt+1, nx+2)``."""
    T, X = grid.mesh()
    out = []
    for e in exprs:
        fn = sp.lambdify((T_SYM, X_SYM), sp.sympify(e), modules="numpy")
        out.append(np.broadcast_to(np.asarray(fn(T, X), dtype=float), T.shape))
    return np.array(out)


def fit_order(hs, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(h)``."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if np.any(errors <= 0):
        return float("nan")
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


def verify_LM_identity(M_op, N_op_or_identity, spec: ProblemSpec, f_samples, grids: Sequence[Grid],
                       L_op=None, adjoint_form: bool = False):
    """Residuals of ``L ∘ M - N`` (or ``M* ∘ L* - Id``) across grids.

    Parameters
    ----------
    M_op : Operator
        ``M`` (or ``M*`` when ``adjoint_form``).
    N_op_or_identity : Operator or None
        Reference operator applied exactly (symbolically); ``None`` means
        the identity.
    f_samples : list of list of sympy expressions
        Inputs in ``t`` and ``x``.
    grids : sequence of Grid
        Refinement levels.
    L_op : Operator, optional
        Defaults to ``L`` (or ``L*`` when ``adjoint_form``).

    Returns
    -------
    dict
        ``h``, ``residual`` (max over samples of the discrete L² norm over
        nodes whose stencils stay inside the arrays), ``relative``,
        ``max_abs`` and the fitted ``order``.
    """
    if L_op is None:
        L_op = op_L_star(spec) if adjoint_form else op_L(spec)
    composite = Compose(M_op, L_op) if adjoint_form else Compose(L_op, M_op)
    residuals, relative, max_abs = [], [], []
    refs = []
    for f in f_samples:
        refs.append(list(f) if N_op_or_identity is None else N_op_or_identity.apply_exact(f))
    for grid in grids:
        worst = worst_rel = worst_abs = 0.0
        for f, ref in zip(f_samples, refs):
            fa = sample_on_grid(f, grid)
            got = composite.apply(fa, grid, pad="nan")
            want = sample_on_grid(ref, grid)
            diff = got - want
            ok = np.isfinite(diff)
            if not np.any(ok):
                raise AlgebraicError("no interior nodes left after NaN padding; refine the grid")
            r = math.sqrt(grid.h * grid.tau * float(np.sum(diff[ok] ** 2)))
            scale = math.sqrt(grid.h * grid.tau * float(np.sum(want[ok] ** 2)))
            worst = max(worst, r)
            worst_rel = max(worst_rel, r / scale if scale > 0 else (0.0 if r == 0 else math.inf))
            worst_abs = max(worst_abs, float(np.max(np.abs(diff[ok]))))
        residuals.append(worst)
        relative.append(worst_rel)
        max_abs.append(worst_abs)
    hs = [g.h for g in grids]
    order = fit_order(hs, residuals) if len(grids) > 1 and all(r > 0 for r in residuals) else float("nan")
    return {"h": hs, "residual": residuals, "relative": relative, "max_abs": max_abs, "order": order}


# --------------------------------------------------------------- Poincaré
def _dirichlet_laplacian(n: int, h: float) -> sps.csc_matrix:
    return sps.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csc") / h**2


def inverse_power(K: sps.spmatrix, W: Optional[sps.spmatrix] = None, tol: float = 1e-13,
                  max_iter: int = 10000, seed: int = 0) -> float:
    """Smallest eigenvalue of the SPD pencil ``(K, W)`` (``W = I`` by default)."""
    n = K.shape[0]
    W = sps.identity(n, format="csc") if W is None else W
    lu = spla.splu(sps.csc_matrix(K))
    v = np.random.default_rng(seed).standard_normal(n)
    v /= math.sqrt(v @ (W @ v))
    mu = (v @ (K @ v))
    for _ in range(max_iter):
        w = lu.solve(W @ v)
        w /= math.sqrt(w @ (W @ w))
        new = w @ (K @ w)
        v = w
        if abs(new - mu) <= tol * abs(new):
            mu = new
            break
        mu = new
    return float(mu)


def poincare_rayleigh(g, a: float, grid_or_nx, domain=(0.0, 1.0)) -> float:
    """Smallest value of ``∫|g u' - a u|^2 / ∫u^2`` over discrete ``H^1_0``.

    The quadratic form is ``g^2 (-Δ_h) + a^2 I``: the cross term
    ``-2 g a ∫ u u'`` vanishes for functions vanishing on the boundary.
    The reciprocal is the empirical Poincaré-type constant.
    """
    g2 = float(np.sum(np.asarray(g, dtype=float) ** 2))
    if g2 == 0.0 and a == 0.0:
        raise AlgebraicError("g and a cannot both vanish")
    nx, h = _nx_h(grid_or_nx, domain)
    if g2 == 0.0:
        return float(a * a)
    K = g2 * _dirichlet_laplacian(nx, h) + a * a * sps.identity(nx, format="csc")
    return inverse_power(K)


def poincare_weighted_oracle(g: float, a: float, grid_or_nx, domain=(0.0, 1.0)) -> float:
    """Independent value via ``u = exp(a x / g) w``: a weighted Dirichlet pencil.

    Minimizes ``g^2 ∫ e^{2ax/g} |w'|^2 / ∫ e^{2ax/g} w^2``, whose continuous
    value is ``g^2 π^2/L^2 + a^2``.
    """
    if g == 0.0:
        raise AlgebraicError("the change of variables needs g != 0")
    nx, h = _nx_h(grid_or_nx, domain)
    x = domain[0] + h * np.arange(nx + 2)
    c = a / g
    wmid = np.exp(2 * c * (x[:-1] + 0.5 * h))
    main = (wmid[:-1] + wmid[1:]) / h**2
    off = -wmid[1:-1] / h**2
    K = g * g * sps.diags([off, main, off], [-1, 0, 1], format="csc")
    W = sps.diags(np.exp(2 * c * x[1:-1]), format="csc")
    return inverse_power(K, W)


def _nx_h(grid_or_nx, domain):
    if isinstance(grid_or_nx, Grid):
        return grid_or_nx.nx, grid_or_nx.h
    nx = int(grid_or_nx)
    return nx, (domain[1] - domain[0]) / (nx + 1)


def write_det_H_csv(spec: ProblemSpec, window, path, samples: int = 64) -> None:
    """Heat-map data ``t, x, detH`` on the cell-centred sample grid of ``window``."""
    (t0, t1), (x0, x1) = window
    tt = t0 + (np.arange(samples) + 0.5) * (t1 - t0) / samples
    xx = x0 + (np.arange(samples) + 0.5) * (x1 - x0) / samples
    TT, XX = np.meshgrid(tt, xx, indexing="ij")
    det = det_H_numeric(spec.coefficients, TT, XX)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,x,detH\n")
        for t, x, v in zip(TT.ravel(), XX.ravel(), det.ravel()):
            fh.write(f"{t:.17g},{x:.17g},{v:.17g}\n")
