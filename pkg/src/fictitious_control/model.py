"""Problem definitions, coefficient fields and controllability conditions.

A :class:`ProblemSpec` describes one control problem for the system

    d_t y = d_x(D d_x y) + G d_x y + A y + 1_omega B u   in (0, T) x (x_lo, x_hi),

with homogeneous Dirichlet data, ``m`` equations and ``m - 1`` controls
acting on the first ``m - 1`` equations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp

from .expressions import T_SYM, X_SYM, parse_expression

TOL_POS = 1e-8

# Derivative orders required by the second condition of the two-equation
# theorem, keyed by coefficient name: (t order, x order, mixed t-x order).
CASE_II_ORDERS = {
    "a21": (1, 2),
    "g21": (1, 3),
    "a22": (0, 1),
    "g22": (0, 2),
    "d2": (0, 2),
}


class CoefficientError(ValueError):
    """Raised when a coefficient derivative is requested beyond its declared order."""


class CoefficientField:
    """A scalar coefficient ``c(t, x)`` with access to its partial derivatives.

    Three sources are supported:

    * a sympy expression in ``t`` and ``x`` (derivatives are exact),
    * a callable ``f(t, x)``, optionally with a dict of derivative callables
      ``{(i, j): d_t^i d_x^j f}``; missing orders fall back to central
      finite differences (with a warning),
    * a constant.

    Parameters
    ----------
    source : sympy.Expr, callable, float or str
        Definition of the field. Strings are parsed with
        :func:`~fictitious_control.expressions.parse_expression`.
    max_orders : tuple of int, optional
        Highest ``(t_order, x_order)`` that may be requested.
    derivatives : dict, optional
        Explicit derivative callbacks for callable sources.
    scale : float, optional
        Length scale for the finite-difference step.
    name : str, optional
        Label used in diagnostics.
    """

    def __init__(self, source, max_orders=(2, 6), derivatives=None, scale=1.0, name=""):
        self.max_orders = tuple(int(v) for v in max_orders)
        self.name = name
        self.scale = float(scale)
        self._derivatives = dict(derivatives or {})
        self._cache = {}
        if isinstance(source, str):
            source = parse_expression(source)
        if isinstance(source, (int, float, np.floating, np.integer)):
            source = sp.Float(float(source)) if not float(source).is_integer() else sp.Integer(int(source))
        if isinstance(source, sp.Basic):
            self.expr = sp.sympify(source)
            self._func = None
        elif callable(source):
            self.expr = None
            self._func = source
        else:
            raise TypeError(f"unsupported coefficient source {source!r}")

    # ------------------------------------------------------------------ basics
    @classmethod
    def constant(cls, value, name=""):
        return cls(float(value), name=name)

    @property
    def is_symbolic(self) -> bool:
        return self.expr is not None

    @property
    def is_constant(self) -> bool:
        if self.expr is not None:
            return not (self.expr.free_symbols & {T_SYM, X_SYM})
        return False

    @property
    def depends_on_t(self) -> bool:
        if self.expr is not None:
            return T_SYM in self.expr.free_symbols
        return True

    def constant_value(self) -> float:
        if not self.is_constant:
            raise CoefficientError(f"coefficient {self.name or self.expr} is not constant")
        return float(self.expr)

    def __call__(self, t, x):
        return self.partial(0, 0)(t, x)

    def eval(self, t, x):
        """Evaluate the field, broadcasting ``t`` and ``x``."""
        return self.partial(0, 0)(t, x)

    def partial(self, order_t: int = 0, order_x: int = 0) -> Callable:
        """Return the callable ``d_t^order_t d_x^order_x c``.

        Raises
        ------
        CoefficientError
            If the requested order exceeds ``max_orders``.
        """
        if order_t < 0 or order_x < 0:
            raise CoefficientError("derivative orders must be nonnegative")
        if order_t > self.max_orders[0] or order_x > self.max_orders[1]:
            raise CoefficientError(
                f"coefficient {self.name or '?'}: derivative (t^{order_t}, x^{order_x}) "
                f"requested beyond declared max orders {self.max_orders}"
            )
        key = (order_t, order_x)
        if key in self._cache:
            return self._cache[key]
        if self.expr is not None:
            fn = _lambdify(sp.diff(self.expr, T_SYM, order_t, X_SYM, order_x))
        elif key == (0, 0):
            base = self._func
            fn = lambda t, x: np.broadcast_to(np.asarray(base(t, x), dtype=float), np.broadcast(t, x).shape) * 1.0
        elif key in self._derivatives:
            fn = self._derivatives[key]
        else:
            warnings.warn(
                f"coefficient {self.name or '?'}: using finite differences for (t^{order_t}, x^{order_x})",
                stacklevel=2,
            )
            fn = self._fd_partial(order_t, order_x)
        self._cache[key] = fn
        return fn

    def sympy_expr(self) -> sp.Expr:
        if self.expr is None:
            raise CoefficientError(f"coefficient {self.name or '?'} has no symbolic form")
        return self.expr

    def _fd_partial(self, order_t, order_x):
        base = self.partial(0, 0)

        def step(order):
            return self.scale * np.finfo(float).eps ** (1.0 / (order + 2))

        def diff_x(f, n):
            if n == 0:
                return f
            hx = step(n)
            weights = [(-1) ** k * math.comb(n, k) for k in range(n + 1)]
            return lambda t, x: sum(
                w * f(t, np.asarray(x) + (n / 2 - k) * hx) for k, w in enumerate(weights)
            ) / hx**n

        def diff_t(f, n):
            if n == 0:
                return f
            ht = step(n)
            weights = [(-1) ** k * math.comb(n, k) for k in range(n + 1)]
            return lambda t, x: sum(
                w * f(np.asarray(t) + (n / 2 - k) * ht, x) for k, w in enumerate(weights)
            ) / ht**n

        return diff_t(diff_x(base, order_x), order_t)

    # --------------------------------------------------------------- arithmetic
    def _combine(self, other, op):
        if not isinstance(other, CoefficientField):
            other = CoefficientField(other)
        if self.expr is not None and other.expr is not None:
            return CoefficientField(
                op(self.expr, other.expr),
                max_orders=tuple(map(min, self.max_orders, other.max_orders)),
            )
        f, g = self.partial(0, 0), other.partial(0, 0)
        return CoefficientField(lambda t, x: op(f(t, x), g(t, x)),
                                max_orders=tuple(map(min, self.max_orders, other.max_orders)))

    def __add__(self, other):
        return self._combine(other, lambda a, b: a + b)

    __radd__ = __add__

    def __mul__(self, other):
        return self._combine(other, lambda a, b: a * b)

    __rmul__ = __mul__

    def __sub__(self, other):
        return self._combine(other, lambda a, b: a - b)

    def __neg__(self):
        return self * -1.0

    def __repr__(self):
        src = self.expr if self.expr is not None else getattr(self._func, "__name__", "callable")
        return f"CoefficientField({src}, max_orders={self.max_orders})"


def _lambdify(expr):
    fn = sp.lambdify((T_SYM, X_SYM), expr, modules="numpy")

    def wrapped(t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(fn(t, x), dtype=float), np.broadcast(t, x).shape) * 1.0

    return wrapped


def as_field(value, name="", max_orders=(2, 6)) -> CoefficientField:
    if isinstance(value, CoefficientField):
        return value
    return CoefficientField(value, max_orders=max_orders, name=name)


@dataclass(frozen=True)
class CoefficientSet:
    """Diffusion, first-order and zero-order coefficients of an ``m``-system.

    ``g[i][j]`` multiplies ``d_x y_j`` in equation ``i`` and ``a[i][j]``
    multiplies ``y_j``; indices are 0-based here, while the named
    conditions use 1-based names (``g21`` is ``g[1][0]``).
    """

    d: tuple
    g: tuple
    a: tuple

    def __post_init__(self):
        m = len(self.d)
        d = tuple(as_field(v, name=f"d{i + 1}") for i, v in enumerate(self.d))
        g = tuple(tuple(as_field(v, name=f"g{i + 1}{j + 1}") for j, v in enumerate(row))
                  for i, row in enumerate(self.g))
        a = tuple(tuple(as_field(v, name=f"a{i + 1}{j + 1}") for j, v in enumerate(row))
                  for i, row in enumerate(self.a))
        if len(g) != m or len(a) != m or any(len(r) != m for r in g + a):
            raise ValueError("coefficient matrices must be m x m with m = len(d)")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "a", a)

    @property
    def m(self) -> int:
        return len(self.d)

    @property
    def B_pattern(self) -> np.ndarray:
        """Control injection matrix: identity on the first ``m - 1`` rows, zero last row."""
        return np.vstack([np.eye(self.m - 1), np.zeros((1, self.m - 1))])

    @property
    def is_constant(self) -> bool:
        return all(f.is_constant for f in self.fields())

    @property
    def depends_on_t(self) -> bool:
        return any(f.depends_on_t for f in self.fields())

    def fields(self):
        yield from self.d
        for row in self.g + self.a:
            yield from row

    def named(self, name: str) -> CoefficientField:
        """Look up a field by its 1-based name, e.g. ``"g21"`` or ``"d2"``."""
        kind, idx = name[0], name[1:]
        if kind == "d":
            return self.d[int(idx) - 1]
        i, j = int(idx[0]) - 1, int(idx[1]) - 1
        return (self.g if kind == "g" else self.a)[i][j]

    def constant_matrices(self):
        """Return ``(d, G, A)`` as numpy arrays (constant coefficients only)."""
        d = np.array([f.constant_value() for f in self.d])
        G = np.array([[f.constant_value() for f in row] for row in self.g])
        A = np.array([[f.constant_value() for f in row] for row in self.a])
        return d, G, A

    @classmethod
    def constant(cls, d, G=None, A=None):
        m = len(d)
        G = np.zeros((m, m)) if G is None else np.asarray(G, dtype=float)
        A = np.zeros((m, m)) if A is None else np.asarray(A, dtype=float)
        return cls(tuple(float(v) for v in d),
                   tuple(tuple(float(v) for v in row) for row in G),
                   tuple(tuple(float(v) for v in row) for row in A))


@dataclass(frozen=True)
class ProblemSpec:
    """Single source of truth for one control problem.

    Windows are open intervals ``(lo, hi)``; the chain
    ``omega2 ⊂⊂ omega1 ⊂⊂ omega0 ⊂⊂ omega ⊂ domain`` is checked by
    :func:`validate_spec`, not at construction.
    """

    coefficients: CoefficientSet
    T: float
    domain: tuple = (0.0, 1.0)
    omega: tuple = (0.3, 0.7)
    omega0: tuple = (0.4, 0.6)
    omega1: tuple = (0.42, 0.58)
    omega2: tuple = (0.45, 0.55)
    space_dim: int = 1
    name: str = ""

    @property
    def m(self) -> int:
        return self.coefficients.m

    @property
    def control_count(self) -> int:
        return self.m - 1

    @property
    def length(self) -> float:
        return self.domain[1] - self.domain[0]


def _inside(inner, outer, strict=True):
    if strict:
        return outer[0] < inner[0] < inner[1] < outer[1]
    return outer[0] <= inner[0] < inner[1] <= outer[1]


def validate_spec(spec: ProblemSpec, samples: int = 64, rng=None) -> list[str]:
    """Return the list of violated invariants of ``spec`` (empty when valid)."""
    issues = []
    lo, hi = spec.domain
    if not lo < hi:
        issues.append("domain bounds not increasing")
    if not spec.T > 0:
        issues.append("horizon T must be positive")
    if spec.m < 2:
        issues.append("at least two equations required")
    if spec.control_count != spec.m - 1:
        issues.append("control count must equal m - 1")
    if not _inside(spec.omega, spec.domain, strict=False):
        issues.append("control window not inside the domain")
    chain = [spec.omega2, spec.omega1, spec.omega0, spec.omega]
    if not all(_inside(a, b) for a, b in zip(chain[:-1], chain[1:])):
        issues.append("window nesting violated")
    if spec.T > 0 and lo < hi:
        tt = np.linspace(0.0, spec.T, samples)
        xx = np.linspace(lo, hi, samples)
        TT, XX = np.meshgrid(tt, xx, indexing="ij")
        d0 = min(float(np.min(f(TT, XX))) for f in spec.coefficients.d)
        if not np.isfinite(d0) or d0 <= 0:
            issues.append("ellipticity violated")
    rng = np.random.default_rng(0) if rng is None else rng
    if spec.coefficients.is_constant and spec.T > 0:
        pts = rng.uniform(size=(8, 2)) * [spec.T, hi - lo] + [0.0, lo]
        for f in spec.coefficients.fields():
            vals = f(pts[:, 0], pts[:, 1])
            if np.ptp(vals) > 0:
                issues.append(f"coefficient {f.name} flagged constant but varies")
                break
    return issues


def ellipticity_constant(spec: ProblemSpec, samples: int = 64) -> float:
    """Sampled ``d0 = min_l min_{t,x} d_l(t, x)``."""
    tt = np.linspace(0.0, spec.T, samples)
    xx = np.linspace(*spec.domain, samples)
    TT, XX = np.meshgrid(tt, xx, indexing="ij")
    return min(float(np.min(f(TT, XX))) for f in spec.coefficients.d)


def find_i0(G, A, tol: float = 0.0) -> Optional[int]:
    """Smallest 1-based index ``i0 < m`` with ``g[m, i0] != 0`` or ``a[m, i0] != 0``.

    Parameters
    ----------
    G : array_like, shape (m, m) or (m, m, N)
        First-order coefficients; entries may be vectors in dimension ``N``.
    A : array_like, shape (m, m)
        Zero-order coefficients.
    tol : float
        Magnitudes at or below ``tol`` count as zero.

    Returns
    -------
    int or None
        ``None`` when the last equation receives no coupling from the
        controlled ones, in which case the system is not null controllable.
    """
    if isinstance(G, CoefficientSet):
        raise TypeError("pass constant arrays; use find_i0_for(coeffs) for coefficient sets")
    G = np.asarray(G, dtype=float)
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    if A.shape != (m, m) or G.shape[:2] != (m, m):
        raise ValueError("G and A must have leading shape (m, m)")
    for i in range(m - 1):
        g = np.atleast_1d(G[m - 1, i])
        if np.any(np.abs(g) > tol) or abs(A[m - 1, i]) > tol:
            return i + 1
    return None


def find_i0_for(coeffs: CoefficientSet) -> Optional[int]:
    """:func:`find_i0` for a constant :class:`CoefficientSet`."""
    if not coeffs.is_constant:
        raise CoefficientError("the rank-type condition requires constant coefficients")
    _, G, A = coeffs.constant_matrices()
    return find_i0(G, A)


def _window_samples(window, samples):
    (t0, t1), (x0, x1) = window
    # cell-centred samples stay strictly inside the open window
    tt = t0 + (np.arange(samples) + 0.5) * (t1 - t0) / samples
    xx = x0 + (np.arange(samples) + 0.5) * (x1 - x0) / samples
    return np.meshgrid(tt, xx, indexing="ij")


def _check_window(spec: ProblemSpec, window):
    (t0, t1), (x0, x1) = window
    if not (0.0 <= t0 < t1 <= spec.T and spec.omega[0] <= x0 < x1 <= spec.omega[1]):
        raise ValueError(f"window {window} is not inside (0, T) x omega")


def check_condition_case_i(spec: ProblemSpec, window, samples: int = 64, tol_pos: float = TOL_POS) -> bool:
    """First two-equation condition: ``g21 ≡ 0`` and ``|a21| >= tol_pos`` on ``window``.

    ``window`` is ``((t0, t1), (x0, x1))``. ``a21`` must also keep a single
    sign, since a continuous function that changes sign vanishes somewhere.
    """
    if spec.m != 2:
        raise ValueError("case (i) is stated for two equations")
    _check_window(spec, window)
    TT, XX = _window_samples(window, samples)
    g21 = spec.coefficients.named("g21")(TT, XX)
    a21 = spec.coefficients.named("a21")(TT, XX)
    if np.any(g21 != 0):
        return False
    if np.min(np.abs(a21)) < tol_pos:
        return False
    return bool(np.all(a21 > 0) or np.all(a21 < 0))


def check_condition_case_ii(spec: ProblemSpec, window, C_bound: float, samples: int = 64) -> bool:
    """Second two-equation condition: ``min |det H| > C_bound`` on ``window``."""
    return min_abs_det_H(spec, window, samples)[0] > C_bound


def min_abs_det_H(spec: ProblemSpec, window, samples: int = 64):
    """Return ``(min |det H|, (t, x) argmin)`` over the sample grid of ``window``."""
    from .algebraic import det_H_numeric

    if spec.m != 2:
        raise ValueError("case (ii) is stated for two equations")
    if spec.space_dim != 1:
        raise ValueError("case (ii) is stated in one space dimension")
    require_orders(spec.coefficients, CASE_II_ORDERS)
    _check_window(spec, window)
    TT, XX = _window_samples(window, samples)
    det = np.abs(det_H_numeric(spec.coefficients, TT, XX))
    k = int(np.argmin(det))
    return float(det.flat[k]), (float(TT.flat[k]), float(XX.flat[k]))


def require_orders(coeffs: CoefficientSet, orders: dict):
    """Raise :class:`CoefficientError` if a field declares too few derivatives."""
    for name, (ot, ox) in orders.items():
        f = coeffs.named(name)
        if f.max_orders[0] < ot or f.max_orders[1] < ox:
            raise CoefficientError(
                f"coefficient {name} declares orders {f.max_orders}, needs at least {(ot, ox)}"
            )
