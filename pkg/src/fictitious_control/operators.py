"""Linear differential operators on vector grid functions.

An operator maps an array of shape ``(n_in, nt+1, nx+2)`` (components,
time nodes, spatial nodes including the two boundary nodes) to an array of
shape ``(n_out, nt+1, nx+2)``.  Every term of a :class:`DiffOperator` is a
chain of elementary factors applied right to left in the mathematical
sense, i.e. the first factor of the chain acts first:

``("dt",)``        centred time difference
``("dx",)``        centred space difference
``("dxx",)``       three-point second difference
``("mul", c)``     multiplication by a coefficient field
``("divgrad", d)`` conservative ``d_x(d d_x .)`` with ``d`` at midpoints

Values outside the array are taken as zero (``pad="zero"``) or NaN
(``pad="nan"``).  With zero padding the centred stencils are exactly
antisymmetric/symmetric, so :meth:`Operator.adjoint` (reverse the chain,
flip the sign of odd factors) is the exact matrix transpose with respect
to the ``h tau`` weighted inner product.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp

from .discretize import Grid, Trajectory
from .expressions import T_SYM, X_SYM
from .model import CoefficientField

_ODD = {"dt", "dx"}


@lru_cache(maxsize=512)
def _sample(field: CoefficientField, grid: Grid, where: str):
    t = grid.t
    if where == "nodes":
        x = grid.x
    elif where == "mid_left":
        x = grid.x - 0.5 * grid.h
    else:
        x = grid.x + 0.5 * grid.h
    T, X = np.meshgrid(t, x, indexing="ij")
    out = np.asarray(field(T, X), dtype=float)
    out.setflags(write=False)
    return out


def _padded(u, axis, pad):
    width = [(0, 0)] * u.ndim
    width[axis] = (1, 1)
    return np.pad(u, width, constant_values=np.nan if pad == "nan" else 0.0)


def _apply_factor(factor, u, grid: Grid, pad: str):
    kind = factor[0]
    if kind == "mul":
        return _sample(factor[1], grid, "nodes") * u
    if kind == "dt":
        p = _padded(u, 0, pad)
        return (p[2:] - p[:-2]) / (2.0 * grid.tau)
    p = _padded(u, 1, pad)
    if kind == "dx":
        return (p[:, 2:] - p[:, :-2]) / (2.0 * grid.h)
    if kind == "dxx":
        return (p[:, 2:] - 2.0 * p[:, 1:-1] + p[:, :-2]) / grid.h**2
    if kind == "divgrad":
        dl = _sample(factor[1], grid, "mid_left")
        dr = _sample(factor[1], grid, "mid_right")
        return (dr * (p[:, 2:] - p[:, 1:-1]) - dl * (p[:, 1:-1] - p[:, :-2])) / grid.h**2
    raise ValueError(f"unknown factor {kind!r}")


def _exact_factor(factor, expr):
    kind = factor[0]
    if kind == "mul":
        return factor[1].sympy_expr() * expr
    if kind == "dt":
        return sp.diff(expr, T_SYM)
    if kind == "dx":
        return sp.diff(expr, X_SYM)
    if kind == "dxx":
        return sp.diff(expr, X_SYM, 2)
    if kind == "divgrad":
        return sp.diff(factor[1].sympy_expr() * sp.diff(expr, X_SYM), X_SYM)
    raise ValueError(f"unknown factor {kind!r}")


def _as_array(f, n_in):
    if isinstance(f, Trajectory):
        f = f.full()
    f = np.asarray(f, dtype=float)
    if f.ndim == 2:
        f = f[None]
    if f.shape[0] != n_in:
        raise ValueError(f"operator expects {n_in} components, got {f.shape[0]}")
    return f


class Operator:
    """Base class: linear map between vector grid functions."""

    n_in: int
    n_out: int

    def apply(self, f, grid: Grid, pad: str = "zero") -> np.ndarray:
        raise NotImplementedError

    def adjoint(self) -> "Operator":
        raise NotImplementedError

    def apply_exact(self, exprs):
        raise NotImplementedError(f"{type(self).__name__} has no symbolic application")

    def describe(self) -> str:
        return repr(self)

    def __matmul__(self, other: "Operator") -> "Operator":
        return Compose(self, other)

    def __add__(self, other: "Operator") -> "Operator":
        return Sum([self, other])


@dataclass(frozen=True)
class Term:
    """``coef * chain(f[src])`` contributing to output component ``dst``."""

    coef: float
    chain: tuple
    src: int
    dst: int

    @property
    def t_order(self) -> int:
        return sum(1 for f in self.chain if f[0] == "dt")

    @property
    def x_order(self) -> int:
        return sum({"dx": 1, "dxx": 2, "divgrad": 2}.get(f[0], 0) for f in self.chain)

    def adjoint(self) -> "Term":
        sign = (-1) ** sum(1 for f in self.chain if f[0] in _ODD)
        return Term(sign * self.coef, tuple(reversed(self.chain)), self.dst, self.src)

    def then(self, chain: tuple, coef: float = 1.0) -> "Term":
        """Apply ``chain`` after this term."""
        return Term(self.coef * coef, self.chain + tuple(chain), self.src, self.dst)

    def label(self) -> str:
        parts = []
        for f in self.chain:
            if f[0] == "mul":
                parts.append(f"[{_field_label(f[1])}]")
            elif f[0] == "divgrad":
                parts.append(f"dx({_field_label(f[1])} dx)")
            else:
                parts.append(f[0])
        body = " . ".join(reversed(parts)) or "id"
        return f"{self.coef:+.6g} * {body} (in {self.src + 1} -> out {self.dst + 1})"


def _field_label(field):
    return str(field.expr) if field.expr is not None else (field.name or "c")


class DiffOperator(Operator):
    """Finite sum of :class:`Term` objects."""

    def __init__(self, n_in: int, n_out: int, terms: Sequence[Term] = ()):
        self.n_in = n_in
        self.n_out = n_out
        self.terms = [t for t in terms if t.coef != 0.0]
        for t in self.terms:
            if not (0 <= t.src < n_in and 0 <= t.dst < n_out):
                raise ValueError(f"term {t} out of range for {n_in}->{n_out}")

    @classmethod
    def identity(cls, n: int) -> "DiffOperator":
        return cls(n, n, [Term(1.0, (), i, i) for i in range(n)])

    @property
    def max_orders(self):
        if not self.terms:
            return (0, 0)
        return (max(t.t_order for t in self.terms), max(t.x_order for t in self.terms))

    def apply(self, f, grid, pad="zero"):
        f = _as_array(f, self.n_in)
        out = np.zeros((self.n_out,) + f.shape[1:])
        for term in self.terms:
            u = f[term.src]
            for factor in term.chain:
                u = _apply_factor(factor, u, grid, pad)
            out[term.dst] += term.coef * u
        return out

    def apply_exact(self, exprs):
        exprs = [sp.sympify(e) for e in exprs]
        out = [sp.Integer(0)] * self.n_out
        for term in self.terms:
            u = exprs[term.src]
            for factor in term.chain:
                u = _exact_factor(factor, u)
            out[term.dst] = out[term.dst] + term.coef * u
        return out

    def adjoint(self):
        return DiffOperator(self.n_out, self.n_in, [t.adjoint() for t in self.terms])

    def then(self, chain, coef=1.0) -> "DiffOperator":
        """``chain ∘ self`` applied to every output."""
        return DiffOperator(self.n_in, self.n_out, [t.then(chain, coef) for t in self.terms])

    def routed(self, n_out: int, dst_map) -> "DiffOperator":
        """Re-route output components; ``dst_map[i]`` is the new index of output ``i``."""
        return DiffOperator(self.n_in, n_out, [Term(t.coef, t.chain, t.src, dst_map[t.dst]) for t in self.terms])

    def describe(self):
        lines = [f"DiffOperator {self.n_in} -> {self.n_out}, orders (t, x) <= {self.max_orders}"]
        lines += ["  " + t.label() for t in sorted(self.terms, key=lambda t: (t.dst, t.src))]
        return "\n".join(lines)

    def __repr__(self):
        return f"DiffOperator({self.n_in}->{self.n_out}, {len(self.terms)} terms)"


class Compose(Operator):
    """``outer ∘ inner``."""

    def __init__(self, outer: Operator, inner: Operator):
        if outer.n_in != inner.n_out:
            raise ValueError(f"cannot compose {outer.n_in}-input with {inner.n_out}-output operator")
        self.outer, self.inner = outer, inner
        self.n_in, self.n_out = inner.n_in, outer.n_out

    def apply(self, f, grid, pad="zero"):
        return self.outer.apply(self.inner.apply(f, grid, pad), grid, pad)

    def apply_exact(self, exprs):
        return self.outer.apply_exact(self.inner.apply_exact(exprs))

    def adjoint(self):
        return Compose(self.inner.adjoint(), self.outer.adjoint())

    def describe(self):
        return f"Compose(\n{self.outer.describe()}\n  ∘\n{self.inner.describe()}\n)"


class Sum(Operator):
    def __init__(self, ops: Sequence[Operator]):
        ops = list(ops)
        if len({(o.n_in, o.n_out) for o in ops}) != 1:
            raise ValueError("summands must share arities")
        self.ops = ops
        self.n_in, self.n_out = ops[0].n_in, ops[0].n_out

    def apply(self, f, grid, pad="zero"):
        return sum(op.apply(f, grid, pad) for op in self.ops)

    def apply_exact(self, exprs):
        parts = [op.apply_exact(exprs) for op in self.ops]
        return [sum(col, sp.Integer(0)) for col in zip(*parts)]

    def adjoint(self):
        return Sum([op.adjoint() for op in self.ops])

    def describe(self):
        return "Sum(\n" + "\n  +\n".join(op.describe() for op in self.ops) + "\n)"


class SingularNodeError(ValueError):
    """Raised when a pointwise matrix is numerically singular inside its mask."""


class PointwiseMatrix(Operator):
    """Multiplication by a matrix field ``K(t, x)`` at every grid node.

    Parameters
    ----------
    matrix_fn : callable
        ``matrix_fn(T, X)`` returns an array of shape ``T.shape + (r, c)``.
    inverse : bool
        Use ``K^{-1}`` (square ``K`` only). Nodes inside the mask with
        ``|det K| < det_rtol * ||K||^r`` are rejected.
    rows : sequence of int, optional
        Keep only these rows (after inversion), e.g. a projection.
    transpose : bool
        Apply the pointwise transpose (the adjoint).
    mask : callable, optional
        ``mask(T, X)`` boolean array; outside the mask the output is 0
        (zero padding) or NaN (NaN padding).
    """

    def __init__(self, matrix_fn: Callable, shape, inverse=False, rows=None, transpose=False,
                 mask: Optional[Callable] = None, det_rtol: float = 1e-12, label: str = "K"):
        self.matrix_fn = matrix_fn
        self.shape = tuple(shape)
        self.inverse = inverse
        self.rows = None if rows is None else tuple(rows)
        self.transpose = transpose
        self.mask = mask
        self.det_rtol = det_rtol
        self.label = label
        r = len(self.rows) if self.rows is not None else self.shape[0]
        c = self.shape[1]
        if inverse and self.shape[0] != self.shape[1]:
            raise ValueError("inverse requires a square matrix field")
        self.n_out, self.n_in = (c, r) if transpose else (r, c)
        self._cache = {}

    def _matrices(self, grid):
        if grid in self._cache:
            return self._cache[grid]
        T, X = grid.mesh()
        K = np.asarray(self.matrix_fn(T, X), dtype=float)
        inside = np.ones(T.shape, bool) if self.mask is None else np.asarray(self.mask(T, X), bool)
        if self.inverse:
            n = self.shape[0]
            Kin = K[inside]
            det = np.linalg.det(Kin)
            scale = np.linalg.norm(Kin, axis=(-2, -1)) ** n
            bad = np.abs(det) < self.det_rtol * scale
            if np.any(bad):
                k = int(np.flatnonzero(bad)[0])
                idx = np.argwhere(inside)[k]
                raise SingularNodeError(
                    f"{self.label} numerically singular at t={T[tuple(idx)]:.6g}, x={X[tuple(idx)]:.6g}"
                )
            Kinv = np.zeros_like(K)
            Kinv[inside] = np.linalg.inv(Kin)
            K = Kinv
        if self.rows is not None:
            K = K[..., list(self.rows), :]
        if self.transpose:
            K = np.swapaxes(K, -1, -2)
        K = np.where(inside[..., None, None], K, 0.0)
        self._cache[grid] = (K, inside)
        return K, inside

    def apply(self, f, grid, pad="zero"):
        f = _as_array(f, self.n_in)
        K, inside = self._matrices(grid)
        out = np.einsum("tnij,jtn->itn", K, f)
        if pad == "nan":
            out = np.where(inside[None], out, np.nan)
        return out

    def adjoint(self):
        return PointwiseMatrix(self.matrix_fn, self.shape, self.inverse, self.rows, not self.transpose,
                               self.mask, self.det_rtol, self.label)

    def describe(self):
        ops = ("inv " if self.inverse else "") + ("rows " + str(self.rows) + " " if self.rows else "")
        return f"PointwiseMatrix {self.n_in} -> {self.n_out}: {ops}{self.label}{'^T' if self.transpose else ''}"


def signs(n: int, negative: Sequence[int]) -> DiffOperator:
    """Diagonal operator with ``-1`` on the listed (0-based) components."""
    neg = set(negative)
    return DiffOperator(n, n, [Term(-1.0 if i in neg else 1.0, (), i, i) for i in range(n)])
