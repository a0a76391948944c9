"""Uniform grids, discrete norms and Crank–Nicolson solvers.

The forward scheme for ``y' = L(t) y + f`` is

    (I - tau/2 L_n) y^{n+1} = (I + tau/2 L_n) y^n + tau (f^n + f^{n+1}) / 2,

with ``L_n`` the centred finite-difference operator frozen at
``t_{n+1/2}``.  The backward solver is the exact transpose of this map, so
for ``psi^N`` given, with ``lam^{n+1} = A_n^{-T} psi^{n+1}`` and
``psi^n = B_n^T lam^{n+1}``,

    <y^N, psi^N> = <y^0, psi^0> + sum_n w_n <f^n, phibar^n>,

where ``w`` are trapezoid weights and ``phibar`` collocates the
intermediate adjoint variables onto the time nodes
(``phibar^0 = lam^1``, ``phibar^n = (lam^n + lam^{n+1})/2``,
``phibar^N = lam^N``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .model import ProblemSpec


class SolverError(RuntimeError):
    """Raised when a time-step matrix cannot be factored."""


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid with ``nx`` interior nodes and ``nt`` steps."""

    x_lo: float
    x_hi: float
    T: float
    nx: int
    nt: int

    def __post_init__(self):
        if self.nx < 1 or self.nt < 1:
            raise ValueError("nx and nt must be positive")
        if not (self.x_hi > self.x_lo and self.T > 0):
            raise ValueError("degenerate grid")

    @classmethod
    def for_spec(cls, spec: ProblemSpec, nx: int, nt: int) -> "Grid":
        return cls(spec.domain[0], spec.domain[1], spec.T, nx, nt)

    @property
    def h(self) -> float:
        return (self.x_hi - self.x_lo) / (self.nx + 1)

    @property
    def tau(self) -> float:
        return self.T / self.nt

    @property
    def x(self) -> np.ndarray:
        """All spatial nodes, boundary included (length ``nx + 2``)."""
        return self.x_lo + self.h * np.arange(self.nx + 2)

    @property
    def x_interior(self) -> np.ndarray:
        return self.x[1:-1]

    @property
    def t(self) -> np.ndarray:
        return self.tau * np.arange(self.nt + 1)

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.nt + 1, self.tau)
        w[0] = w[-1] = 0.5 * self.tau
        return w

    def mesh(self, interior_only: bool = False):
        """``(T, X)`` arrays of shape ``(nt+1, nx+2)`` (or ``nx`` when interior)."""
        x = self.x_interior if interior_only else self.x
        return np.meshgrid(self.t, x, indexing="ij")

    def window_mask(self, window, interior_only: bool = False) -> np.ndarray:
        x = self.x_interior if interior_only else self.x
        return (x > window[0]) & (x < window[1])


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed ``m``-component grid function on interior nodes.

    ``values`` has shape ``(nt + 1, m, nx)``; boundary nodes carry zero and
    are not stored.
    """

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[0] != self.grid.nt + 1 or v.shape[2] != self.grid.nx:
            raise ValueError(f"trajectory shape {v.shape} inconsistent with grid")
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, grid: Grid, m: int) -> "Trajectory":
        return cls(np.zeros((grid.nt + 1, m, grid.nx)), grid)

    def at(self, n: int) -> np.ndarray:
        return self.values[n]

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def full(self) -> np.ndarray:
        """Component-major array ``(m, nt+1, nx+2)`` with zero boundary nodes."""
        out = np.zeros((self.m, self.grid.nt + 1, self.grid.nx + 2))
        out[:, :, 1:-1] = np.moveaxis(self.values, 1, 0)
        return out

    @classmethod
    def from_full(cls, arr: np.ndarray, grid: Grid) -> "Trajectory":
        """Inverse of :meth:`full`; boundary entries of ``arr`` are discarded."""
        arr = np.asarray(arr)
        return cls(np.moveaxis(arr[:, :, 1:-1], 0, 1).copy(), grid)

    def __add__(self, other):
        return Trajectory(self.values + other.values, self.grid)

    def __sub__(self, other):
        return Trajectory(self.values - other.values, self.grid)

    def __mul__(self, c):
        return Trajectory(self.values * c, self.grid)

    __rmul__ = __mul__


class DiscreteNorms:
    """Discrete norms on a grid; inner products are ``h``-weighted sums."""

    def __init__(self, grid: Grid):
        self.grid = grid

    def inner(self, a, b) -> float:
        return float(self.grid.h * np.sum(np.asarray(a) * np.asarray(b)))

    def l2_space(self, u) -> float:
        return float(np.sqrt(self.grid.h * np.sum(np.asarray(u) ** 2)))

    def l2_spacetime(self, traj) -> float:
        v = traj.values if isinstance(traj, Trajectory) else np.asarray(traj)
        w = self.grid.trapezoid_weights()
        per_t = self.grid.h * np.sum(v.reshape(v.shape[0], -1) ** 2, axis=1)
        return float(np.sqrt(np.dot(w, per_t)))

    def _pad(self, u):
        u = np.asarray(u)
        pad = [(0, 0)] * (u.ndim - 1) + [(1, 1)]
        return np.pad(u, pad)

    def h1_space(self, u) -> float:
        """``(||u||^2 + ||d_x u||^2)^{1/2}`` with one-sided differences on cell edges."""
        du = np.diff(self._pad(u), axis=-1) / self.grid.h
        return float(np.sqrt(self.l2_space(u) ** 2 + self.grid.h * np.sum(du**2)))

    def w21_like(self, traj) -> float:
        """L² space-time norm of ``u``, ``d_x u``, ``d_xx u`` and ``d_t u``."""
        v = traj.values if isinstance(traj, Trajectory) else np.asarray(traj)
        g = self.grid
        up = self._pad(v)
        ux = (up[..., 2:] - up[..., :-2]) / (2 * g.h)
        uxx = (up[..., 2:] - 2 * up[..., 1:-1] + up[..., :-2]) / g.h**2
        ut = np.gradient(v, g.tau, axis=0)
        total = sum(self.l2_spacetime(q) ** 2 for q in (v, ux, uxx, ut))
        return float(np.sqrt(total))


# --------------------------------------------------------------------- solver
def _field_row(field, t, x):
    return np.broadcast_to(np.asarray(field(t, x), dtype=float), x.shape)


def spatial_operator(spec: ProblemSpec, grid: Grid, t: float) -> sps.csr_matrix:
    """Sparse matrix of ``y -> d_x(D d_x y) + G d_x y + A y`` at time ``t``.

    Unknowns are ordered component-major: index ``c * nx + i``.
    """
    nx, h = grid.nx, grid.h
    m = spec.m
    x = grid.x_interior
    xm = grid.x_lo + h * (np.arange(nx + 1) + 0.5)  # cell midpoints
    coeffs = spec.coefficients
    blocks = [[None] * m for _ in range(m)]
    for c in range(m):
        for j in range(m):
            g = _field_row(coeffs.g[c][j], t, x)
            a = _field_row(coeffs.a[c][j], t, x)
            lower = -g[1:] / (2 * h)
            upper = g[:-1] / (2 * h)
            diag = a.copy()
            if c == j:
                dmid = _field_row(coeffs.d[c], t, xm)
                diag -= (dmid[:-1] + dmid[1:]) / h**2
                lower = lower + dmid[1:-1] / h**2
                upper = upper + dmid[1:-1] / h**2
            if c == j or np.any(g) or np.any(a):
                blocks[c][j] = sps.diags([lower, diag, upper], [-1, 0, 1], shape=(nx, nx))
    return sps.bmat(blocks, format="csr")


class CrankNicolsonSolver:
    """Forward and transposed-backward Crank–Nicolson solves for one spec.

    Factorizations are cached: a single one when no coefficient depends on
    time, otherwise one per step.  Instances keep this cache, so use one
    instance per thread.
    """

    def __init__(self, spec: ProblemSpec, grid: Grid):
        self.spec = spec
        self.grid = grid
        self.m = spec.m
        self.time_dependent = spec.coefficients.depends_on_t
        self._steps = {}

    def _step(self, n):
        key = n if self.time_dependent else 0
        if key not in self._steps:
            g = self.grid
            L = spatial_operator(self.spec, g, (key + 0.5) * g.tau)
            eye = sps.identity(L.shape[0], format="csc")
            A = (eye - 0.5 * g.tau * L).tocsc()
            B = (eye + 0.5 * g.tau * L).tocsr()
            try:
                lu = spla.splu(A)
            except RuntimeError as exc:  # singular factor
                raise SolverError(f"step matrix singular at step {n}: {exc}") from exc
            self._steps[key] = (lu, B, B.T.tocsr())
        return self._steps[key]

    def _flat(self, arr):
        return np.asarray(arr, dtype=float).reshape(-1)

    def forward(self, y0, source=None) -> Trajectory:
        """Solve forward from ``y0`` (shape ``(m, nx)``) with nodal source ``(nt+1, m, nx)``."""
        g = self.grid
        out = np.empty((g.nt + 1, self.m, g.nx))
        out[0] = np.asarray(y0, dtype=float).reshape(self.m, g.nx)
        if source is not None:
            src = source.values if isinstance(source, Trajectory) else np.asarray(source, dtype=float)
            if src.shape != out.shape:
                raise ValueError(f"source shape {src.shape} does not match {out.shape}")
        y = self._flat(out[0])
        for n in range(g.nt):
            lu, B, _ = self._step(n)
            rhs = B @ y
            if source is not None:
                rhs += 0.5 * g.tau * (self._flat(src[n]) + self._flat(src[n + 1]))
            y = lu.solve(rhs)
            if not np.all(np.isfinite(y)):
                raise SolverError(f"non-finite state at step {n + 1}")
            out[n + 1] = y.reshape(self.m, g.nx)
        return Trajectory(out, g)

    def backward(self, psiT, return_collocated: bool = False):
        """Transposed sweep from ``psi^N = psiT``.

        Returns the nodal adjoint trajectory ``psi`` and, if requested, the
        collocated variable ``phibar`` that pairs exactly with nodal sources.
        """
        g = self.grid
        psi = np.empty((g.nt + 1, self.m, g.nx))
        lam = np.empty((g.nt + 1, self.m, g.nx))  # lam[n] for n >= 1
        psi[-1] = np.asarray(psiT, dtype=float).reshape(self.m, g.nx)
        p = self._flat(psi[-1])
        for n in range(g.nt - 1, -1, -1):
            lu, _, BT = self._step(n)
            lm = lu.solve(p, trans="T")
            lam[n + 1] = lm.reshape(self.m, g.nx)
            p = BT @ lm
            psi[n] = p.reshape(self.m, g.nx)
        psi_traj = Trajectory(psi, g)
        if not return_collocated:
            return psi_traj
        bar = np.empty_like(psi)
        bar[0] = lam[1]
        bar[-1] = lam[-1]
        if g.nt > 1:
            bar[1:-1] = 0.5 * (lam[1:-1] + lam[2:])
        return psi_traj, Trajectory(bar, g)


def solve_forward(spec: ProblemSpec, grid: Grid, y0, source=None) -> Trajectory:
    """Crank–Nicolson solution with ``y(0) = y0`` and optional nodal source."""
    return CrankNicolsonSolver(spec, grid).forward(y0, source)


def solve_adjoint(spec: ProblemSpec, grid: Grid, psiT) -> Trajectory:
    """Backward solution with ``psi(T) = psiT``, the exact transpose of :func:`solve_forward`."""
    return CrankNicolsonSolver(spec, grid).backward(psiT)


def source_pairing(grid: Grid, f, phibar) -> float:
    """``sum_n w_n <f^n, phibar^n>`` with trapezoid weights."""
    f = f.values if isinstance(f, Trajectory) else np.asarray(f)
    p = phibar.values if isinstance(phibar, Trajectory) else np.asarray(phibar)
    per_t = grid.h * np.sum((f * p).reshape(f.shape[0], -1), axis=1)
    return float(np.dot(grid.trapezoid_weights(), per_t))


def duality_residual(spec: ProblemSpec, grid: Grid, y0, f, psiT, exact: bool = True) -> float:
    """Discrete Green-identity defect of the forward/adjoint pair.

    ``exact=False`` pairs the source with the nodal adjoint ``psi`` instead
    of the collocated variable, i.e. a merely consistent adjoint; its defect
    is first order in ``tau``.
    """
    solver = CrankNicolsonSolver(spec, grid)
    y = solver.forward(y0, f)
    psi, bar = solver.backward(psiT, return_collocated=True)
    norms = DiscreteNorms(grid)
    pair = source_pairing(grid, f if f is not None else np.zeros_like(y.values), bar if exact else psi)
    return abs(norms.inner(y.final, psi.final) - norms.inner(y0, psi.at(0)) - pair)


# --------------------------------------------------------------------- export
def trajectory_rows(traj: Trajectory):
    """Yield ``(t, x, component, value)`` rows (components 1-based)."""
    g = traj.grid
    for n, t in enumerate(g.t):
        for c in range(traj.m):
            for i, x in enumerate(g.x_interior):
                yield t, x, c + 1, traj.values[n, c, i]


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,x,component,value\n")
        for t, x, c, v in trajectory_rows(traj):
            fh.write(f"{t:.17g},{x:.17g},{c},{v:.17g}\n")


def write_trajectory_binary(traj: Trajectory, path) -> None:
    """Header ``(nx, nt, m)`` as little-endian int64, then float64 values row-major."""
    g = traj.grid
    with open(path, "wb") as fh:
        fh.write(struct.pack("<3q", g.nx, g.nt, traj.m))
        fh.write(np.ascontiguousarray(traj.values, dtype="<f8").tobytes())


def read_trajectory_binary(path, grid: Optional[Grid] = None):
    with open(path, "rb") as fh:
        nx, nt, m = struct.unpack("<3q", fh.read(24))
        values = np.frombuffer(fh.read(), dtype="<f8").reshape(nt + 1, m, nx)
    if grid is None:
        return values
    return Trajectory(values.copy(), grid)
