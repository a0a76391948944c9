"""Penalized HUM for the fully controlled system.

For a penalty ``k`` the discrete problem is

    minimize  1/2 sum_n w_n <v^n, v^n / rho^n> + k/2 |z^N - target|^2,

where ``z`` solves the Crank–Nicolson scheme with source ``F v``;
``F v = N(theta v)`` (one control per equation entering through the
first-order operator ``N``) or ``F v = theta v`` (direct control).  The
optimality system is

    v = -rho F^T phibar,   phibar = collocated adjoint of psi^N,
    psi^N = k (z^N - target),

and is solved by conjugate gradients on the terminal variable ``psi^N``:

    (Lambda + I/k) psi^N = y_free(T) - target,
    Lambda psi^N = -z^N[y0 = 0, v = -rho F^T phibar(psi^N)],

with ``Lambda`` symmetric positive semidefinite because the backward
solver is the exact transpose of the forward one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse.linalg as spla

from .discretize import CrankNicolsonSolver, DiscreteNorms, Grid, SolverError, Trajectory
from .model import ProblemSpec
from .weights import WeightProfile

log = logging.getLogger(__name__)

MODES = ("theorem1", "theorem2")


class HumError(RuntimeError):
    """CG failure or unsatisfied mode condition."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class HumConfig:
    """Penalty, CG settings and the weight/cutoff used by the control map.

    ``theta`` is sampled on all spatial nodes (length ``nx + 2``).
    ``K`` is the exponent fraction of the weighted regularity diagnostic.
    """

    k: float
    profile: WeightProfile
    theta: np.ndarray
    mode: str = "theorem1"
    i0: Optional[int] = None
    cg_tol: float = 1e-8
    cg_max_iter: int = 500
    K: float = 0.5

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("penalty k must be positive")
        if not 0 < self.cg_tol < 1:
            raise ValueError("cg_tol must lie in (0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "theorem1" and self.i0 is None:
            raise ValueError("theorem1 mode needs i0")


@dataclass(frozen=True)
class HumSolution:
    """Optimal control and states for one penalty.

    ``phi`` is the nodal adjoint ``psi`` (``phi(0)`` enters the cost
    identity); ``phi_bar`` is the collocated adjoint entering the control
    characterization ``v = -rho theta N* phi_bar`` (or ``-rho theta phi_bar``).
    """

    v: Trajectory
    z: Trajectory
    phi: Trajectory
    phi_bar: Trajectory
    phi_T: np.ndarray
    terminal_norm: float
    terminal_error: float
    cost: float
    cg_iterations: int
    cg_residual: float
    k: float
    mode: str
    target: Optional[np.ndarray] = None


class ControlMap:
    """``F`` and its transpose on interior-node arrays ``(nt+1, n_c, nx)``."""

    def __init__(self, spec: ProblemSpec, grid: Grid, mode: str, theta, i0: Optional[int] = None):
        self.grid = grid
        self.mode = mode
        self.m = spec.m
        self.theta = np.asarray(theta, dtype=float)[1:-1]
        if mode == "theorem1":
            _, G, A = spec.coefficients.constant_matrices()
            self.g = G[-1, i0 - 1]
            self.a = A[-1, i0 - 1]

    @property
    def n_controls(self) -> int:
        return self.m

    def _dx(self, u):
        p = np.pad(u, [(0, 0)] * (u.ndim - 1) + [(1, 1)])
        return (p[..., 2:] - p[..., :-2]) / (2.0 * self.grid.h)

    def forward(self, v):
        tv = self.theta * v
        if self.mode == "theorem2":
            return tv
        return -self.g * self._dx(tv) - self.a * tv

    def transpose(self, phi):
        if self.mode == "theorem2":
            return self.theta * phi
        return self.theta * (self.g * self._dx(phi) - self.a * phi)


class HumProblem:
    """Reusable pieces of one HUM setup (solver factorizations, control map)."""

    def __init__(self, spec: ProblemSpec, grid: Grid, config: HumConfig):
        self.spec = spec
        self.grid = grid
        self.config = config
        self.solver = CrankNicolsonSolver(spec, grid)
        self.F = ControlMap(spec, grid, config.mode, config.theta, config.i0)
        self.rho = config.profile.rho[:, None, 1:-1]
        self.norms = DiscreteNorms(grid)

    def adjoint(self, psiT):
        return self.solver.backward(psiT, return_collocated=True)

    def control_from(self, phi_bar: Trajectory) -> np.ndarray:
        return -self.rho * self.F.transpose(phi_bar.values)

    def gramian(self, psiT) -> np.ndarray:
        """``Lambda psiT`` (shape ``(m, nx)``)."""
        _, bar = self.adjoint(np.reshape(psiT, (self.spec.m, self.grid.nx)))
        v = self.control_from(bar)
        z = self.solver.forward(np.zeros((self.spec.m, self.grid.nx)), self.F.forward(v))
        return -z.final

    def free_final(self, y0) -> np.ndarray:
        return self.solver.forward(y0).final

    def solve(self, y0, target=None, x0=None) -> HumSolution:
        cfg, g = self.config, self.grid
        m, nx = self.spec.m, g.nx
        y0 = np.asarray(y0, dtype=float).reshape(m, nx)
        tgt = np.zeros((m, nx)) if target is None else np.asarray(target, dtype=float).reshape(m, nx)
        b = (self.free_final(y0) - tgt).ravel()
        n = b.size
        op = spla.LinearOperator((n, n), matvec=lambda p: self.gramian(p).ravel() + p / cfg.k, dtype=float)
        iterations = 0

        def count(_):
            nonlocal iterations
            iterations += 1

        bnorm = float(np.linalg.norm(b))
        if bnorm == 0.0:
            psiT = np.zeros(n)
            info = 0
        else:
            start = None if x0 is None else np.asarray(x0, dtype=float).ravel()
            psiT, info = spla.cg(op, b, x0=start, rtol=cfg.cg_tol, atol=0.0, maxiter=cfg.cg_max_iter,
                                 callback=count)
        residual = float(np.linalg.norm(b - op.matvec(psiT)) / bnorm) if bnorm > 0 else 0.0
        if info != 0:
            raise HumError(f"CG did not converge in {cfg.cg_max_iter} iterations "
                           f"(relative residual {residual:.3e})", residual)
        psi, bar = self.adjoint(psiT.reshape(m, nx))
        v = self.control_from(bar)
        z = self.solver.forward(y0, self.F.forward(v))
        q = self.F.transpose(bar.values)
        w = g.trapezoid_weights()
        control_term = 0.5 * g.h * float(np.einsum("n,nci->", w, self.rho * q * q))
        err = z.final - tgt
        cost = control_term + 0.5 * cfg.k * g.h * float(np.sum(err**2))
        log.debug("k=%g: %d CG iterations, residual %.3e", cfg.k, iterations, residual)
        return HumSolution(
            v=Trajectory(v, g), z=z, phi=psi, phi_bar=bar, phi_T=psiT.reshape(m, nx),
            terminal_norm=self.norms.l2_space(z.final), terminal_error=self.norms.l2_space(err),
            cost=cost, cg_iterations=iterations, cg_residual=residual, k=cfg.k, mode=cfg.mode,
            target=None if target is None else tgt,
        )


def hum_solve(spec: ProblemSpec, grid: Grid, config: HumConfig, y0, target=None, x0=None) -> HumSolution:
    """Penalized HUM control of the fully controlled system (see module docstring)."""
    return HumProblem(spec, grid, config).solve(y0, target, x0)


def cost_identity_check(solution: HumSolution, y0) -> float:
    """``|J_k - 1/2 <y0, phi(0)>|`` (discrete inner product)."""
    g = solution.z.grid
    y0 = np.asarray(y0, dtype=float).reshape(solution.phi.values[0].shape)
    return abs(solution.cost - 0.5 * g.h * float(np.sum(y0 * solution.phi.values[0])))


def penalty_sweep(spec: ProblemSpec, grid: Grid, config: HumConfig, y0, ks, warm_start: bool = True):
    """One solve per penalty, warm-started from the previous terminal adjoint.

    Returns a list of dict rows ``k, terminal_norm, J_k, cg_iterations``
    (rows whose solve failed carry an ``error`` entry instead).
    """
    ks = [float(k) for k in ks]
    if not ks:
        raise ValueError("ks must be nonempty")
    if any(b <= a for a, b in zip(ks[:-1], ks[1:])):
        raise ValueError("ks must be increasing")
    rows = []
    previous = None
    problem = HumProblem(spec, grid, replace(config, k=ks[0]))
    for k in ks:
        problem.config = replace(config, k=k)
        try:
            sol = problem.solve(y0, x0=previous if warm_start else None)
        except (HumError, SolverError) as exc:
            rows.append({"k": k, "terminal_norm": math.nan, "J_k": math.nan, "cg_iterations": -1,
                         "error": str(exc)})
            continue
        previous = sol.phi_T
        rows.append({"k": k, "terminal_norm": sol.terminal_norm, "J_k": sol.cost,
                     "cg_iterations": sol.cg_iterations, "solution": sol})
    return rows


def weighted_control(solution: HumSolution, profile: WeightProfile, K: float) -> np.ndarray:
    """``exp(K s0 alpha*) v`` evaluated in log space (zero at ``t = 0, T``)."""
    if not 0 < K < 1:
        raise ValueError("K must lie in (0, 1)")
    g = solution.v.grid
    q = np.zeros_like(solution.v.values)
    nz = profile.rho[:, None, 1:-1] > 0
    q = np.divide(solution.v.values, profile.rho[:, None, 1:-1], out=q, where=nz)
    out = np.zeros_like(q)
    log_rho = profile.log_rho[:, None, 1:-1]
    boost = K * profile.s0 * profile.alpha_star[:, None, None]
    expo = np.minimum(log_rho + boost, 700.0)
    out[1:-1] = np.exp(expo) * q[1:-1]
    return out


def control_regularity_report(solution: HumSolution, profile: WeightProfile, K: float = 0.5) -> dict:
    """Discrete ``W^{2,1}_2``-type norms of ``exp(K s0 alpha*) v``."""
    g = solution.v.grid
    wv = weighted_control(solution, profile, K)
    norms = DiscreteNorms(g)
    up = np.pad(wv, [(0, 0), (0, 0), (1, 1)])
    parts = {
        "value": wv,
        "dx": (up[..., 2:] - up[..., :-2]) / (2 * g.h),
        "dxx": (up[..., 2:] - 2 * up[..., 1:-1] + up[..., :-2]) / g.h**2,
        "dt": np.gradient(wv, g.tau, axis=0),
    }
    report = {name: norms.l2_spacetime(arr) for name, arr in parts.items()}
    report["w21"] = math.sqrt(sum(v * v for v in report.values()))
    report["K"] = K
    return report
