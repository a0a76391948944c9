"""Fictitious-control pipeline: analytic step, algebraic step, verification.

1. Analytic step: penalized HUM gives ``(z, v)`` for the system controlled
   on every equation (through ``N(theta v)`` or ``theta v``).
2. Algebraic step: ``(z_hat, v_hat) = M(theta v)`` with ``L ∘ M = N``
   (or ``Id``), computed by local stencils.
3. ``y = z - z_hat`` and ``u = -v_hat`` solve the original system with
   ``m - 1`` controls supported in ``omega``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .algebraic import algebraic_operator, algebraic_target, op_L
from .discretize import DiscreteNorms, Grid, Trajectory
from .hum import HumConfig, HumSolution, hum_solve
from .model import (ProblemSpec, check_condition_case_i, find_i0_for, min_abs_det_H, validate_spec)
from .weights import build_eta0, build_weights, default_s_lambda

log = logging.getLogger(__name__)

PIPELINE_MODES = ("theorem1", "case_i", "case_ii")


class PipelineError(RuntimeError):
    """Unsatisfied mode condition or failed consistency assertion."""


class ConditionError(PipelineError):
    """The controllability condition required by the mode does not hold."""


# ------------------------------------------------------------------ cutoff
def _smoothstep(u, kind):
    u = np.clip(u, 0.0, 1.0)
    if kind == "quintic":
        return u**3 * (10.0 - 15.0 * u + 6.0 * u * u)
    if kind == "smooth":
        with np.errstate(divide="ignore", over="ignore"):
            a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
            b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
        return a / (a + b)
    raise ValueError(f"unknown cutoff kind {kind!r}")


@dataclass(frozen=True)
class CutoffTheta:
    """Spatial cutoff: ``1`` on ``inner``, ``0`` outside ``support``.

    ``kind="quintic"`` uses ``6u^5 - 15u^4 + 10u^3`` (C²);
    ``kind="smooth"`` uses the C^∞ blend of ``exp(-1/u)`` profiles.
    """

    values: np.ndarray
    inner: tuple
    support: tuple
    kind: str = "quintic"

    def __call__(self, x):
        return cutoff_profile(x, self.inner, self.support, self.kind)


def cutoff_profile(x, inner, support, kind="quintic"):
    x = np.asarray(x, dtype=float)
    left = (x - support[0]) / (inner[0] - support[0])
    right = (support[1] - x) / (support[1] - inner[1])
    out = np.minimum(_smoothstep(left, kind), _smoothstep(right, kind))
    return np.where((x <= support[0]) | (x >= support[1]), 0.0, out)


def build_cutoff(inner, support, grid: Grid, kind: str = "quintic") -> CutoffTheta:
    """Sample the cutoff on all spatial nodes of ``grid``."""
    if not support[0] < inner[0] < inner[1] < support[1]:
        raise ValueError("cutoff windows must satisfy inner ⊂⊂ support")
    return CutoffTheta(cutoff_profile(grid.x, inner, support, kind), tuple(inner), tuple(support), kind)


def default_cutoff_windows(spec: ProblemSpec, mode: str, shrink: float = 0.25):
    """``(inner, support)``: ``(omega0, omega shrunk toward omega0)`` or ``(omega1, omega0)``."""
    if mode == "theorem1":
        lo = spec.omega[0] + shrink * (spec.omega0[0] - spec.omega[0])
        hi = spec.omega[1] - shrink * (spec.omega[1] - spec.omega0[1])
        return spec.omega0, (lo, hi)
    return spec.omega1, spec.omega0


def hum_mode(mode: str) -> str:
    return "theorem1" if mode == "theorem1" else "theorem2"


def make_profile(spec: ProblemSpec, grid: Grid, mode: str, c_cal: float = 1.0, lam: Optional[float] = None,
                 s0: Optional[float] = None):
    """Weight profile for a mode (``rho`` exponent 7 or 9)."""
    eta0, kappa = build_eta0(spec.domain, spec.omega2)
    s_default, lam_default = default_s_lambda(spec.T, c_cal)
    s = s_default if s0 is None else s0
    lam = lam_default if lam is None else lam
    p = 7 if mode == "theorem1" else 9
    return build_weights(eta0, lam, s, grid, p=p, s0=s, kappa=kappa)


def make_hum_config(spec: ProblemSpec, grid: Grid, mode: str, k: float = 1e6, c_cal: float = 1e-6,
                    lam: Optional[float] = 1.0, s0: Optional[float] = None, cutoff_kind: str = "smooth",
                    cutoff_windows=None, i0: Optional[int] = None, **kwargs) -> HumConfig:
    """Assemble a :class:`HumConfig` with weight profile and cutoff for ``mode``."""
    if mode not in PIPELINE_MODES:
        raise ValueError(f"mode must be one of {PIPELINE_MODES}")
    profile = make_profile(spec, grid, mode, c_cal, lam, s0)
    inner, support = cutoff_windows or default_cutoff_windows(spec, mode)
    theta = build_cutoff(inner, support, grid, cutoff_kind)
    if mode == "theorem1" and i0 is None:
        i0 = find_i0_for(spec.coefficients)
        if i0 is None:
            raise ConditionError("no index i0 couples the last equation to a controlled one")
    return HumConfig(k=k, profile=profile, theta=theta.values, mode=hum_mode(mode), i0=i0, **kwargs)


# ----------------------------------------------------------- verification
@dataclass
class VerificationReport:
    """Nonnegative diagnostics of a pipeline run."""

    pde_residual: float
    terminal_norm: float
    terminal_norm_z: float
    support_violation: float
    boundary_violation: float
    zhat_initial: float
    zhat_final: float
    consistency: float
    y0_norm: float
    nx: int
    nt: int
    h: float
    tau: float
    mode: str
    k: float
    cg_iterations: int
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=float)


def pde_residual(spec: ProblemSpec, grid: Grid, y: Trajectory, u: Trajectory) -> float:
    """Space-time L² norm of the residual of the original system at half steps.

    Independent of the solver stencils: non-conservative diffusion
    ``d y_xx + d_x y_x`` with analytic ``d_x``, coefficients evaluated at the
    time nodes and averaged, and a one-step difference quotient in time.
    """
    c = spec.coefficients
    m = spec.m
    h, tau = grid.h, grid.tau
    x = grid.x_interior
    inside = grid.window_mask(spec.omega, interior_only=True)
    yv = y.values
    yp = np.pad(yv, [(0, 0), (0, 0), (1, 1)])
    yx = (yp[..., 2:] - yp[..., :-2]) / (2 * h)
    yxx = (yp[..., 2:] - 2 * yp[..., 1:-1] + yp[..., :-2]) / h**2
    T, X = np.meshgrid(grid.t, x, indexing="ij")
    rhs = np.zeros_like(yv)
    for i in range(m):
        d = c.d[i]
        rhs[:, i] += d(T, X) * yxx[:, i] + d.partial(0, 1)(T, X) * yx[:, i]
        for j in range(m):
            rhs[:, i] += c.g[i][j](T, X) * yx[:, j] + c.a[i][j](T, X) * yv[:, j]
        if i < m - 1:
            rhs[:, i] += inside * u.values[:, i]
    res = (yv[1:] - yv[:-1]) / tau - 0.5 * (rhs[1:] + rhs[:-1])
    return float(math.sqrt(tau * h * np.sum(res**2)))


@dataclass
class PipelineResult:
    y: Trajectory
    u: Trajectory
    report: VerificationReport
    hum: HumSolution
    z_hat: np.ndarray
    v_hat: np.ndarray


def check_mode_condition(spec: ProblemSpec, mode: str, window, C_bound: float = 0.0, samples: int = 64):
    """Raise :class:`ConditionError` unless the mode's condition holds on ``window``."""
    if mode == "theorem1":
        if find_i0_for(spec.coefficients) is None:
            raise ConditionError("no index i0 couples the last equation to a controlled one")
    elif mode == "case_i":
        if not check_condition_case_i(spec, window, samples):
            raise ConditionError("case (i) condition fails on the working window")
    elif mode == "case_ii":
        mn, where = min_abs_det_H(spec, window, samples)
        if not mn > C_bound:
            raise ConditionError(f"min |det H| = {mn:.6g} at (t, x) = {where} does not exceed {C_bound}")
    else:
        raise ValueError(f"unknown mode {mode!r}")


def _theta_window(spec, config: HumConfig, grid: Grid):
    x = grid.x[config.theta > 0]
    pad = grid.h
    lo = max(spec.omega[0], float(x.min()) - pad) if x.size else spec.omega[0]
    hi = min(spec.omega[1], float(x.max()) + pad) if x.size else spec.omega[1]
    return ((0.0, spec.T), (lo, hi))


def run_pipeline(spec: ProblemSpec, grid: Grid, mode: str, y0, hum_config: HumConfig, target=None,
                 C_bound: float = 0.0, strict: bool = True, hum_solution: Optional[HumSolution] = None
                 ) -> PipelineResult:
    """Analytic step, algebraic step and verification report.

    Parameters
    ----------
    mode : {"theorem1", "case_i", "case_ii"}
    y0 : array_like, shape (m, nx)
    hum_config : HumConfig
        Must use the HUM mode matching ``mode``.
    target : array_like, optional
        Terminal target for the approximate-control variant.
    strict : bool
        Raise :class:`PipelineError` when ``z_hat`` fails to vanish at
        ``t = 0`` or ``t = T`` (tolerance ``1e-8 ||y0||``).
    """
    issues = validate_spec(spec)
    if issues:
        raise PipelineError("invalid spec: " + "; ".join(issues))
    if hum_config.mode != hum_mode(mode):
        raise ValueError(f"HUM mode {hum_config.mode} does not match pipeline mode {mode}")
    window = _theta_window(spec, hum_config, grid)
    check_mode_condition(spec, mode, window, C_bound)
    m = spec.m
    norms = DiscreteNorms(grid)
    y0 = np.asarray(y0, dtype=float).reshape(m, grid.nx)
    sol = hum_solution or hum_solve(spec, grid, hum_config, y0, target)

    theta_v = Trajectory(sol.v.values * hum_config.theta[None, None, 1:-1], grid).full()
    theta_v[:, :, [0, -1]] = 0.0
    M = algebraic_operator(spec, mode, hum_config.i0, window)
    out = M.apply(theta_v, grid)
    z_hat, v_hat = out[:m], out[m:]

    y = Trajectory(sol.z.values - Trajectory.from_full(z_hat, grid).values, grid)
    u_full = -v_hat
    u = Trajectory.from_full(u_full, grid)

    outside = ~grid.window_mask(spec.omega)
    support_violation = float(np.max(np.abs(u_full[:, :, outside]))) if np.any(outside) else 0.0
    boundary_violation = float(max(np.max(np.abs(z_hat[:, :, [0, -1]])), np.max(np.abs(u_full[:, :, [0, -1]]))))
    y0n = norms.l2_space(y0)
    zhat_initial = norms.l2_space(z_hat[:, 0, 1:-1])
    zhat_final = norms.l2_space(z_hat[:, -1, 1:-1])
    if strict and max(zhat_initial, zhat_final) > 1e-8 * max(y0n, np.finfo(float).tiny):
        raise PipelineError(f"z_hat does not vanish at the time endpoints "
                            f"(|z_hat(0)| = {zhat_initial:.3e}, |z_hat(T)| = {zhat_final:.3e})")

    target_op = algebraic_target(spec, mode, hum_config.i0)
    ref = theta_v if target_op is None else target_op.apply(theta_v, grid)
    lhs = op_L(spec).apply(np.concatenate([z_hat, v_hat]), grid)
    diff = (lhs - ref)[:, 1:-1, 1:-1]
    consistency = float(math.sqrt(grid.h * grid.tau * np.sum(diff**2)))

    report = VerificationReport(
        pde_residual=pde_residual(spec, grid, y, u),
        terminal_norm=norms.l2_space(y.final),
        terminal_norm_z=sol.terminal_norm,
        support_violation=support_violation,
        boundary_violation=boundary_violation,
        zhat_initial=zhat_initial,
        zhat_final=zhat_final,
        consistency=consistency,
        y0_norm=y0n,
        nx=grid.nx, nt=grid.nt, h=grid.h, tau=grid.tau,
        mode=mode, k=sol.k, cg_iterations=sol.cg_iterations,
        extra={"cost": sol.cost, "cg_residual": sol.cg_residual, "u_max": float(np.max(np.abs(u_full)))},
    )
    return PipelineResult(y, u, report, sol, z_hat, v_hat)


class ApproximationError(PipelineError):
    def __init__(self, message, best):
        super().__init__(message)
        self.best = best


def approximate_control(spec: ProblemSpec, grid: Grid, y0, yT, epsilon: float, hum_config: HumConfig,
                        mode: str = "theorem1", k_max: float = 1e8, factor: float = 100.0):
    """Steer ``y(T)`` within ``epsilon`` (squared L² distance) of ``yT``.

    Increases the penalty by ``factor`` from ``hum_config.k`` until the
    achieved error is at most ``epsilon`` or ``k_max`` is exceeded.

    Returns
    -------
    y, u : Trajectory
    achieved_error : float
        ``||y(T) - yT||^2``.
    """
    norms = DiscreteNorms(grid)
    yT = np.asarray(yT, dtype=float).reshape(spec.m, grid.nx)
    k = hum_config.k
    best = None
    while k <= k_max * (1 + 1e-12):
        res = run_pipeline(spec, grid, mode, y0, replace(hum_config, k=k), target=yT, strict=False)
        achieved = norms.l2_space(res.y.final - yT) ** 2
        log.info("k=%g: achieved %.3e (epsilon %.3e)", k, achieved, epsilon)
        if best is None or achieved < best[2]:
            best = (res.y, res.u, achieved, k)
        if achieved <= epsilon:
            return res.y, res.u, achieved
        k *= factor
    raise ApproximationError(f"epsilon={epsilon:.3e} not reached up to k={k_max:g}; best {best[2]:.3e}", best)
