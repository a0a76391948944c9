"""Carleman weight system and observability diagnostics.

With ``beta(t) = t^5 (T - t)^5`` and ``N = max eta0`` the weights are

    alpha = (exp(12 lam N) - exp(lam (10 N + eta0))) / beta,
    xi    = exp(lam (10 N + eta0)) / beta,

and the control weight is ``rho = xi^p exp(-2 s0 alpha)`` with ``p = 7``
(control through a first-order operator) or ``p = 9`` (direct control).
All weights are evaluated in log space at interior time nodes only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .discretize import CrankNicolsonSolver, Grid, Trajectory

EXP_FLOOR = 1e-300
LOG_FLOOR = math.log(EXP_FLOOR)


class WeightError(ValueError):
    """Raised for invalid weight parameters or singular evaluation times."""


class Eta0:
    """Spatial weight ``eta0 = s (1 - s)`` where ``s`` is a monotone polynomial map.

    ``s`` maps the domain onto ``[0, 1]`` and sends the midpoint of the
    inner window to ``1/2``, so ``eta0`` vanishes at both ends, is positive
    inside, and has its only critical point at that midpoint.  ``s`` is a
    composition of maps ``u -> u + mu u (1 - u)`` with ``|mu| < 1``; one map
    suffices unless the midpoint is very close to the boundary.
    """

    def __init__(self, domain, centre, max_mu=0.9):
        self.x_lo, self.x_hi = map(float, domain)
        self.length = self.x_hi - self.x_lo
        c = (centre - self.x_lo) / self.length
        if not 0.0 < c < 1.0:
            raise WeightError("critical point must lie strictly inside the domain")
        self.mus = []
        while abs(c - 0.5) > 1e-15:
            mu = float(np.clip((0.5 - c) / (c * (1.0 - c)), -max_mu, max_mu))
            self.mus.append(mu)
            c = c + mu * c * (1.0 - c)
        self.centre = centre

    def _map(self, x):
        u = (np.asarray(x, dtype=float) - self.x_lo) / self.length
        du = np.full_like(u, 1.0 / self.length)
        for mu in self.mus:
            du = du * (1.0 + mu * (1.0 - 2.0 * u))
            u = u + mu * u * (1.0 - u)
        return u, du

    def __call__(self, x):
        s, _ = self._map(x)
        return s * (1.0 - s)

    def derivative(self, x):
        s, ds = self._map(x)
        return ds * (1.0 - 2.0 * s)

    @property
    def degree(self) -> int:
        return 2 ** (len(self.mus) + 1)

    @property
    def sup(self) -> float:
        return 0.25


def build_eta0(domain, omega2, samples: int = 20001):
    """Spatial weight for the inner window ``omega2`` and its gradient bound.

    Returns
    -------
    eta0 : Eta0
        Callable weight with :meth:`Eta0.derivative`.
    kappa : float
        Minimum of ``|eta0'|`` over the closed complement of ``omega2``.
    """
    lo, hi = domain
    if not lo < omega2[0] < omega2[1] < hi:
        raise WeightError("omega2 must be strictly inside the domain")
    eta0 = Eta0(domain, 0.5 * (omega2[0] + omega2[1]))
    x = np.linspace(lo, hi, samples)
    outside = x[(x <= omega2[0]) | (x >= omega2[1])]
    outside = np.concatenate([outside, omega2])
    kappa = float(np.min(np.abs(eta0.derivative(outside))))
    return eta0, kappa


def default_s_lambda(T: float, C_cal: float = 1.0):
    """``s0 = C_cal (T^5 + T^10)`` and ``lambda = C_cal``."""
    if T <= 0:
        raise WeightError("T must be positive")
    return C_cal * (T**5 + T**10), C_cal


@dataclass(frozen=True)
class WeightProfile:
    """Sampled weights; time-dependent arrays cover interior time nodes only.

    ``alpha``, ``xi``, ``log_xi`` have shape ``(nt - 1, nx + 2)`` and refer
    to ``t_interior``; ``rho`` has shape ``(nt + 1, nx + 2)`` with zero rows
    at ``t = 0`` and ``t = T`` (the analytic limit) and is divided by its
    grid maximum ``exp(rho_log_scale)``.  ``log_rho`` is the unclamped,
    normalized logarithm of ``rho`` at interior time nodes.
    """

    grid: Grid
    eta0: np.ndarray
    kappa: float
    lam: float
    s: float
    s0: float
    p: int
    t_interior: np.ndarray
    alpha: np.ndarray
    xi: np.ndarray
    log_xi: np.ndarray
    alpha_star: np.ndarray
    xi_star: np.ndarray
    rho: np.ndarray
    rho_log_scale: float
    log_rho: Optional[np.ndarray] = None

    def exp_weight(self, s: Optional[float] = None) -> np.ndarray:
        """``exp(-2 s alpha)`` clamped below at ``1e-300`` (interior times)."""
        s = self.s if s is None else s
        return np.exp(np.maximum(-2.0 * s * self.alpha, LOG_FLOOR))

    def exp_star(self, K: float, s0: Optional[float] = None) -> np.ndarray:
        """``exp(K s0 alpha*)`` on all time nodes; infinite at the endpoints."""
        s0 = self.s0 if s0 is None else s0
        out = np.full(self.grid.nt + 1, np.inf)
        with np.errstate(over="ignore"):
            out[1:-1] = np.exp(K * s0 * self.alpha_star)
        return out


def build_weights(eta0, lam: float, s: float, grid: Grid, p: int = 7, s0: Optional[float] = None,
                  kappa: Optional[float] = None, times=None) -> WeightProfile:
    """Sample the weight system on ``grid``.

    Parameters
    ----------
    eta0 : Eta0 or callable
        Spatial weight.
    lam, s : float
        Positive weight parameters.
    p : {7, 9}
        Exponent of ``xi`` in ``rho``.
    s0 : float, optional
        Parameter used in ``rho``; defaults to ``s``.
    times : array_like, optional
        Explicit evaluation times (for checks); must avoid ``0`` and ``T``.
    """
    if lam <= 0 or s <= 0:
        raise WeightError("lambda and s must be positive")
    if p not in (7, 9):
        raise WeightError("rho exponent must be 7 or 9")
    s0 = s if s0 is None else s0
    T = grid.T
    t = grid.t[1:-1] if times is None else np.asarray(times, dtype=float)
    if np.any(t <= 0) or np.any(t >= T):
        raise WeightError("weights are singular at t = 0 and t = T")
    eta = np.asarray(eta0(grid.x), dtype=float)
    N = float(getattr(eta0, "sup", np.max(eta)))
    log_beta = 5.0 * (np.log(t) + np.log(T - t))
    expo = lam * (eta - 2.0 * N)
    # numerator of alpha: exp(12 lam N) * (1 - exp(lam (eta - 2N))) > 0
    log_num = 12.0 * lam * N + np.log(-np.expm1(expo))
    alpha = np.exp(log_num[None, :] - log_beta[:, None])
    log_xi = lam * (10.0 * N + eta)[None, :] - log_beta[:, None]
    xi = np.exp(log_xi)
    alpha_star = alpha.max(axis=1)
    xi_star = xi.min(axis=1)
    log_rho = p * log_xi + np.maximum(-2.0 * s0 * alpha, LOG_FLOOR)
    scale = float(np.max(log_rho))
    log_rho_raw = p * log_xi - 2.0 * s0 * alpha - scale
    rho = np.zeros((grid.nt + 1, grid.nx + 2)) if times is None else None
    if times is None:
        rho[1:-1] = np.exp(log_rho - scale)
    if kappa is None:
        kappa = float("nan")
    return WeightProfile(grid, eta, float(kappa), float(lam), float(s), float(s0), int(p), t, alpha, xi,
                         log_xi, alpha_star, xi_star, rho, scale, log_rho_raw)


def carleman_functional(profile: WeightProfile, u, s: Optional[float] = None,
                        lam: Optional[float] = None) -> float:
    """Discrete ``I(s, lam; u)`` on interior time nodes.

    Space integrals use the trapezoid rule over all nodes (``u = 0`` on the
    boundary), gradients use ``numpy.gradient``; time integrals weight each
    interior node by ``tau``.
    """
    s = profile.s if s is None else s
    lam = profile.lam if lam is None else lam
    g = profile.grid
    full = u.full() if isinstance(u, Trajectory) else np.asarray(u, dtype=float)
    if full.ndim == 2:
        full = full[None]
    full = full[:, 1:-1]  # interior time nodes
    grad = np.gradient(full, g.h, axis=-1)
    wx = np.full(g.nx + 2, g.h)
    wx[0] = wx[-1] = 0.5 * g.h
    clamp = np.maximum(-2.0 * s * profile.alpha, LOG_FLOOR)
    w3 = np.exp(clamp + 3.0 * profile.log_xi)
    w1 = np.exp(clamp + profile.log_xi)
    first = np.sum(w3[None] * full**2 * wx)
    second = np.sum(w1[None] * grad**2 * wx)
    return float(g.tau * (s**3 * lam**4 * first + s * lam**2 * second))


def observation_operator(spec, i0: Optional[int]):
    """Pointwise map applied before weighting: ``N*`` (given ``i0``) or identity."""
    if i0 is None:
        return lambda psi, h: psi
    _, G, A = spec.coefficients.constant_matrices()
    g, a = G[-1, i0 - 1], A[-1, i0 - 1]

    def nstar(psi, h):
        p = np.pad(psi, [(0, 0)] * (psi.ndim - 1) + [(1, 1)])
        return g * (p[..., 2:] - p[..., :-2]) / (2 * h) - a * psi

    return nstar


def observability_ratio(spec, grid: Grid, profile: WeightProfile, psiT_samples, i0: Optional[int] = None,
                        window=None):
    """Empirical ratios ``||psi(0)||^2 / weighted window observation``.

    With ``i0`` given the observation is ``|N* psi|^2`` on ``omega0``;
    otherwise ``|psi|^2`` on ``omega1``.  Zero denominators give ``inf``
    for that sample.
    """
    if window is None:
        window = spec.omega0 if i0 is not None else spec.omega1
    solver = CrankNicolsonSolver(spec, grid)
    obs = observation_operator(spec, i0)
    mask = grid.window_mask(window, interior_only=True)
    rho = profile.rho[:, 1:-1]
    w = grid.trapezoid_weights()
    ratios = []
    for psiT in psiT_samples:
        psi = solver.backward(psiT).values
        num = grid.h * np.sum(psi[0] ** 2)
        q = obs(psi, grid.h) ** 2
        den = grid.h * np.einsum("n,nx,ncx->", w, rho * mask, q)
        ratios.append(float(num / den) if den > 0 else float("inf"))
    return ratios


def write_weights_csv(profile: WeightProfile, path) -> None:
    """Columns ``t, x, alpha, xi, rho`` at interior time nodes."""
    g = profile.grid
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,x,alpha,xi,rho\n")
        for k, t in enumerate(profile.t_interior):
            n = k + 1
            for i, x in enumerate(g.x):
                fh.write(f"{t:.17g},{x:.17g},{profile.alpha[k, i]:.17g},{profile.xi[k, i]:.17g},"
                         f"{profile.rho[n, i]:.17g}\n")
