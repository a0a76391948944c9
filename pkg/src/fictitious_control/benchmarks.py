"""Reference problems used by the tests, the acceptance suite and the CLI."""

from __future__ import annotations

import numpy as np

from .discretize import Grid
from .expressions import T_SYM, X_SYM
from .model import CoefficientField, CoefficientSet, ProblemSpec

CASE_II_WINDOWS = dict(omega=(0.2, 0.8), omega0=(0.3, 0.7), omega1=(0.4, 0.6), omega2=(0.45, 0.55))


def theorem1_benchmark(T: float = 0.25, g21: float = 0.0, a21: float = 1.0) -> ProblemSpec:
    """Two heat equations, the second driven by the first through ``g21 ∂x + a21``."""
    coeffs = CoefficientSet.constant([1.0, 1.0], G=[[0, 0], [g21, 0]], A=[[0, 0], [a21, 0]])
    return ProblemSpec(coeffs, T=T, name="theorem1-m2")


def theorem1_m3(T: float = 0.25) -> ProblemSpec:
    """Three equations; the last one is coupled to the first (``i0 = 1``)."""
    G = np.array([[0.2, 0, 0], [0, 0, 0], [0.7, 1.0, 0]])
    A = np.array([[0, 0, 0], [0.3, 0, 0], [1.0, 0, 0]])
    return ProblemSpec(CoefficientSet.constant([1.0, 1.0, 1.0], G=G, A=A), T=T, name="theorem1-m3")


def decoupled(T: float = 0.25) -> ProblemSpec:
    """Last equation receives no coupling: not null controllable."""
    return ProblemSpec(CoefficientSet.constant([1.0, 1.0]), T=T, name="decoupled")


def case_i_benchmark(T: float = 0.25) -> ProblemSpec:
    """``g21 = 0`` and ``a21 = 1 > 0`` on the working window."""
    coeffs = CoefficientSet((1, 1), ((0, 0), (0, 0)), ((0, 0), (1, 0)))
    return ProblemSpec(coeffs, T=T, name="case-i")


def case_ii_benchmark(T: float = 0.25, kappa: float = 2.0) -> ProblemSpec:
    """``g21 = kappa``, ``a22 = x``: ``det H = kappa^4`` everywhere."""
    coeffs = CoefficientSet((1, 1), ((0, 0), (kappa, 0)), ((0, 0), (0, X_SYM)))
    return ProblemSpec(coeffs, T=T, name="case-ii", **CASE_II_WINDOWS)


def time_only_example(T: float = 1.0) -> ProblemSpec:
    """``g21 = 1 + t``, ``a21 = t``: the time-only reduction of ``det H``."""
    coeffs = CoefficientSet((1, 1), ((0, 0), (1 + T_SYM, 0)), ((0, 0), (T_SYM, 0)))
    return ProblemSpec(coeffs, T=T, name="time-only", **CASE_II_WINDOWS)


BENCHMARKS = {
    "theorem1": theorem1_benchmark,
    "theorem1-m3": theorem1_m3,
    "decoupled": decoupled,
    "case-i": case_i_benchmark,
    "case-ii": case_ii_benchmark,
    "time-only": time_only_example,
}


def initial_state(spec: ProblemSpec, grid: Grid) -> np.ndarray:
    """``y0 = (sin(pi x), ..., sin(pi x))`` rescaled to the domain."""
    x = (grid.x_interior - spec.domain[0]) / spec.length
    return np.tile(np.sin(np.pi * x), (spec.m, 1))


def wave_field(offset, amplitudes, kx, kt, phases, max_orders=(2, 6), name="") -> CoefficientField:
    """``offset + sum_k A_k sin(kx_k x + kt_k t + phase_k)`` with closed-form derivatives."""
    A, kx, kt, ph = (np.asarray(v, dtype=float) for v in (amplitudes, kx, kt, phases))

    def make(i, j):
        shift = ph + 0.5 * np.pi * (i + j)
        coef = A * kt**i * kx**j

        def fn(t, x):
            t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
            arg = kx * x[..., None] + kt * t[..., None] + shift
            out = np.sin(arg) @ coef
            return out + offset if (i, j) == (0, 0) else out

        return fn

    derivs = {(i, j): make(i, j) for i in range(max_orders[0] + 1) for j in range(max_orders[1] + 1)
              if (i, j) != (0, 0)}
    return CoefficientField(make(0, 0), max_orders=max_orders, derivatives=derivs, name=name)


def random_wave_field(rng: np.random.Generator, offset: float = 0.0, waves: int = 2, name="") -> CoefficientField:
    """Random smooth coefficient with analytic derivatives of every declared order."""
    return wave_field(offset + rng.uniform(-0.5, 0.5), rng.uniform(-1, 1, waves), rng.uniform(0.5, 3, waves),
                      rng.uniform(-2, 2, waves), rng.uniform(0, 2 * np.pi, waves), name=name)


def random_bundle(rng: np.random.Generator) -> CoefficientSet:
    """Random ``m = 2`` coefficient set; ``d2`` stays near 3 and ``g21`` near 2 (nonvanishing)."""
    zero = 0.0
    return CoefficientSet(
        (1.0, random_wave_field(rng, 3.0, name="d2")),
        ((zero, zero), (random_wave_field(rng, 2.0, name="g21"), random_wave_field(rng, name="g22"))),
        ((zero, zero), (random_wave_field(rng, name="a21"), random_wave_field(rng, name="a22"))),
    )
