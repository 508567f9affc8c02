"""Fick's second law on the unit square: Fourier-series solution, a brute-force
finite-difference stepper used as an oracle, and random scenario sampling.

Edge naming follows the array layout: ``top`` is row 0 (u = 0), ``bottom`` is
the last row (u = 1), ``left`` is column 0 (v = 0), ``right`` the last column.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError
from .field import GridSpec, MoistureField


@dataclass(frozen=True)
class DiffusionScenario:
    D: float
    edge_values: tuple[float, float, float, float]  # top, bottom, left, right
    x0: float
    t_eval: float
    K: int = 32

    def validate(self) -> None:
        if not self.D > 0:
            raise ParameterError(f"diffusion coefficient must be positive, got {self.D}")
        if self.K < 1:
            raise ParameterError(f"truncation K must be >= 1, got {self.K}")
        if self.t_eval < 0:
            raise ParameterError(f"t_eval must be >= 0, got {self.t_eval}")
        if len(self.edge_values) != 4:
            raise ParameterError("edge_values needs four entries (top, bottom, left, right)")
        for b in (*self.edge_values, self.x0):
            if not 0.0 <= b <= 1.0:
                raise ParameterError(f"edge/initial moisture must lie in [0, 1], got {b}")


@dataclass(frozen=True)
class ScenarioRanges:
    D_range: tuple[float, float] = (0.05, 0.2)
    edge_range: tuple[float, float] = (0.0, 0.3)
    x0_range: tuple[float, float] = (0.6, 1.0)
    t_range: tuple[float, float] = (0.01, 0.5)
    K: int = 32

    def __post_init__(self):
        for name in ("D_range", "edge_range", "x0_range", "t_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ParameterError(f"{name}: low {lo} > high {hi}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def sample_scenario(rng: np.random.Generator, ranges: ScenarioRanges = ScenarioRanges()) -> DiffusionScenario:
    # fixed draw order: D, four edges, x0, t
    D = rng.uniform(*ranges.D_range)
    edges = tuple(float(rng.uniform(*ranges.edge_range)) for _ in range(4))
    x0 = rng.uniform(*ranges.x0_range)
    t = rng.uniform(*ranges.t_range)
    return DiffusionScenario(D=float(D), edge_values=edges, x0=float(x0), t_eval=float(t), K=ranges.K)


def _apply_edges(values: np.ndarray, edges) -> None:
    top, bottom, left, right = edges
    values[0, :] = top
    values[-1, :] = bottom
    values[:, 0] = left
    values[:, -1] = right
    # corners take the mean of the two edges meeting there
    values[0, 0] = 0.5 * (top + left)
    values[0, -1] = 0.5 * (top + right)
    values[-1, 0] = 0.5 * (bottom + left)
    values[-1, -1] = 0.5 * (bottom + right)


def _sinh_ratio(k: np.ndarray, r: np.ndarray) -> np.ndarray:
    """sinh(k*r)/sinh(k) for k > 0, r in [0, 1], without overflow."""
    kr = np.multiply.outer(r, k)
    num = -np.expm1(-2.0 * kr)
    den = -np.expm1(-2.0 * k)
    return np.exp(kr - k) * num / den


def _steady_raw(s: DiffusionScenario, g: GridSpec) -> np.ndarray:
    u, v = g.coords()
    m = np.arange(1, s.K + 1)
    k = m * math.pi
    odd = (1 - (-1.0) ** m) / k  # c_m / (2b)
    sin_u = np.sin(np.multiply.outer(u, k))  # N x K
    sin_v = np.sin(np.multiply.outer(v, k))  # M x K
    # the mean edge value is carried exactly as a constant (itself harmonic);
    # only the per-edge deviations go through the truncated series
    base = float(np.mean(s.edge_values))
    top, bottom, left, right = (b - base for b in s.edge_values)
    out = np.full(g.shape, base)
    # top/bottom edges vary along v, decay along u
    out += (sin_v @ (2 * top * odd * _sinh_ratio(k, 1.0 - u)).T).T
    out += (sin_v @ (2 * bottom * odd * _sinh_ratio(k, u)).T).T
    # left/right edges vary along u, decay along v
    out += sin_u @ (2 * left * odd * _sinh_ratio(k, 1.0 - v)).T
    out += sin_u @ (2 * right * odd * _sinh_ratio(k, v)).T
    _apply_edges(out, s.edge_values)
    return out


def steady_state(s: DiffusionScenario, g: GridSpec, clip: bool = True) -> MoistureField:
    """Truncated separation-of-variables solution of Laplace's equation.

    The mean edge value plus four single-edge solutions (K sine modes each)
    for the deviations from it. Border pixels carry the prescribed Dirichlet
    values exactly.
    """
    s.validate()
    out = _steady_raw(s, g)
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return MoistureField(g, out)


def sine_coefficients(residual: np.ndarray, K: int) -> np.ndarray:
    """Discrete double sine transform (DST-I over interior nodes), first K x K modes."""
    n, m = residual.shape
    i = np.arange(1, n - 1)
    j = np.arange(1, m - 1)
    ku = np.arange(1, min(K, n - 2) + 1)
    kv = np.arange(1, min(K, m - 2) + 1)
    su = np.sin(math.pi * np.multiply.outer(i, ku) / (n - 1))
    sv = np.sin(math.pi * np.multiply.outer(j, kv) / (m - 1))
    coef = (2.0 / (n - 1)) * (2.0 / (m - 1)) * (su.T @ residual[1:-1, 1:-1] @ sv)
    out = np.zeros((K, K))
    out[: len(ku), : len(kv)] = coef
    return out


def solve_fourier(s: DiffusionScenario, g: GridSpec, clip: bool = True) -> MoistureField:
    """x(u,v,t) = steady state + decaying double-sine series of the initial residual."""
    s.validate()
    steady = _steady_raw(s, g)
    residual = np.full(g.shape, s.x0) - steady
    B = sine_coefficients(residual, s.K)
    m = np.arange(1, s.K + 1)
    u, v = g.coords()
    su = np.sin(math.pi * np.multiply.outer(u, m))
    sv = np.sin(math.pi * np.multiply.outer(v, m))
    decay = np.exp(-s.D * math.pi**2 * np.add.outer(m**2, m**2) * s.t_eval)
    out = steady + su @ (B * decay) @ sv.T
    _apply_edges(out, s.edge_values)
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return MoistureField(g, out)


def solve_fd_oracle(s: DiffusionScenario, g: GridSpec) -> MoistureField:
    """Explicit forward-Euler heat stepping from uniform x0 with Dirichlet edges."""
    s.validate()
    hu, hv = g.spacing_u, g.spacing_v
    f = np.full(g.shape, s.x0, dtype=np.float64)
    _apply_edges(f, s.edge_values)
    if s.t_eval == 0:
        return MoistureField(g, f)
    dt_max = 0.2 * min(hu, hv) ** 2 / s.D
    steps = math.ceil(s.t_eval / dt_max)
    dt = s.t_eval / steps
    au, av = s.D * dt / hu**2, s.D * dt / hv**2
    c = f[1:-1, 1:-1]
    for _ in range(steps):
        c += au * (f[2:, 1:-1] - 2 * c + f[:-2, 1:-1]) + av * (f[1:-1, 2:] - 2 * c + f[1:-1, :-2])
    return MoistureField(g, f)
