"""Built-in verification suite: gradient checks against finite differences,
solver against the brute-force oracle, colormap round trip, and the
physics-loss zero on harmonic fields."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .diffusion import sample_scenario, solve_fd_oracle, solve_fourier
from .field import GridSpec
from .models import InverseNetConfig, RegressorConfig, build_inverse_net, build_regressor
from .nn import functional as fn
from .nn.gradcheck import grad_check
from .nn.layers import Dropout
from .pipeline import physics_loss
from .synth import invert_colormap, render_colormap

GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name:<34} value={self.value:.3e} limit={self.limit:.1e} ({self.seconds:.1f}s)"


def _randn(*shape, gen):
    return torch.randn(*shape, generator=gen, dtype=torch.float64)


def _projected(out_fn, shape, gen):
    """Scalar <out, R> for a fixed random R, so every output element contributes."""
    r = _randn(*shape, gen=gen)
    return lambda: (out_fn() * r).sum()


def layer_grad_checks(seed: int = 0) -> dict[str, Callable[[], float]]:
    """Named zero-argument callables returning the max relative gradient error."""
    g = torch.Generator().manual_seed(seed)

    def conv2d():
        x, w, b = _randn(2, 3, 7, 7, gen=g), _randn(4, 3, 3, 3, gen=g), _randn(4, gen=g)
        f = _projected(lambda: fn.conv2d(x, w, b, 2, 1), (2, 4, 4, 4), g)
        return grad_check(f, [x, w, b], seed=seed)

    def conv_transpose2d():
        x, w, b = _randn(2, 4, 5, 5, gen=g), _randn(4, 3, 3, 3, gen=g), _randn(3, gen=g)
        f = _projected(lambda: fn.conv_transpose2d(x, w, b, 1, 1), (2, 3, 5, 5), g)
        return grad_check(f, [x, w, b], seed=seed)

    def batchnorm2d():
        x, gamma, beta = _randn(3, 2, 4, 4, gen=g), _randn(2, gen=g), _randn(2, gen=g)
        rm, rv = torch.zeros(2, dtype=torch.float64), torch.ones(2, dtype=torch.float64)
        f = _projected(lambda: fn.batchnorm2d(x, gamma, beta, rm, rv, True), (3, 2, 4, 4), g)
        return grad_check(f, [x, gamma, beta], seed=seed)

    def linear():
        x, w, b = _randn(4, 6, gen=g), _randn(3, 6, gen=g), _randn(3, gen=g)
        f = _projected(lambda: fn.linear(x, w, b), (4, 3), g)
        return grad_check(f, [x, w, b], seed=seed)

    def leaky_relu():
        x = _randn(2, 3, 4, 4, gen=g)
        return grad_check(_projected(lambda: fn.leaky_relu(x), (2, 3, 4, 4), g), [x], seed=seed)

    def relu():
        x = _randn(2, 3, 4, 4, gen=g)
        return grad_check(_projected(lambda: fn.relu(x), (2, 3, 4, 4), g), [x], seed=seed)

    def max_pool2d():
        x = _randn(2, 2, 6, 6, gen=g)
        return grad_check(_projected(lambda: fn.max_pool2d(x), (2, 2, 3, 3), g), [x], seed=seed)

    def global_avg_pool():
        x = _randn(2, 3, 4, 5, gen=g)
        return grad_check(_projected(lambda: fn.global_avg_pool(x), (2, 3), g), [x], seed=seed)

    def inverse_net_physics_loss():
        model = build_inverse_net(InverseNetConfig(), seed).module.double().train()
        for m in model.modules():
            if isinstance(m, Dropout):
                m.eval()
        z = torch.rand(2, 3, 10, 10, generator=g, dtype=torch.float64)
        return grad_check(lambda: physics_loss(model(z)), [z, *model.parameters()], seed=seed)

    def regressor_mse():
        model = build_regressor(RegressorConfig("resnet-small"), seed).module.double().train()
        z = torch.rand(3, 3, 12, 12, generator=g, dtype=torch.float64)
        y = _randn(3, gen=g)
        return grad_check(lambda: (model(z) - y).pow(2).mean(), [z, *model.parameters()], seed=seed)

    return {
        "grad:conv2d": conv2d,
        "grad:conv_transpose2d": conv_transpose2d,
        "grad:batchnorm2d": batchnorm2d,
        "grad:linear": linear,
        "grad:leaky_relu": leaky_relu,
        "grad:relu": relu,
        "grad:max_pool2d": max_pool2d,
        "grad:global_avg_pool": global_avg_pool,
        "grad:inverse_net_physics_loss": inverse_net_physics_loss,
        "grad:regressor_resnet_small_mse": regressor_mse,
    }


def conv_adjoint_gap(seed: int = 0) -> float:
    """|<conv(x,w), y> - <x, conv_T(y,w)>| relative to the product of norms."""
    g = torch.Generator().manual_seed(seed)
    x, w = _randn(2, 3, 9, 9, gen=g), _randn(5, 3, 3, 3, gen=g)
    y = _randn(2, 5, 5, 5, gen=g)
    lhs = (fn.conv2d(x, w, None, 2, 1) * y).sum()
    rhs = (x * fn.conv_transpose2d(y, w, None, 2, 1, 0)).sum()
    scale = float(x.norm() * w.norm() * y.norm())
    return float(abs(lhs - rhs)) / scale


def solver_gap(n: int = 5, seed: int = 0) -> float:
    g = GridSpec(64, 64)
    rng = np.random.default_rng(seed)
    return max(
        float(np.abs(solve_fourier(s, g).values - solve_fd_oracle(s, g).values).max())
        for s in (sample_scenario(rng) for _ in range(n))
    )


def colormap_gap(seed: int = 0) -> float:
    x = np.random.default_rng(seed).uniform(0, 1, 1000)
    return float(np.abs(invert_colormap(render_colormap(x[None, :]))[0] - x).max())


def harmonic_physics_loss() -> float:
    i, j = torch.meshgrid(torch.arange(16.0, dtype=torch.float64), torch.arange(16.0, dtype=torch.float64), indexing="ij")
    batch = torch.stack([torch.full_like(i, 0.3), 0.01 * i * j, 0.001 * (i**2 - j**2)])[None].repeat(2, 1, 1, 1)
    return float(physics_loss(batch))


def run_checks(seed: int = 0) -> list[CheckResult]:
    checks: list[tuple[str, Callable[[], float], float]] = [
        (name, f, GRAD_TOL) for name, f in layer_grad_checks(seed).items()
    ]
    checks += [
        ("adjoint:conv_transpose2d", lambda: conv_adjoint_gap(seed), 1e-6),
        ("solver:fourier_vs_fd_oracle", lambda: solver_gap(5, seed), 2e-2),
        ("colormap:roundtrip", lambda: colormap_gap(seed), 0.5 / 255 + 1e-9),
        ("physics_loss:harmonic_zero", harmonic_physics_loss, 1e-10),
    ]
    results = []
    for name, f, limit in checks:
        t0 = time.perf_counter()
        value = f()
        results.append(CheckResult(name, bool(value <= limit), value, limit, time.perf_counter() - t0))
    return results
