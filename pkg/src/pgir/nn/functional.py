"""Differentiable layer primitives used by the package's networks.

Convolutions carry hand-written backward passes (through aten's
convolution_backward kernel) so they can be checked against finite
differences and fault-injected; the other ops rely on torch autograd.
"""
from __future__ import annotations

import contextlib

import torch
import torch.nn.functional as F

from ..errors import DimensionError, ParameterError

LEAKY_SLOPE = 0.01
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

# names of ops whose backward is deliberately corrupted (verification self-test)
_FAULTS: dict[str, float] = {}


@contextlib.contextmanager
def inject_fault(op: str, scale: float = 1.01):
    """Scale the input gradient of ``op`` ('conv2d' or 'conv_transpose2d') while active."""
    _FAULTS[op] = scale
    try:
        yield
    finally:
        _FAULTS.pop(op, None)


class _Convolution(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, weight, bias, stride, padding, output_padding, transposed, name):
        ctx.save_for_backward(x, weight)
        ctx.conf = (stride, padding, output_padding, transposed, name, bias is not None)
        if transposed:
            return F.conv_transpose2d(x, weight, bias, stride, padding, output_padding)
        return F.conv2d(x, weight, bias, stride, padding)

    @staticmethod
    def backward(ctx, grad_out):
        x, weight = ctx.saved_tensors
        stride, padding, output_padding, transposed, name, has_bias = ctx.conf
        bias_sizes = [weight.shape[1] if transposed else weight.shape[0]] if has_bias else None
        gx, gw, gb = torch.ops.aten.convolution_backward(
            grad_out,
            x,
            weight,
            bias_sizes,
            [stride, stride],
            [padding, padding],
            [1, 1],
            transposed,
            [output_padding, output_padding],
            1,
            [ctx.needs_input_grad[0], ctx.needs_input_grad[1], has_bias and ctx.needs_input_grad[2]],
        )
        if name in _FAULTS and gx is not None:
            gx = gx * _FAULTS[name]
        return gx, gw, gb, None, None, None, None, None


def _check4(x: torch.Tensor, what: str) -> None:
    if x.dim() != 4:
        raise DimensionError(f"{what} expects a 4-D (batch, channels, height, width) tensor, got {tuple(x.shape)}")


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0):
    _check4(x, "conv2d")
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    if weight.dim() != 4 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d: input has {x.shape[1]} channels, weight expects {weight.shape[1] if weight.dim() == 4 else '?'}")
    if x.shape[2] + 2 * padding < weight.shape[2] or x.shape[3] + 2 * padding < weight.shape[3]:
        raise DimensionError("conv2d: kernel larger than padded input")
    return _Convolution.apply(x, weight, bias, stride, padding, 0, False, "conv2d")


def conv_transpose2d(x, weight, bias=None, stride: int = 1, padding: int = 0, output_padding: int = 0):
    """Adjoint of conv2d with the same weight layout convention as torch: (in, out, kh, kw)."""
    _check4(x, "conv_transpose2d")
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    if weight.dim() != 4 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"conv_transpose2d: input has {x.shape[1]} channels, weight expects {weight.shape[0] if weight.dim() == 4 else '?'}")
    return _Convolution.apply(x, weight, bias, stride, padding, output_padding, True, "conv_transpose2d")


def leaky_relu(x, slope: float = LEAKY_SLOPE):
    return F.leaky_relu(x, slope)


def relu(x):
    return F.relu(x)


def dropout(x, p: float, train: bool, generator: torch.Generator | None = None):
    """Inverted dropout: survivors scaled by 1/(1-p) so eval mode is the identity."""
    if not 0 <= p < 1:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) >= p
    return x * keep.to(x.dtype) / (1.0 - p)


def batchnorm2d(x, gamma, beta, running_mean, running_var, train: bool, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
    _check4(x, "batchnorm2d")
    if gamma.shape[0] != x.shape[1]:
        raise DimensionError(f"batchnorm2d: {x.shape[1]} channels but {gamma.shape[0]} affine parameters")
    if train and x.shape[0] * x.shape[2] * x.shape[3] < 2:
        raise ParameterError("batchnorm2d in train mode needs more than one value per channel")
    return F.batch_norm(x, running_mean, running_var, gamma, beta, train, momentum, eps)


def linear(x, weight, bias=None):
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input width {x.shape[-1]} != weight in-features {weight.shape[1]}")
    return F.linear(x, weight, bias)


def global_avg_pool(x):
    _check4(x, "global_avg_pool")
    return x.mean(dim=(2, 3))


def max_pool2d(x, k: int = 3, stride: int = 2, pad: int = 1):
    _check4(x, "max_pool2d")
    return F.max_pool2d(x, k, stride, pad)
