"""Module wrappers holding parameters and running statistics for the functional ops."""
from __future__ import annotations

import math

import torch
from torch import nn

from . import functional as fn


def he_uniform_(t: torch.Tensor, fan_in: int, generator: torch.Generator) -> torch.Tensor:
    bound = math.sqrt(6.0 / fan_in)
    with torch.no_grad():
        t.copy_(torch.rand(t.shape, generator=generator, dtype=t.dtype) * 2 * bound - bound)
    return t


class Conv2d(nn.Module):
    def __init__(self, cin, cout, k, generator, stride=1, padding=0, bias=True):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.weight = nn.Parameter(he_uniform_(torch.empty(cout, cin, k, k), cin * k * k, generator))
        self.bias = nn.Parameter(torch.zeros(cout)) if bias else None

    def forward(self, x):
        return fn.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(nn.Module):
    def __init__(self, cin, cout, k, generator, stride=1, padding=0, bias=True):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.weight = nn.Parameter(he_uniform_(torch.empty(cin, cout, k, k), cin * k * k, generator))
        self.bias = nn.Parameter(torch.zeros(cout)) if bias else None

    def forward(self, x):
        return fn.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x):
        return fn.batchnorm2d(x, self.weight, self.bias, self.running_mean, self.running_var, self.training)


class Dropout(nn.Module):
    def __init__(self, p, generator):
        super().__init__()
        self.p = p
        self.generator = generator

    def forward(self, x):
        return fn.dropout(x, self.p, self.training, self.generator)


class Linear(nn.Module):
    def __init__(self, fin, fout, generator, bias=True):
        super().__init__()
        self.weight = nn.Parameter(he_uniform_(torch.empty(fout, fin), fin, generator))
        self.bias = nn.Parameter(torch.zeros(fout)) if bias else None

    def forward(self, x):
        return fn.linear(x, self.weight, self.bias)


class LeakyReLU(nn.Module):
    def forward(self, x):
        return fn.leaky_relu(x)


class ReLU(nn.Module):
    def forward(self, x):
        return fn.relu(x)
