"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch


def grad_check(
    fn: Callable[[], torch.Tensor],
    tensors: Sequence[torch.Tensor],
    eps: float = 1e-5,
    n_coords: int = 200,
    seed: int = 0,
    kink_step: float = 1e-2,
) -> float:
    """Max relative error between autograd and central differences.

    ``fn`` evaluates a scalar from the current contents of ``tensors`` (inputs
    and/or parameters, in double precision). Up to ``n_coords`` coordinates
    are sampled across all tensors. The relative error denominator is floored
    at 1e-6 of the largest analytic gradient magnitude so that coordinates
    with vanishing gradient do not divide roundoff by zero.

    Piecewise-linear activations make some perturbations straddle a kink; such
    coordinates are detected by disagreeing one-sided slopes and re-measured
    with ``eps * kink_step``.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
        t.requires_grad_(True)
    out = fn()
    analytic = torch.autograd.grad(out, tensors, allow_unused=True)
    analytic = [torch.zeros_like(t) if a is None else a.detach() for t, a in zip(tensors, analytic)]

    sizes = np.array([t.numel() for t in tensors])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    scale = max(float(a.abs().max()) for a in analytic) if analytic else 0.0
    floor = max(1e-6 * scale, 1e-12)

    worst = 0.0
    with torch.no_grad():
        for flat in picks:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            idx = int(flat - offsets[k])
            view = tensors[k].data.view(-1) if tensors[k].is_contiguous() else None
            if view is None:
                raise ValueError("grad_check needs contiguous tensors")
            num = _central(fn, view, idx, eps, kink_step)
            ana = float(analytic[k].reshape(-1)[idx])
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, rel)
    return worst


def _central(fn, view, idx, eps, kink_step):
    orig = view[idx].item()
    base = float(fn())
    view[idx] = orig + eps
    plus = float(fn())
    view[idx] = orig - eps
    minus = float(fn())
    view[idx] = orig
    fwd, bwd = (plus - base) / eps, (base - minus) / eps
    if abs(fwd - bwd) > 1e-3 * max(abs(fwd), abs(bwd), 1e-12) + 1e-6 and kink_step:
        return _central(fn, view, idx, eps * kink_step, 0)
    return (plus - minus) / (2 * eps)
