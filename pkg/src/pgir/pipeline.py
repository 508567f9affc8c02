"""Losses, the two training procedures, stratified splitting, preprocessing of
real photographs, and the direct / inverse prediction routes."""
from __future__ import annotations

import csv
import math
import warnings
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DimensionError, ParameterError, RangeError
from .nn.optim import Adam
from .metrics import METRIC_NAMES, compute_metrics, mean_metrics
from .models import (
    InverseNetConfig,
    ModelBundle,
    RegressorConfig,
    build_inverse_net,
    build_regressor,
    forward_inverse,
    forward_regressor,
)

EVAL_CHUNK = 64


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 55
    window: tuple[int, int] = (25, 55)
    lr_inverse: float = 1e-3
    lr_regressor: float = 1e-4
    batch_size: int = 16
    seed: int = 0
    fidelity_weight: float = 0.0
    channels_last: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.lr_inverse <= 0 or self.lr_regressor <= 0:
            raise ParameterError("learning rates must be positive")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.fidelity_weight < 0:
            raise ParameterError("fidelity_weight must be >= 0")

    def check_window(self) -> None:
        lo, hi = self.window
        if not 1 <= lo <= hi <= self.epochs:
            raise ParameterError(f"evaluation window {self.window} outside epoch range [1, {self.epochs}]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


@dataclass(frozen=True)
class PreprocessConfig:
    roi: tuple[int, int, int, int] | None = (0, 0, 110, 350)  # top, left, height, width
    blur_kernel: int = 5
    blur_sigma: float = 1.0
    resize: tuple[int, int] = (224, 224)
    flip_p: float = 0.5
    max_rotation: float = 360.0
    mean: float = 0.5
    std: float = 0.5

    def __post_init__(self):
        if self.resize[0] < 1 or self.resize[1] < 1:
            raise ParameterError("resize target must be positive")
        if self.blur_kernel % 2 != 1:
            raise ParameterError("blur kernel size must be odd")


# ---------------------------------------------------------------- losses


def laplacian_pixels(x: torch.Tensor) -> torch.Tensor:
    """5-point Laplacian (pixel units) on the interior of a (B, C, H, W) tensor."""
    c = x[:, :, 1:-1, 1:-1]
    return x[:, :, 2:, 1:-1] + x[:, :, :-2, 1:-1] + x[:, :, 1:-1, 2:] + x[:, :, 1:-1, :-2] - 4 * c


def physics_loss(x_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared steady-state diffusion residual over batch, channels and interior pixels."""
    if x_hat.dim() != 4 or x_hat.shape[2] < 3 or x_hat.shape[3] < 3:
        raise DimensionError(f"physics_loss needs (B, C, H>=3, W>=3), got {tuple(x_hat.shape)}")
    return laplacian_pixels(x_hat).pow(2).mean()


def supervised_loss(preds: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    if preds.numel() == 0:
        raise DimensionError("supervised_loss on an empty batch")
    if preds.shape != targets.shape:
        raise DimensionError(f"prediction shape {tuple(preds.shape)} != target shape {tuple(targets.shape)}")
    return (preds - targets).pow(2).mean()


def grayscale(z: torch.Tensor) -> torch.Tensor:
    """Luma (BT.601 weights) replicated over three channels."""
    w = torch.tensor([0.299, 0.587, 0.114], dtype=z.dtype, device=z.device).view(1, 3, 1, 1)
    return (z * w).sum(dim=1, keepdim=True).expand(-1, 3, -1, -1)


# ---------------------------------------------------------------- helpers


def derive_seed(seed: int, *tags: int | str) -> int:
    words = [int(seed)] + [zlib.crc32(t.encode()) if isinstance(t, str) else int(t) for t in tags]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def _as_tensor(x, channels_last: bool = False) -> torch.Tensor:
    t = x if isinstance(x, torch.Tensor) else torch.from_numpy(np.ascontiguousarray(x))
    t = t.to(torch.float32)
    if channels_last and t.dim() == 4:
        t = t.contiguous(memory_format=torch.channels_last)
    return t


def _batches(n: int, batch_size: int, gen: torch.Generator):
    order = torch.randperm(n, generator=gen)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


@torch.inference_mode()
def _predict_chunks(fn, x: torch.Tensor) -> torch.Tensor:
    return torch.cat([fn(x[i : i + EVAL_CHUNK]) for i in range(0, x.shape[0], EVAL_CHUNK)])


# ---------------------------------------------------------------- training


@dataclass
class InverseResult:
    model: ModelBundle
    loss_trace: list[float]


def train_inverse(images, cfg: TrainConfig = TrainConfig(), model_cfg: InverseNetConfig = InverseNetConfig()) -> InverseResult:
    """Fit the image -> moisture network from images alone.

    The objective is the physics loss plus, when ``cfg.fidelity_weight`` > 0,
    that weight times the MSE to the grayscale input. There is deliberately
    no label argument.
    """
    z = _as_tensor(images, cfg.channels_last)
    if z.dim() != 4 or z.shape[0] < 1:
        raise DimensionError("train_inverse needs a non-empty (N, 3, H, W) image batch")
    bundle = build_inverse_net(model_cfg, derive_seed(cfg.seed, "inverse-init"))
    net = bundle.module
    if cfg.channels_last:
        net.to(memory_format=torch.channels_last)
    opt = Adam(net, cfg.lr_inverse)
    gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "inverse-shuffle"))
    trace = []
    net.train()
    for _ in range(cfg.epochs):
        total, count = 0.0, 0
        for idx in _batches(z.shape[0], cfg.batch_size, gen):
            zb = z[idx]
            out = net(zb)
            loss = physics_loss(out)
            if cfg.fidelity_weight > 0:
                loss = loss + cfg.fidelity_weight * (out - grayscale(zb)).pow(2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        trace.append(total / count)
    return InverseResult(bundle.eval(), trace)


@dataclass
class RegressorResult:
    model: ModelBundle
    trace: list[dict] = field(default_factory=list)  # rows: epoch, split, rmse, mae, r2, se
    window_rows: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)  # window means


def images_of(records) -> np.ndarray:
    """(N, 3, H, W) float32 images in [0, 1] from dataset records; touches only ``.image``."""
    return np.stack([r.image for r in records]).transpose(0, 3, 1, 2).astype(np.float32) / 255.0


def train_regressor(
    inputs,
    labels,
    test_inputs,
    test_labels,
    cfg: TrainConfig = TrainConfig(),
    model_cfg: RegressorConfig = RegressorConfig(),
    tag: str = "regressor",
) -> RegressorResult:
    """Supervised fit with per-epoch test evaluation over the configured window.

    Targets are standardized with the training-label mean and std for the
    optimization; predictions and metrics are in label units.
    """
    cfg.check_window()
    x = _as_tensor(inputs, cfg.channels_last)
    y = torch.as_tensor(np.asarray(labels, dtype=np.float32))
    xt = _as_tensor(test_inputs, cfg.channels_last)
    yt = np.asarray(test_labels, dtype=np.float64)
    if x.shape[0] != y.shape[0] or x.shape[0] < 1:
        raise DimensionError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
    if xt.shape[0] != yt.shape[0] or xt.shape[0] < 1:
        raise DimensionError(f"{xt.shape[0]} test inputs but {yt.shape[0]} test labels")

    bundle = build_regressor(model_cfg, derive_seed(cfg.seed, tag, "init"))
    mean = float(y.mean())
    std = float(y.std(unbiased=False))
    bundle.extra = {"target_mean": mean, "target_std": std if std > 1e-8 else 1.0}
    y_std = (y - mean) / bundle.extra["target_std"]
    net = bundle.module
    if cfg.channels_last:
        net.to(memory_format=torch.channels_last)
    opt = Adam(net, cfg.lr_regressor)
    gen = torch.Generator().manual_seed(derive_seed(cfg.seed, tag, "shuffle"))
    result = RegressorResult(bundle)
    lo, hi = cfg.window
    for epoch in range(1, cfg.epochs + 1):
        net.train()
        seen, preds = [], []
        for idx in _batches(x.shape[0], cfg.batch_size, gen):
            out = net(x[idx])
            loss = supervised_loss(out, y_std[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            seen.append(idx)
            preds.append(out.detach())
        order = torch.cat(seen)
        train_pred = torch.cat(preds) * bundle.extra["target_std"] + mean
        result.trace.append({"epoch": epoch, "split": "train", **compute_metrics(train_pred.numpy(), y[order].numpy())})
        if lo <= epoch <= hi:
            net.eval()
            test_pred = _predict_chunks(lambda b: forward_regressor(bundle, b), xt)
            row = {"epoch": epoch, "split": "test", **compute_metrics(test_pred.numpy(), yt)}
            result.trace.append(row)
            result.window_rows.append(row)
    result.metrics = mean_metrics(result.window_rows)
    bundle.eval()
    return result


def write_trace_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "split", *METRIC_NAMES])
        for r in rows:
            w.writerow([r["epoch"], r["split"], *("" if r[k] is None else format(r[k], ".9g") for k in METRIC_NAMES)])


def write_loss_trace_csv(trace: list[float], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "physics_loss"])
        for i, v in enumerate(trace, start=1):
            w.writerow([i, format(v, ".9g")])


# ---------------------------------------------------------------- splitting


def largest_remainder(sizes: list[int], total: int) -> list[int]:
    """Allocate ``total`` proportionally to ``sizes`` (Hamilton's method).

    Ties in the fractional remainder go to the earlier stratum.
    """
    n = sum(sizes)
    # exact integer arithmetic: quota_s = sizes[s] * total / n
    floors = [s * total // n for s in sizes]
    rems = [s * total - f * n for s, f in zip(sizes, floors)]
    left = total - sum(floors)
    for k in sorted(range(len(sizes)), key=lambda k: (-rems[k], k))[:left]:
        floors[k] += 1
    return floors


def stratified_split(labels, train_size: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Split indices so each integer-label stratum keeps its share of the training set."""
    labels = np.asarray(labels, dtype=np.float64)
    n = labels.size
    if not 1 <= train_size < n:
        raise ParameterError(f"train_size must be in [1, {n - 1}], got {train_size}")
    strata = np.floor(labels).astype(np.int64)
    keys = sorted(set(strata.tolist()))
    if train_size < len(keys):
        warnings.warn(
            f"train_size {train_size} is smaller than the number of strata ({len(keys)}); some strata get no training samples",
            stacklevel=2,
        )
    members = [np.flatnonzero(strata == k) for k in keys]
    quotas = largest_remainder([len(m) for m in members], train_size)
    rng = np.random.default_rng(seed)
    train = []
    for m, q in zip(members, quotas):
        train.append(rng.permutation(m)[:q])
    train_idx = np.sort(np.concatenate(train))
    test_idx = np.setdiff1d(np.arange(n), train_idx)
    return train_idx, test_idx


# ---------------------------------------------------------------- real images


def _gaussian_kernel(size: int, sigma: float) -> torch.Tensor:
    ax = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    k = torch.exp(-(ax**2) / (2 * sigma**2))
    k = k / k.sum()
    return torch.outer(k, k)


def preprocess_real(image, cfg: PreprocessConfig = PreprocessConfig(), rng: np.random.Generator | None = None, train: bool = False) -> torch.Tensor:
    """ROI crop, Gaussian blur, bilinear resize, optional augmentation, normalization.

    ``image`` is H x W x 3, either uint8 or float in [0, 1]. Returns a
    float32 (3, H', W') tensor.
    """
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DimensionError(f"expected an H x W x 3 image, got {arr.shape}")
    scaled = arr.astype(np.float64) / 255.0 if arr.dtype == np.uint8 else arr.astype(np.float64)
    if cfg.roi is not None:
        top, left, h, w = cfg.roi
        if top < 0 or left < 0 or top + h > arr.shape[0] or left + w > arr.shape[1]:
            raise RangeError(f"ROI {cfg.roi} exceeds image of size {arr.shape[:2]}")
        scaled = scaled[top : top + h, left : left + w]
    x = torch.from_numpy(np.ascontiguousarray(scaled.transpose(2, 0, 1)))[None]
    if cfg.blur_kernel > 1 and cfg.blur_sigma > 0:
        k = _gaussian_kernel(cfg.blur_kernel, cfg.blur_sigma).expand(3, 1, -1, -1).to(x.dtype)
        pad = cfg.blur_kernel // 2
        x = F.conv2d(F.pad(x, (pad, pad, pad, pad), mode="replicate"), k, groups=3)
    x = F.interpolate(x, size=tuple(cfg.resize), mode="bilinear", align_corners=False)
    if train:
        if rng is None:
            raise ParameterError("train-mode preprocessing needs an rng")
        if rng.random() < cfg.flip_p:
            x = torch.flip(x, dims=[3])
        if rng.random() < cfg.flip_p:
            x = torch.flip(x, dims=[2])
        if cfg.max_rotation > 0:
            theta = math.radians(rng.uniform(0.0, cfg.max_rotation))
            c, s = math.cos(theta), math.sin(theta)
            mat = torch.tensor([[[c, -s, 0.0], [s, c, 0.0]]], dtype=x.dtype)
            grid = F.affine_grid(mat, list(x.shape), align_corners=False)
            x = F.grid_sample(x, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    x = x.clamp(0.0, 1.0)
    x = (x - cfg.mean) / cfg.std
    return x[0].to(torch.float32)


# ---------------------------------------------------------------- prediction


def predict_direct(h, z) -> np.ndarray:
    """y_hat = h(Z). ``h`` is a regressor ModelBundle or any callable on (B, 3, H, W) tensors."""
    zt = _as_tensor(z)
    if isinstance(h, ModelBundle):
        h.eval()
        return _predict_chunks(lambda b: forward_regressor(h, b), zt).numpy().astype(np.float64)
    return np.asarray(h(zt), dtype=np.float64).reshape(-1)


def predict_inverse(g_inv, f, z) -> np.ndarray:
    """y_hat = f(clip(g_inv(Z), 0, 1))."""
    zt = _as_tensor(z)
    if isinstance(g_inv, ModelBundle):
        g_inv.eval()
        x_hat = _predict_chunks(lambda b: forward_inverse(g_inv, b), zt)
    else:
        x_hat = _as_tensor(np.asarray(g_inv(zt)))
    x_hat = x_hat.clamp(0.0, 1.0)
    if isinstance(f, ModelBundle):
        f.eval()
        return _predict_chunks(lambda b: forward_regressor(f, b), x_hat).numpy().astype(np.float64)
    return np.asarray(f(x_hat), dtype=np.float64).reshape(-1)


def inverse_features(g_inv: ModelBundle, z) -> torch.Tensor:
    """Clipped InverseNet output for a whole batch (the second stage's input)."""
    g_inv.eval()
    return _predict_chunks(lambda b: forward_inverse(g_inv, b), _as_tensor(z)).clamp(0.0, 1.0)


def field_discrepancy(g_inv: ModelBundle, z, fields) -> float:
    """MSE between the clipped InverseNet output (every channel) and the true moisture fields.

    Only meaningful on simulated data, where the latent field is known.
    """
    x_hat = inverse_features(g_inv, z).to(torch.float64)
    truth = torch.as_tensor(np.stack([np.asarray(getattr(f, "values", f), dtype=np.float64) for f in fields]))
    if truth.shape != (x_hat.shape[0], *x_hat.shape[2:]):
        raise DimensionError(f"fields {tuple(truth.shape)} do not match outputs {tuple(x_hat.shape)}")
    return float((x_hat - truth[:, None]).pow(2).mean())
