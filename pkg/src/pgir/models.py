"""InverseNet (image -> 3-channel moisture estimate), the residual regressors
used for both direct and second-stage prediction, and weight files."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import DimensionError, FormatError, ParameterError, UnsupportedVersionError
from .nn import functional as fn
from .nn.layers import BatchNorm2d, Conv2d, ConvTranspose2d, Dropout, LeakyReLU, Linear, ReLU

MAGIC = b"PGNN"
FORMAT_VERSION = 1
VARIANTS = ("resnet18", "resnet-small")


@dataclass(frozen=True)
class InverseNetConfig:
    channels: tuple[int, ...] = (3, 16, 32, 16, 3)
    kernel: int = 3
    dropout: float = 0.2

    def to_dict(self) -> dict:
        return {"kind": "inverse", "channels": list(self.channels), "kernel": self.kernel, "dropout": self.dropout}


@dataclass(frozen=True)
class RegressorConfig:
    variant: str = "resnet-small"
    pretrained: bool = False  # reserved; only from-scratch training is implemented
    in_channels: int = 3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown regressor variant {self.variant!r}; expected one of {VARIANTS}")
        if self.pretrained:
            raise ParameterError("pretrained weights are not available; train from scratch")

    @property
    def features(self) -> int:
        return 512 if self.variant == "resnet18" else 64

    @property
    def hidden(self) -> int:
        return 128 if self.variant == "resnet18" else 32

    def to_dict(self) -> dict:
        return {"kind": "regressor", "variant": self.variant, "pretrained": self.pretrained, "in_channels": self.in_channels}


class InverseNet(nn.Module):
    """Three same-size conv blocks (conv -> LeakyReLU -> BN -> dropout) and a transposed conv head."""

    def __init__(self, cfg: InverseNetConfig, generator: torch.Generator):
        super().__init__()
        self.cfg = cfg
        pad = cfg.kernel // 2
        ch = cfg.channels
        blocks = []
        for cin, cout in zip(ch[:-2], ch[1:-1]):
            blocks += [
                Conv2d(cin, cout, cfg.kernel, generator, padding=pad),
                LeakyReLU(),
                BatchNorm2d(cout),
                Dropout(cfg.dropout, generator),
            ]
        self.features = nn.Sequential(*blocks)
        self.head = ConvTranspose2d(ch[-2], ch[-1], cfg.kernel, generator, padding=pad)

    def forward(self, z):
        if z.dim() != 4 or z.shape[1] != self.cfg.channels[0]:
            raise DimensionError(f"InverseNet expects (B, {self.cfg.channels[0]}, H, W), got {tuple(z.shape)}")
        return self.head(self.features(z))


class BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride, generator):
        super().__init__()
        self.conv1 = Conv2d(cin, cout, 3, generator, stride=stride, padding=1, bias=False)
        self.bn1 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 3, generator, padding=1, bias=False)
        self.bn2 = BatchNorm2d(cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(Conv2d(cin, cout, 1, generator, stride=stride, bias=False), BatchNorm2d(cout))

    def forward(self, x):
        out = fn.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        identity = x if self.shortcut is None else self.shortcut(x)
        return fn.relu(out + identity)


class Regressor(nn.Module):
    """Residual backbone, global average pool, then the two-layer fusion block."""

    def __init__(self, cfg: RegressorConfig, generator: torch.Generator):
        super().__init__()
        self.cfg = cfg
        if cfg.variant == "resnet18":
            self.stem = nn.Sequential(
                Conv2d(cfg.in_channels, 64, 7, generator, stride=2, padding=3, bias=False), BatchNorm2d(64), ReLU()
            )
            self.pool = True
            widths, first = (64, 128, 256, 512), 64
        else:
            self.stem = nn.Sequential(
                Conv2d(cfg.in_channels, 16, 3, generator, padding=1, bias=False), BatchNorm2d(16), ReLU()
            )
            self.pool = False
            widths, first = (16, 32, 64), 16
        stages = []
        cin = first
        for i, w in enumerate(widths):
            stride = 1 if i == 0 else 2
            stages += [BasicBlock(cin, w, stride, generator), BasicBlock(w, w, 1, generator)]
            cin = w
        self.stages = nn.Sequential(*stages)
        self.fusion = nn.Sequential(Linear(cfg.features, cfg.hidden, generator), ReLU(), Linear(cfg.hidden, 1, generator))

    def embed(self, x):
        if x.dim() != 4 or x.shape[1] != self.cfg.in_channels:
            raise DimensionError(f"regressor expects (B, {self.cfg.in_channels}, H, W), got {tuple(x.shape)}")
        out = self.stem(x)
        if self.pool:
            out = fn.max_pool2d(out, 3, 2, 1)
        return fn.global_avg_pool(self.stages(out))

    def forward(self, x):
        return self.fusion(self.embed(x)).squeeze(-1)


@dataclass
class ModelBundle:
    """A network plus the JSON-serializable config needed to rebuild it.

    ``extra`` carries training metadata that must travel with the weights
    (regressors store their label standardization here).
    """

    config: InverseNetConfig | RegressorConfig
    module: nn.Module
    extra: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return "inverse" if isinstance(self.config, InverseNetConfig) else "regressor"

    def train(self, flag: bool = True) -> "ModelBundle":
        self.module.train(flag)
        return self

    def eval(self) -> "ModelBundle":
        return self.train(False)

    @property
    def training(self) -> bool:
        return self.module.training

    def param_count(self) -> int:
        return sum(p.numel() for p in self.module.parameters())


def _generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g


def build_inverse_net(cfg: InverseNetConfig = InverseNetConfig(), seed: int = 0) -> ModelBundle:
    return ModelBundle(cfg, InverseNet(cfg, _generator(seed)))


def build_regressor(cfg: RegressorConfig = RegressorConfig(), seed: int = 0) -> ModelBundle:
    return ModelBundle(cfg, Regressor(cfg, _generator(seed)), {"target_mean": 0.0, "target_std": 1.0})


def forward_inverse(model: ModelBundle, z: torch.Tensor) -> torch.Tensor:
    return model.module(z)


def forward_regressor(model: ModelBundle, x: torch.Tensor) -> torch.Tensor:
    """Predictions in label units (undoes the stored target standardization)."""
    raw = model.module(x)
    return raw * model.extra.get("target_std", 1.0) + model.extra.get("target_mean", 0.0)


def _config_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "inverse":
        return InverseNetConfig(tuple(d["channels"]), d["kernel"], d["dropout"])
    if kind == "regressor":
        return RegressorConfig(d["variant"], d.get("pretrained", False), d.get("in_channels", 3))
    raise FormatError(f"unknown model kind {kind!r}")


def save_model(model: ModelBundle, path) -> None:
    blob = json.dumps({**model.config.to_dict(), "extra": model.extra}, sort_keys=True).encode("utf-8")
    state = model.module.state_dict()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(blob)), blob, struct.pack("<I", len(state))]
    for name, t in state.items():
        nb = name.encode("utf-8")
        arr = t.detach().cpu().contiguous().numpy().astype("<f4")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("weight file is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_model(path) -> ModelBundle:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise FormatError("not a PGNN weight file (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"weight file version {version} is not supported (expected {FORMAT_VERSION})")
    try:
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt config blob: {exc}") from exc
    extra = meta.pop("extra", {})
    cfg = _config_from_dict(meta)
    bundle = build_inverse_net(cfg) if isinstance(cfg, InverseNetConfig) else build_regressor(cfg)
    bundle.extra = extra
    expected = bundle.module.state_dict()
    count = r.u32()
    loaded = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        dims = tuple(r.u32() for _ in range(ndim))
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims)
        if name not in expected:
            raise DimensionError(f"weight file tensor {name!r} not present in the configured model")
        if tuple(expected[name].shape) != dims:
            raise DimensionError(f"tensor {name!r}: file shape {dims} != config shape {tuple(expected[name].shape)}")
        loaded[name] = torch.from_numpy(arr.copy())
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after the last tensor")
    missing = set(expected) - set(loaded)
    if missing:
        raise FormatError(f"weight file lacks tensors: {sorted(missing)}")
    bundle.module.load_state_dict(loaded)
    return bundle.eval()
