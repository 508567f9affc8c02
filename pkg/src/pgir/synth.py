"""Synthetic moisture-image datasets: colormap rendering, acquisition noise,
circular imperfections, noisy labels, and the on-disk dataset format."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .diffusion import ScenarioRanges, sample_scenario, solve_fourier
from .errors import DimensionError, FormatError, MissingFileError, ParameterError, RangeError, SchemaError
from .field import GridSpec, MoistureField, integrate, read_raw, write_raw

SCHEMA_VERSION = 1
LABELS_HEADER = ["sample_id", "y_clean", "y_noisy"]


@dataclass(frozen=True)
class ColormapSpec:
    """Linear two-anchor colormap: ``low_rgb`` at moisture 0, ``high_rgb`` at 1."""

    low_rgb: tuple[int, int, int] = (255, 255, 0)
    high_rgb: tuple[int, int, int] = (0, 100, 0)

    def __post_init__(self):
        for c in (*self.low_rgb, *self.high_rgb):
            if not 0 <= c <= 255:
                raise ParameterError(f"colormap anchor channel {c} outside [0, 255]")
        if self.low_rgb[0] == self.high_rgb[0]:
            raise ParameterError("red channel must differ between anchors to be invertible")

    @property
    def slopes(self) -> np.ndarray:
        return np.array(self.high_rgb, dtype=np.float64) - np.array(self.low_rgb, dtype=np.float64)

    @property
    def intercepts(self) -> np.ndarray:
        return np.array(self.low_rgb, dtype=np.float64)

    def to_dict(self) -> dict:
        return {"low_rgb": list(self.low_rgb), "high_rgb": list(self.high_rgb)}


@dataclass(frozen=True)
class NoiseSpec:
    sigma_field: float = 0.02
    sigma_label: float = 0.01
    circle_count: tuple[int, int] = (3, 7)
    circle_radius: tuple[int, int] = (2, 8)

    def __post_init__(self):
        if self.sigma_field < 0 or self.sigma_label < 0:
            raise ParameterError("noise standard deviations must be >= 0")
        for name in ("circle_count", "circle_radius"):
            lo, hi = getattr(self, name)
            if lo < 0 or lo > hi:
                raise ParameterError(f"{name}: invalid range ({lo}, {hi})")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class SynthConfig:
    grid: GridSpec = GridSpec(64, 64)
    ranges: ScenarioRanges = ScenarioRanges()
    colormap: ColormapSpec = ColormapSpec()
    noise: NoiseSpec = NoiseSpec()

    def __post_init__(self):
        r_hi = self.noise.circle_radius[1]
        if 2 * r_hi + 1 > min(self.grid.shape) and self.noise.circle_count[1] > 0:
            raise ParameterError("circle radius range does not fit inside the image")


@dataclass
class SampleRecord:
    sample_id: int
    image: np.ndarray  # H x W x 3 uint8
    y_clean: float
    y_noisy: float
    true_field: MoistureField | None = None


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def render_colormap(field, cm: ColormapSpec = ColormapSpec()) -> np.ndarray:
    x = field.values if isinstance(field, MoistureField) else np.asarray(field, dtype=np.float64)
    if np.any(x < 0) or np.any(x > 1) or not np.all(np.isfinite(x)):
        raise RangeError("render_colormap expects moisture values in [0, 1]; clip first")
    rgb = x[..., None] * cm.slopes + cm.intercepts
    return np.clip(round_half_away(rgb), 0, 255).astype(np.uint8)


def invert_colormap(img: np.ndarray, cm: ColormapSpec = ColormapSpec(), grid: GridSpec | None = None):
    """Exact pseudo-inverse through the red channel.

    Returns a MoistureField when ``grid`` is given, else a bare array (which
    also lets callers invert arbitrarily shaped or batched images).
    """
    red = np.asarray(img, dtype=np.float64)[..., 0]
    x = np.clip((red - cm.intercepts[0]) / cm.slopes[0], 0.0, 1.0)
    return MoistureField(grid, x) if grid is not None else x


def draw_circles(spec: NoiseSpec, shape: tuple[int, int], rng: np.random.Generator) -> list[tuple[int, int, int, float]]:
    """Random (row, col, radius, fill) tuples; draw order is part of the seed contract."""
    lo, hi = spec.circle_count
    k = int(rng.integers(lo, hi + 1))
    circles = []
    for _ in range(k):
        ci = int(rng.integers(0, shape[0]))
        cj = int(rng.integers(0, shape[1]))
        r = int(rng.integers(spec.circle_radius[0], spec.circle_radius[1] + 1))
        fill = float(rng.uniform(0.0, 1.0))
        circles.append((ci, cj, r, fill))
    return circles


def stamp_circles(field: MoistureField, spec: NoiseSpec, rng: np.random.Generator) -> MoistureField:
    out = field.values.copy()
    ii, jj = np.indices(out.shape)
    for ci, cj, r, fill in draw_circles(spec, out.shape, rng):
        out[(ii - ci) ** 2 + (jj - cj) ** 2 <= r * r] = fill
    return MoistureField(field.grid, out)


def add_field_noise(field: MoistureField, sigma: float, rng: np.random.Generator) -> MoistureField:
    if sigma < 0:
        raise ParameterError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return MoistureField(field.grid, field.values.copy())
    noisy = field.values + rng.normal(0.0, sigma, size=field.values.shape)
    return MoistureField(field.grid, np.clip(noisy, 0.0, 1.0))


def make_label(field, sigma_label: float, rng: np.random.Generator) -> tuple[float, float]:
    if sigma_label < 0:
        raise ParameterError(f"label sigma must be >= 0, got {sigma_label}")
    y_clean = integrate(field)
    y_noisy = y_clean + (float(rng.normal(0.0, sigma_label)) if sigma_label > 0 else 0.0)
    return y_clean, y_noisy


def sample_rng(base_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(base_seed), int(index)]))


def synthesize_sample(config: SynthConfig, base_seed: int, index: int) -> SampleRecord:
    """One sample: scenario -> solve -> label -> field noise -> circles -> colormap."""
    rng = sample_rng(base_seed, index)
    scenario = sample_scenario(rng, config.ranges)
    clean = solve_fourier(scenario, config.grid)
    y_clean, y_noisy = make_label(clean, config.noise.sigma_label, rng)
    corrupted = add_field_noise(clean, config.noise.sigma_field, rng)
    corrupted = stamp_circles(corrupted, config.noise, rng)
    image = render_colormap(corrupted, config.colormap)
    return SampleRecord(index, image, y_clean, y_noisy, clean)


def synthesize(config: SynthConfig, base_seed: int, n: int) -> list[SampleRecord]:
    return [synthesize_sample(config, base_seed, i) for i in range(n)]


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def labels_csv_bytes(records) -> bytes:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LABELS_HEADER)
    for r in records:
        w.writerow([r.sample_id, _fmt(r.y_clean), _fmt(r.y_noisy)])
    return buf.getvalue().encode("utf-8")


def png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def image_name(i: int) -> str:
    return f"images/sample_{i:05d}.png"


def field_name(i: int) -> str:
    return f"fields/sample_{i:05d}.f32"


def manifest_dict(config: SynthConfig, base_seed: int, n: int, checksums: dict[str, str]) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "base_seed": int(base_seed),
        "n_samples": int(n),
        "height": config.grid.height,
        "width": config.grid.width,
        "colormap": config.colormap.to_dict(),
        "noise": config.noise.to_dict(),
        "scenario_ranges": config.ranges.to_dict(),
        "generator_version": f"pgir {__version__}",
        "checksums": checksums,
    }


def manifest_bytes(manifest: dict) -> bytes:
    return (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8")


def manifest_hash(manifest: dict) -> str:
    return _sha256(manifest_bytes(manifest))


def generate_dataset(
    config: SynthConfig, base_seed: int, out_dir, n_samples: int, save_fields: bool = False
) -> dict:
    """Write a dataset directory and return its manifest.

    A ``.partial`` marker exists while writing; on failure everything this
    call created is removed before the exception propagates.
    """
    if n_samples < 0:
        raise ParameterError("n_samples must be >= 0")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / ".partial"
    created: list[Path] = []
    try:
        marker.write_text("generation in progress\n")
        (out / "images").mkdir(exist_ok=True)
        if save_fields:
            (out / "fields").mkdir(exist_ok=True)
        checksums: dict[str, str] = {}
        records = []
        for i in range(n_samples):
            rec = synthesize_sample(config, base_seed, i)
            data = png_bytes(rec.image)
            p = out / image_name(i)
            p.write_bytes(data)
            created.append(p)
            checksums[image_name(i)] = _sha256(data)
            if save_fields:
                p = out / field_name(i)
                write_raw(p, rec.true_field)
                created.append(p)
                checksums[field_name(i)] = _sha256(p.read_bytes())
            records.append(rec)
        labels = labels_csv_bytes(records)
        (out / "labels.csv").write_bytes(labels)
        created.append(out / "labels.csv")
        checksums["labels.csv"] = _sha256(labels)
        manifest = manifest_dict(config, base_seed, n_samples, checksums)
        (out / "manifest.json").write_bytes(manifest_bytes(manifest))
        marker.unlink()
        return manifest
    except BaseException:
        for p in created:
            p.unlink(missing_ok=True)
        for sub in ("images", "fields"):
            d = out / sub
            if d.is_dir() and not any(d.iterdir()):
                d.rmdir()
        marker.unlink(missing_ok=True)
        raise


def config_from_manifest(manifest: dict) -> SynthConfig:
    noise = manifest["noise"]
    ranges = manifest["scenario_ranges"]
    return SynthConfig(
        grid=GridSpec(manifest["height"], manifest["width"]),
        ranges=ScenarioRanges(**{k: tuple(v) if isinstance(v, list) else v for k, v in ranges.items()}),
        colormap=ColormapSpec(tuple(manifest["colormap"]["low_rgb"]), tuple(manifest["colormap"]["high_rgb"])),
        noise=NoiseSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in noise.items()}),
    )


def read_manifest(dir_path) -> dict:
    path = Path(dir_path) / "manifest.json"
    if not path.is_file():
        raise MissingFileError(f"{path}: manifest not found")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unknown dataset schema version {manifest.get('schema_version')!r}")
    return manifest


def load_dataset(dir_path, verify_checksums: bool = True) -> list[SampleRecord]:
    root = Path(dir_path)
    manifest = read_manifest(root)
    n = manifest["n_samples"]
    h, w = manifest["height"], manifest["width"]
    checksums = manifest.get("checksums", {})
    grid = GridSpec(h, w) if h >= 8 and w >= 8 else None

    labels_path = root / "labels.csv"
    if not labels_path.is_file():
        raise MissingFileError(f"{labels_path}: labels file not found")
    raw = labels_path.read_bytes()
    if verify_checksums and "labels.csv" in checksums and _sha256(raw) != checksums["labels.csv"]:
        raise FormatError("labels.csv checksum mismatch")
    rows = list(csv.reader(io.StringIO(raw.decode("utf-8"))))
    if not rows or rows[0] != LABELS_HEADER:
        raise SchemaError(f"labels.csv header must be {','.join(LABELS_HEADER)}")
    labels = {int(r[0]): (float(r[1]), float(r[2])) for r in rows[1:]}
    if len(labels) != n:
        raise SchemaError(f"manifest declares {n} samples but labels.csv has {len(labels)}")

    records = []
    for i in range(n):
        if i not in labels:
            raise SchemaError(f"sample {i} missing from labels.csv")
        p = root / image_name(i)
        if not p.is_file():
            raise MissingFileError(f"sample {i}: image file {p} not found")
        data = p.read_bytes()
        if verify_checksums and image_name(i) in checksums and _sha256(data) != checksums[image_name(i)]:
            raise FormatError(f"sample {i}: image checksum mismatch")
        img = np.asarray(Image.open(io.BytesIO(data)).convert("RGB"), dtype=np.uint8)
        if img.shape != (h, w, 3):
            raise DimensionError(f"sample {i}: image is {img.shape[:2]}, manifest says {(h, w)}")
        true_field = None
        fp = root / field_name(i)
        if fp.is_file() and grid is not None:
            true_field = read_raw(fp, grid)
        y_clean, y_noisy = labels[i]
        records.append(SampleRecord(i, img, y_clean, y_noisy, true_field))
    return records


def dataset_arrays(records) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack records into (N, 3, H, W) float32 images in [0, 1] plus y_noisy and y_clean."""
    imgs = np.stack([r.image for r in records]).transpose(0, 3, 1, 2).astype(np.float32) / 255.0
    y = np.array([r.y_noisy for r in records], dtype=np.float64)
    yc = np.array([r.y_clean for r in records], dtype=np.float64)
    return imgs, y, yc
