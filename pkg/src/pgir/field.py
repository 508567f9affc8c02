"""Grid geometry, scalar moisture fields, the 5-point Laplacian and quadrature."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError

MIN_GRID = 8


@dataclass(frozen=True)
class GridSpec:
    """N x M sampling of the unit square; row index runs along u, column along v."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < MIN_GRID or self.width < MIN_GRID:
            raise DimensionError(f"grid must be at least {MIN_GRID}x{MIN_GRID}, got {self.height}x{self.width}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def spacing_u(self) -> float:
        return 1.0 / (self.height - 1)

    @property
    def spacing_v(self) -> float:
        return 1.0 / (self.width - 1)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """1-D coordinate vectors (u over rows, v over columns)."""
        return np.linspace(0.0, 1.0, self.height), np.linspace(0.0, 1.0, self.width)


@dataclass
class MoistureField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise DimensionError(f"values shape {self.values.shape} != grid {self.grid.shape}")

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "MoistureField":
        return cls(grid, np.full(grid.shape, float(value)))


def _values(field) -> np.ndarray:
    if isinstance(field, MoistureField):
        return field.values
    return np.asarray(field, dtype=np.float64)


def interior_mask(shape: tuple[int, int]) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    mask[1:-1, 1:-1] = True
    return mask


def laplacian5(field, pixel_units: bool = True, spacing: tuple[float, float] | None = None) -> np.ndarray:
    """5-point Laplacian with the border set to zero.

    ``field`` may be a MoistureField or a bare 2-D array. In physical units
    the per-axis spacings come from the grid (or ``spacing`` for bare arrays).
    """
    f = _values(field)
    if f.ndim != 2 or f.shape[0] < 3 or f.shape[1] < 3:
        raise DimensionError(f"laplacian5 needs a 2-D field of at least 3x3, got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("field contains non-finite values")
    if pixel_units:
        hu = hv = 1.0
    elif spacing is not None:
        hu, hv = spacing
    elif isinstance(field, MoistureField):
        hu, hv = field.grid.spacing_u, field.grid.spacing_v
    else:
        hu, hv = 1.0 / (f.shape[0] - 1), 1.0 / (f.shape[1] - 1)
    out = np.zeros_like(f)
    c = f[1:-1, 1:-1]
    out[1:-1, 1:-1] = (f[2:, 1:-1] - 2 * c + f[:-2, 1:-1]) / hu**2 + (f[1:-1, 2:] - 2 * c + f[1:-1, :-2]) / hv**2
    return out


def integrate(field) -> float:
    """Mean value times the (unit) domain area."""
    f = _values(field)
    if f.size == 0:
        raise DimensionError("cannot integrate an empty field")
    return float(np.mean(f))


def write_raw(path, field) -> None:
    """Little-endian float32, row-major, no header."""
    np.ascontiguousarray(_values(field), dtype="<f4").tofile(path)


def read_raw(path, grid: GridSpec) -> MoistureField:
    data = np.fromfile(Path(path), dtype="<f4")
    if data.size != grid.height * grid.width:
        raise FormatError(f"{path}: expected {grid.height * grid.width} float32 values, found {data.size}")
    return MoistureField(grid, data.reshape(grid.shape).astype(np.float64))
