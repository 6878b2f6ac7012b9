"""Sampling lattices and coordinate normalization.

The canonical network domain is [-1, 1]^N.  A meshgrid over an
(n_1, ..., n_N) data array places, along each dimension, the right
endpoints of ``factor * n_d`` uniform partitions of [-1, 1]:

    x_j = -1 + 2 j / (factor * n_d),   j = 1 .. factor * n_d.

With this convention the factor-1 grid is a subset of every factor-k grid,
and data index i along a dimension sits at the factor-1 endpoint
x_{i+1} = -1 + 2 (i + 1) / n_d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CoordinateMap",
    "SampleSet",
    "normalize_coords",
    "make_meshgrid",
    "axis_coordinates",
    "indices_to_canonical",
]

MAX_MESHGRID_POINTS = 10**7


class MeshgridRequired(ValueError):
    """Raised when an operation needs full meshgrid samples but got scattered ones."""


@dataclass(frozen=True)
class CoordinateMap:
    """Affine map between per-dimension raw ranges and [-1, 1], kept invertible."""

    lows: tuple
    highs: tuple

    def __post_init__(self):
        for lo, hi in zip(self.lows, self.highs):
            if not hi > lo:
                raise ValueError(f"degenerate coordinate range [{lo}, {hi}]")

    @property
    def n_dims(self) -> int:
        return len(self.lows)

    def normalize(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        lo = np.asarray(self.lows)
        hi = np.asarray(self.highs)
        return 2.0 * (raw - lo) / (hi - lo) - 1.0

    def denormalize(self, canonical) -> np.ndarray:
        canonical = np.asarray(canonical, dtype=np.float64)
        lo = np.asarray(self.lows)
        hi = np.asarray(self.highs)
        return lo + (canonical + 1.0) * (hi - lo) / 2.0


def normalize_coords(raw, ranges=None):
    """Map raw coordinate rows into [-1, 1]^N.

    Returns ``(canonical, coordinate_map)``.  Ranges default to the per-column
    min/max of the data; a constant column is an error.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise ValueError("raw coordinates must be an (n, N) array")
    if ranges is None:
        lows = tuple(raw.min(axis=0).tolist())
        highs = tuple(raw.max(axis=0).tolist())
    else:
        lows = tuple(float(lo) for lo, _ in ranges)
        highs = tuple(float(hi) for _, hi in ranges)
    cmap = CoordinateMap(lows, highs)
    return cmap.normalize(raw), cmap


@dataclass
class SampleSet:
    """A set of canonical sample points, with meshgrid structure when present.

    ``provenance`` is one of ``data-meshgrid`` (factor 1), ``dense-meshgrid``
    (factor > 1) or ``data-points`` (scattered rows).  For meshgrids,
    ``axes`` holds the per-dimension coordinate arrays whose cartesian
    product (last dimension fastest) equals ``points``, and ``spacings`` the
    uniform per-dimension step.
    """

    points: np.ndarray
    provenance: str
    axes: list = None
    grid_shape: tuple = None
    spacings: tuple = None

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_dims(self) -> int:
        return self.points.shape[1]

    @property
    def is_meshgrid(self) -> bool:
        return self.provenance in ("data-meshgrid", "dense-meshgrid")

    @classmethod
    def from_points(cls, points) -> "SampleSet":
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2:
            raise ValueError("points must be an (n, N) array")
        return cls(points=points, provenance="data-points")


def axis_coordinates(extent: int, factor: int = 1) -> np.ndarray:
    """Right endpoints of ``factor * extent`` uniform partitions of [-1, 1]."""
    count = factor * extent
    return -1.0 + 2.0 * np.arange(1, count + 1) / count


def indices_to_canonical(indices, shape) -> np.ndarray:
    """Canonical coordinates of integer grid indices (0-based, per dimension)."""
    indices = np.asarray(indices, dtype=np.float64)
    shape = np.asarray(shape, dtype=np.float64)
    if indices.ndim != 2 or indices.shape[1] != len(shape):
        raise ValueError("indices must be (n, N) matching the grid shape arity")
    if np.any(indices < 0) or np.any(indices >= shape):
        raise ValueError("grid index out of range")
    return -1.0 + 2.0 * (indices + 1.0) / shape


def make_meshgrid(shape, factor=1) -> SampleSet:
    """Uniform canonical meshgrid over a data array shape, densified by ``factor``.

    ``factor`` is an integer applied to every dimension, or one integer per
    dimension (e.g. to densify spatial axes while keeping a channel axis at
    data resolution).
    """
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ValueError("grid shape entries must be positive")
    factors = (factor,) * len(shape) if np.isscalar(factor) else tuple(factor)
    if len(factors) != len(shape):
        raise ValueError("per-dimension factors must match the shape arity")
    factors = tuple(int(f) for f in factors)
    if any(f < 1 for f in factors):
        raise ValueError("resolution factor must be a positive integer")
    counts = [f * s for f, s in zip(factors, shape)]
    total = int(np.prod(counts, dtype=np.int64))
    if total > MAX_MESHGRID_POINTS:
        raise ValueError(
            f"meshgrid of {total} points exceeds the {MAX_MESHGRID_POINTS} cap"
        )
    axes = [axis_coordinates(s, f) for s, f in zip(shape, factors)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.reshape(-1) for m in mesh], axis=1)
    return SampleSet(
        points=points,
        provenance="data-meshgrid" if all(f == 1 for f in factors) else "dense-meshgrid",
        axes=axes,
        grid_shape=tuple(counts),
        spacings=tuple(2.0 / c for c in counts),
    )
