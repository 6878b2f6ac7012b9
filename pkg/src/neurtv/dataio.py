"""File ingestion and emission: observation tables, images, metric reports.

Observation tables are CSV files with one header row and rows of N
coordinates followed by one value.  Images come in as 8/16-bit binary PGM or
PNG and go out as 8-bit PNG, with pixel values mapped linearly to [0, 1].
"""

import csv
import json
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .sampling import MeshgridRequired

__all__ = [
    "ObservationTable",
    "POINTCLOUD_COLUMNS",
    "TRANSCRIPTOMICS_COLUMNS",
    "read_observation_table",
    "write_observation_table",
    "read_pointcloud_table",
    "read_transcriptomics_table",
    "read_image",
    "write_image",
    "write_pgm",
    "image_to_table",
    "table_to_grid",
    "partial_table_to_grid",
    "write_metrics",
]

POINTCLOUD_COLUMNS = ("x", "y", "z", "C", "v")
TRANSCRIPTOMICS_COLUMNS = ("x", "y", "g", "v")


@dataclass
class ObservationTable:
    """n rows of N coordinates plus one value; value in the last column."""

    coords: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.coords.ndim != 2 or self.values.ndim != 1:
            raise ValueError("coords must be (n, N) and values (n,)")
        if self.coords.shape[0] != self.values.shape[0]:
            raise ValueError("coordinate and value row counts differ")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("non-finite coordinates")

    @property
    def n_rows(self):
        return self.coords.shape[0]

    @property
    def n_dims(self):
        return self.coords.shape[1]


def read_observation_table(path, n_dims):
    """Parse a header-line CSV of rows with n_dims coordinates and a value.

    Errors name the offending 1-based line number.
    """
    coords, values = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_dims + 1:
                raise ValueError(
                    f"{path}:{line_no}: expected {n_dims + 1} columns, found {len(row)}"
                )
            try:
                numbers = [float(cell) for cell in row]
            except ValueError:
                raise ValueError(f"{path}:{line_no}: non-numeric field") from None
            if not all(np.isfinite(numbers)):
                raise ValueError(f"{path}:{line_no}: non-finite field")
            coords.append(numbers[:n_dims])
            values.append(numbers[n_dims])
    if not coords:
        raise ValueError(f"{path}: no data rows")
    return ObservationTable(np.array(coords), np.array(values))


def write_observation_table(table, path, columns=None):
    if columns is None:
        columns = tuple(f"x{d + 1}" for d in range(table.n_dims)) + ("v",)
    if len(columns) != table.n_dims + 1:
        raise ValueError("column name count does not match table width")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row, value in zip(table.coords, table.values):
            writer.writerow([f"{x:.17g}" for x in row] + [f"{value:.17g}"])


def _read_named_table(path, columns):
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is None or tuple(h.strip() for h in header) != columns:
        raise ValueError(
            f"{path}: header must be exactly {','.join(columns)}"
        )
    return read_observation_table(path, len(columns) - 1)


def read_pointcloud_table(path):
    """Rows of (x, y, z, C, v): spatial coordinates, channel index, value."""
    return _read_named_table(path, POINTCLOUD_COLUMNS)


def read_transcriptomics_table(path):
    """Rows of (x, y, g, v): spot coordinates, gene index, expression value."""
    return _read_named_table(path, TRANSCRIPTOMICS_COLUMNS)


# -- images -------------------------------------------------------------------

def _read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    # Header tokens: magic, width, height, maxval; '#' starts a comment.
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ValueError(f"{path}: truncated PGM header")
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] not in (10, 13):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError(f"{path}: malformed PGM header") from None
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: PGM maxval out of range: {maxval}")
    pos += 1  # single whitespace after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height
    raster = data[pos : pos + count * dtype.itemsize]
    if len(raster) != count * dtype.itemsize:
        raise ValueError(f"{path}: PGM raster truncated")
    pixels = np.frombuffer(raster, dtype=dtype).astype(np.float64)
    return (pixels / maxval).reshape(height, width)


def write_pgm(path, image, maxval=255):
    if not 0 < maxval < 65536:
        raise ValueError(f"PGM maxval out of range: {maxval}")
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if image.ndim != 2:
        raise ValueError("PGM images are single-channel 2-D")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    pixels = np.rint(image * maxval).astype(dtype)
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n{maxval}\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_image(path):
    """Read PGM or PNG into a float array in [0, 1]: (H, W) or (H, W, 3)."""
    path = str(path)
    if path.lower().endswith(".pgm"):
        return _read_pgm(path)
    with Image.open(path) as img:
        mode = img.mode
        if mode in ("L", "RGB"):
            return np.asarray(img, dtype=np.float64) / 255.0
        if mode in ("I", "I;16"):
            return np.asarray(img, dtype=np.float64) / 65535.0
        raise ValueError(f"{path}: unsupported image mode {mode!r}")


def write_image(path, image):
    """Write a [0, 1] array as 8-bit PNG; 2-D or (H, W, 1) gray, (H, W, 3) RGB."""
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[:, :, 0]
    pixels = np.rint(image * 255.0).astype(np.uint8)
    if pixels.ndim == 2:
        Image.fromarray(pixels, mode="L").save(path, format="PNG")
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        Image.fromarray(pixels, mode="RGB").save(path, format="PNG")
    else:
        raise ValueError(f"cannot write image of shape {image.shape}")


# -- grid <-> table -----------------------------------------------------------

def image_to_table(image):
    """Flatten an array to rows of integer pixel coordinates plus value."""
    image = np.asarray(image, dtype=np.float64)
    grids = np.meshgrid(*(np.arange(s) for s in image.shape), indexing="ij")
    coords = np.stack([g.reshape(-1) for g in grids], axis=1).astype(np.float64)
    return ObservationTable(coords, image.reshape(-1))


def table_to_grid(table, shape=None):
    """Reassemble a full-meshgrid table (integer coordinates) into an array."""
    coords = table.coords
    indices = np.rint(coords).astype(np.int64)
    if not np.allclose(coords, indices, atol=1e-9) or np.any(indices < 0):
        raise MeshgridRequired("table coordinates are not nonnegative integers")
    if shape is None:
        shape = tuple(int(m) + 1 for m in indices.max(axis=0))
    if len(shape) != table.n_dims:
        raise ValueError("shape arity does not match table coordinates")
    if table.n_rows != int(np.prod(shape)):
        raise MeshgridRequired(
            f"table has {table.n_rows} rows but the full grid {shape} needs "
            f"{int(np.prod(shape))}"
        )
    flat = np.ravel_multi_index(indices.T, shape)
    if np.unique(flat).size != flat.size:
        raise MeshgridRequired("duplicate grid coordinates in table")
    grid = np.empty(shape, dtype=np.float64)
    grid.reshape(-1)[flat] = table.values
    return grid


def partial_table_to_grid(table, shape=None):
    """Place a partially observed table into a grid plus an observation mask.

    Unobserved cells are zero.  The grid extent defaults to the bounding box
    of the observed integer coordinates.
    """
    coords = table.coords
    indices = np.rint(coords).astype(np.int64)
    if not np.allclose(coords, indices, atol=1e-9) or np.any(indices < 0):
        raise MeshgridRequired("table coordinates are not nonnegative integers")
    if shape is None:
        shape = tuple(int(m) + 1 for m in indices.max(axis=0))
    if len(shape) != table.n_dims:
        raise ValueError("shape arity does not match table coordinates")
    if np.any(indices.max(axis=0) >= np.asarray(shape)):
        raise ValueError("table coordinates fall outside the declared shape")
    flat = np.ravel_multi_index(indices.T, shape)
    if np.unique(flat).size != flat.size:
        raise MeshgridRequired("duplicate grid coordinates in table")
    grid = np.zeros(shape, dtype=np.float64)
    grid.reshape(-1)[flat] = table.values
    mask = np.zeros(shape, dtype=bool)
    mask.reshape(-1)[flat] = True
    return grid, mask


# -- metric reports -----------------------------------------------------------

def write_metrics(scores, txt_path, json_path=None):
    """Emit scores as key=value lines, and as JSON when a path is given."""
    if hasattr(scores, "as_dict"):
        scores = scores.as_dict()
    scores = {str(k): v for k, v in scores.items()}
    with open(txt_path, "w") as fh:
        for key in sorted(scores):
            value = scores[key]
            text = f"{value:.12g}" if isinstance(value, float) else str(value)
            fh.write(f"{key}={text}\n")
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(scores, fh, indent=2, sort_keys=True)
            fh.write("\n")
