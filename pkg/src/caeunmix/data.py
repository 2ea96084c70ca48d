"""Hyperspectral cube containers and on-disk formats.

Cube files are a small ``key = value`` text header next to a raw
band-sequential (BSQ) blob of little-endian floats::

    rows = 100
    cols = 100
    bands = 198
    dtype = f64
    interleave = bsq
    byteorder = little
    data = jasper.raw

Matrices travel as plain CSV (no header row), images as binary PGM (P5).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, ShapeError

DTYPES = {"f32": "<f4", "f64": "<f8"}
REQUIRED_KEYS = ("rows", "cols", "bands", "dtype", "interleave", "byteorder", "data")


@dataclass
class HsiCube:
    """A hyperspectral image stored band-major: ``data[band, row, col]``."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ShapeError(f"cube data must be bands x rows x cols, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ContractError("cube contains NaN or infinite values")

    @classmethod
    def from_matrix(cls, X, rows, cols):
        """Build a cube from an ``m x n`` pixel-by-band matrix (pixels row-major)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != rows * cols:
            raise ShapeError(f"matrix of shape {X.shape} does not hold {rows}x{cols} pixels")
        return cls(X.T.reshape(X.shape[1], rows, cols))

    @property
    def bands(self):
        return self.data.shape[0]

    @property
    def rows(self):
        return self.data.shape[1]

    @property
    def cols(self):
        return self.data.shape[2]

    @property
    def pixels(self):
        return self.rows * self.cols

    def band(self, b):
        return self.data[b]

    def as_matrix(self):
        """Return the ``m x n`` matrix whose column ``b`` is the roll-out of band ``b``."""
        return self.data.reshape(self.bands, -1).T.copy()


@dataclass
class FactorPair:
    """Abundances ``S`` (m x r) and endmember signatures ``A`` (r x n)."""

    S: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=np.float64)
        self.A = np.asarray(self.A, dtype=np.float64)
        if self.S.ndim != 2 or self.A.ndim != 2 or self.S.shape[1] != self.A.shape[0]:
            raise ShapeError(
                f"abundances {self.S.shape} and endmembers {self.A.shape} are not conformable"
            )

    @property
    def r(self):
        return self.A.shape[0]


def reconstruct(factors):
    """Linear mixing ``X = S A``."""
    return factors.S @ factors.A


# ---------------------------------------------------------------------------
# Cube IO
# ---------------------------------------------------------------------------


def _parse_header(path):
    fields = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FormatError(f"{path}:{lineno}: expected 'key = value'", line=lineno)
            fields[key.strip().lower()] = value.strip()
    for key in REQUIRED_KEYS:
        if key not in fields:
            raise FormatError(f"{path}: missing header key {key!r}", field=key)
    return fields


def _positive_int(fields, key):
    try:
        value = int(fields[key])
    except ValueError:
        raise FormatError(f"header key {key!r} must be an integer, got {fields[key]!r}", field=key)
    if value < 1:
        raise FormatError(f"header key {key!r} must be positive, got {value}", field=key)
    return value


def load_cube(header_path):
    header_path = Path(header_path)
    fields = _parse_header(header_path)
    rows, cols, bands = (_positive_int(fields, k) for k in ("rows", "cols", "bands"))
    dtype = fields["dtype"].lower()
    if dtype not in DTYPES:
        raise FormatError(f"unsupported dtype {dtype!r}; expected f32 or f64", field="dtype")
    if fields["interleave"].lower() != "bsq":
        raise FormatError(
            f"unsupported interleave {fields['interleave']!r}; only bsq is read",
            field="interleave",
        )
    if fields["byteorder"].lower() != "little":
        raise FormatError(
            f"unsupported byteorder {fields['byteorder']!r}; only little is read",
            field="byteorder",
        )
    blob_path = header_path.parent / fields["data"]
    raw = np.fromfile(blob_path, dtype=DTYPES[dtype])
    expected = rows * cols * bands
    if raw.size * raw.itemsize != os.path.getsize(blob_path) or raw.size != expected:
        raise FormatError(
            f"{blob_path}: holds {os.path.getsize(blob_path)} bytes, header declares "
            f"{rows}x{cols}x{bands} {dtype} ({expected * raw.itemsize} bytes)",
            field="data",
        )
    return HsiCube(raw.astype(np.float64).reshape(bands, rows, cols))


def save_cube(cube, header_path, dtype="f64"):
    """Write ``cube`` as a header plus a sibling ``.raw`` blob."""
    if dtype not in DTYPES:
        raise FormatError(f"unsupported dtype {dtype!r}", field="dtype")
    header_path = Path(header_path)
    blob_name = header_path.with_suffix(".raw").name
    if blob_name == header_path.name:
        blob_name += ".raw"
    header = (
        f"rows = {cube.rows}\n"
        f"cols = {cube.cols}\n"
        f"bands = {cube.bands}\n"
        f"dtype = {dtype}\n"
        "interleave = bsq\n"
        "byteorder = little\n"
        f"data = {blob_name}\n"
    )
    header_path.write_text(header, encoding="utf-8")
    cube.data.astype(DTYPES[dtype]).tofile(header_path.parent / blob_name)


def normalize_cube(cube):
    """Scale a cube into [0, 1] by its global maximum.

    Negative readings (sensor noise in some public scenes) are clipped to 0
    first so the result is a valid nonnegative reflectance cube.
    """
    data = np.maximum(cube.data, 0.0)
    peak = data.max()
    if not peak > 0:
        raise ContractError("cannot normalize a cube whose maximum is not positive")
    return HsiCube(data / peak)


# ---------------------------------------------------------------------------
# CSV matrices
# ---------------------------------------------------------------------------


def load_matrix_csv(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values = [float(cell) for cell in line.split(",")]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric cell", line=lineno)
            if rows and len(values) != len(rows[0]):
                raise FormatError(
                    f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(values)}",
                    line=lineno,
                )
            rows.append(values)
    if not rows:
        raise FormatError(f"{path}: empty matrix file")
    return np.array(rows, dtype=np.float64)


def save_matrix_csv(matrix, path):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


# ---------------------------------------------------------------------------
# PGM images
# ---------------------------------------------------------------------------


def to_gray8(image):
    """Scale a nonnegative image by its own maximum to 0..255 (all-zero stays black)."""
    image = np.asarray(image, dtype=np.float64)
    peak = image.max()
    if not peak > 0:
        return np.zeros(image.shape, dtype=np.uint8)
    return np.clip(np.rint(image / peak * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, image):
    """Write a 2-D uint8 array as binary PGM (P5, maxval 255)."""
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ShapeError("write_pgm expects a 2-D uint8 array")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image).tobytes())


def read_pgm(path):
    """Parse a binary P5 PGM with maxval <= 255; comments are allowed in the header."""
    blob = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(blob[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if not 0 < maxval < 256:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    payload = blob[pos + 1:]
    if len(payload) != width * height:
        raise FormatError(
            f"{path}: payload has {len(payload)} bytes, expected {width * height}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def export_abundance_maps(S, rows, cols, out_dir, names=None):
    """Write one PGM per abundance column; returns the written paths."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != rows * cols:
        raise ShapeError(f"abundance matrix {S.shape} does not cover {rows}x{cols} pixels")
    if np.any(S < 0):
        raise ContractError("abundance maps must be nonnegative")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = names or [f"abundance_{k}" for k in range(S.shape[1])]
    paths = []
    for k, name in enumerate(names):
        path = out_dir / f"{name}.pgm"
        write_pgm(path, to_gray8(S[:, k].reshape(rows, cols)))
        paths.append(path)
    return paths
