"""Precomputed distance fields around a gate, with worst-case inflation.

The field stores, at every node of a regular gate-frame grid, the exact
Euclidean clearance to the frame (sentinel -1.0 strictly inside the solid)
plus finite-difference gradients. Queries between nodes are answered by
trilinear interpolation of both values and gradients.

Worst-case inflation replaces each node value with the minimum over a
(2k+1)^3 neighborhood, which realizes "minimum clearance over all gate
translations within +/-eps per axis" quantized to whole cells. Inflated
values never exceed nominal ones, and any -1 inside the window wins.

File format (all little-endian)::

    magic   4 bytes  b"ESDF"
    version u32      2
    flags   u32      bit 0 set when a gradient block is present
    dims    3 x u32  nx, ny, nz
    origin  3 x f64  grid min corner [m]
    res     f64      node spacing [m]
    infl    3 x f64  inflation applied per axis [m] (0 for a nominal map)
    values  nx*ny*nz x f32, x-fastest node order
    grads   3 x f32 per node, same node order (only when flags bit 0 is set)
    crc32   u32      checksum of every preceding byte

Grid geometry is kept at full double precision so node coordinates of a
loaded map equal those of the freshly built one bit for bit; node values
and gradients are f32, matching the in-memory arrays.
"""
from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import GateGeometry, exact_distance_batch

MAGIC = b"ESDF"
FORMAT_VERSION = 2
FLAG_GRADIENTS = 0x1
_HEADER = struct.Struct("<4sII3I3dd3d")

INSIDE_SENTINEL = -1.0


class MapFormatError(Exception):
    """A map file does not conform to the on-disk format."""


class BadMagicError(MapFormatError):
    """The file does not start with the expected magic bytes."""


class UnsupportedVersionError(MapFormatError):
    """The file declares a format version this code does not understand."""


class TruncatedMapError(MapFormatError):
    """The file ends before the declared payload is complete."""


class ChecksumMismatchError(MapFormatError):
    """The stored CRC32 does not match the file contents."""


class OutOfBoundsError(ValueError):
    """A query point lies outside the grid extent."""


class InsideObstacleError(ValueError):
    """A query cell touches the solid; interpolation is undefined there."""


class GridCoverageError(ValueError):
    """The grid extent is too small for the gate plus required margins."""


@dataclass
class GridSpec:
    """Regular grid in the gate frame: min corner, node spacing, node counts."""

    origin: np.ndarray
    resolution: float
    dims: tuple[int, int, int]

    def __post_init__(self) -> None:
        self.origin = np.asarray(self.origin, dtype=float)
        if self.origin.shape != (3,) or not np.all(np.isfinite(self.origin)):
            raise ValueError("origin must be a finite 3-vector")
        if not (math.isfinite(self.resolution) and self.resolution > 0.0):
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        self.dims = tuple(int(n) for n in self.dims)
        if len(self.dims) != 3 or any(n < 2 for n in self.dims):
            raise ValueError(f"dims must be three counts >= 2, got {self.dims}")

    @property
    def max_corner(self) -> np.ndarray:
        return self.origin + self.resolution * (np.array(self.dims, dtype=float) - 1.0)

    def axis_nodes(self, k: int) -> np.ndarray:
        return self.origin[k] + self.resolution * np.arange(self.dims[k])


@dataclass
class DistanceField:
    """Node values (float32, -1 inside the solid) plus node gradients."""

    spec: GridSpec
    values: np.ndarray
    gradients: np.ndarray | None
    inflated_by: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.inflated_by = np.asarray(self.inflated_by, dtype=float)
        if self.values.shape != self.spec.dims:
            raise ValueError(f"values shape {self.values.shape} != dims {self.spec.dims}")
        if self.gradients is not None and self.gradients.shape != self.spec.dims + (3,):
            raise ValueError(f"gradients shape {self.gradients.shape} != dims + (3,)")


def build_field(
    gate: GateGeometry,
    spec: GridSpec,
    *,
    safety_radius: float = 0.0,
    inflation: np.ndarray | None = None,
) -> DistanceField:
    """Evaluate the exact gate clearance at every grid node.

    The grid must extend past the gate's outer bounds by ``safety_radius``
    plus the planned per-axis ``inflation`` on every side; otherwise a
    :class:`GridCoverageError` names the offending axis.
    """
    infl = np.zeros(3) if inflation is None else np.asarray(inflation, dtype=float)
    required = np.array([gate.half_depth, gate.outer_half, gate.outer_half])
    required = required + float(safety_radius) + infl
    for k, name in enumerate("xyz"):
        lo, hi = spec.origin[k], spec.max_corner[k]
        if lo > -required[k] or hi < required[k]:
            raise GridCoverageError(
                f"grid extent on axis '{name}' [{lo:g}, {hi:g}] does not cover the gate "
                f"plus margins (need at least [-{required[k]:g}, {required[k]:g}])"
            )

    nx, ny, nz = spec.dims
    xs, ys, zs = (spec.axis_nodes(k) for k in range(3))
    pts = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
    values = exact_distance_batch(pts, gate).reshape(spec.dims).astype(np.float32)
    gradients = _node_gradients(values, spec.resolution)
    return DistanceField(spec=spec, values=values, gradients=gradients, inflated_by=np.zeros(3))


def _node_gradients(values: np.ndarray, res: float) -> np.ndarray:
    """Central differences per axis, one-sided at borders and next to -1 cells.

    Nodes inside the solid (value -1) get zero gradient; -1 neighbors are
    excluded from every stencil.
    """
    v = values.astype(np.float64)
    valid = v != INSIDE_SENTINEL
    grads = np.zeros(values.shape + (3,), dtype=np.float64)
    for axis in range(3):
        vl = np.roll(v, 1, axis=axis)
        vr = np.roll(v, -1, axis=axis)
        has_l = np.roll(valid, 1, axis=axis).copy()
        has_r = np.roll(valid, -1, axis=axis).copy()
        # Roll wraps around; the wrapped entries are not real neighbors.
        sl_first = [slice(None)] * 3
        sl_first[axis] = slice(0, 1)
        sl_last = [slice(None)] * 3
        sl_last[axis] = slice(-1, None)
        has_l[tuple(sl_first)] = False
        has_r[tuple(sl_last)] = False

        central = (vr - vl) / (2.0 * res)
        fwd = (vr - v) / res
        bwd = (v - vl) / res
        g = np.where(
            has_l & has_r, central, np.where(has_r, fwd, np.where(has_l, bwd, 0.0))
        )
        grads[..., axis] = np.where(valid, g, 0.0)
    return grads.astype(np.float32)


def quantize_inflation(eps: np.ndarray, resolution: float) -> np.ndarray:
    """Round a per-axis inflation up to whole cells (never down).

    :func:`inflate_field` insists on whole-cell inflations; this helper makes
    the conservative choice for callers holding an arbitrary bound.
    """
    eps = np.asarray(eps, dtype=float)
    if eps.shape != (3,) or np.any(eps < 0.0) or not np.all(np.isfinite(eps)):
        raise ValueError(f"eps must be three finite non-negative values, got {eps}")
    cells = np.ceil(eps / resolution - 1e-9)
    return np.maximum(cells, 0.0) * resolution


def inflate_field(f: DistanceField, eps: np.ndarray) -> DistanceField:
    """Worst-case inflation: per-node minimum over a +/-eps window.

    ``eps`` must be whole cell multiples per axis (use
    :func:`quantize_inflation` to round up); the input field must be nominal
    (not already inflated). Gradients are recomputed from the inflated values.
    """
    if np.any(f.inflated_by != 0.0):
        raise ValueError(f"field is already inflated by {f.inflated_by}; inflate a nominal field")
    eps = np.asarray(eps, dtype=float)
    if eps.shape != (3,) or np.any(eps < 0.0) or not np.all(np.isfinite(eps)):
        raise ValueError(f"eps must be three finite non-negative values, got {eps}")
    cells = eps / f.spec.resolution
    k = np.rint(cells)
    if np.any(np.abs(cells - k) > 1e-6):
        raise ValueError(
            f"eps {eps.tolist()} is not a whole number of cells at resolution "
            f"{f.spec.resolution:g}; round up explicitly (see quantize_inflation)"
        )
    size = tuple(int(2 * ki + 1) for ki in k)
    values = ndimage.minimum_filter(f.values, size=size, mode="nearest")
    return DistanceField(
        spec=f.spec,
        values=values,
        gradients=_node_gradients(values, f.spec.resolution),
        inflated_by=eps.copy(),
    )


def sample(f: DistanceField, q: np.ndarray) -> tuple[float, np.ndarray]:
    """Trilinear value and gradient at a gate-frame point.

    Raises :class:`OutOfBoundsError` outside the grid extent and
    :class:`InsideObstacleError` when any corner of the enclosing cell is an
    inside-solid node.
    """
    res = f.spec.resolution
    origin = f.spec.origin
    nx, ny, nz = f.spec.dims

    rel = [0.0, 0.0, 0.0]
    idx = [0, 0, 0]
    frac = [0.0, 0.0, 0.0]
    for k in range(3):
        qk = float(q[k])
        if not math.isfinite(qk):
            raise ValueError(f"query must be finite, got {q}")
        r = (qk - float(origin[k])) / res
        n = f.spec.dims[k]
        if r < -1e-9 or r > (n - 1) + 1e-9:
            raise OutOfBoundsError(
                f"query {np.asarray(q).tolist()} outside grid extent on axis {'xyz'[k]}"
            )
        i = int(r)
        if i > n - 2:
            i = n - 2
        if i < 0:
            i = 0
        t = r - i
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        rel[k], idx[k], frac[k] = r, i, t

    i, j, l = idx
    v = f.values
    c = (
        float(v[i, j, l]), float(v[i, j, l + 1]), float(v[i, j + 1, l]), float(v[i, j + 1, l + 1]),
        float(v[i + 1, j, l]), float(v[i + 1, j, l + 1]), float(v[i + 1, j + 1, l]), float(v[i + 1, j + 1, l + 1]),
    )
    if min(c) == INSIDE_SENTINEL:
        raise InsideObstacleError(f"query {np.asarray(q).tolist()} touches an inside-solid cell")

    tx, ty, tz = frac
    w = (
        (1 - tx) * (1 - ty) * (1 - tz), (1 - tx) * (1 - ty) * tz,
        (1 - tx) * ty * (1 - tz), (1 - tx) * ty * tz,
        tx * (1 - ty) * (1 - tz), tx * (1 - ty) * tz,
        tx * ty * (1 - tz), tx * ty * tz,
    )
    d = sum(wi * ci for wi, ci in zip(w, c))

    if f.gradients is None:
        raise ValueError("field carries no gradients")
    g = f.gradients
    corners = (
        g[i, j, l], g[i, j, l + 1], g[i, j + 1, l], g[i, j + 1, l + 1],
        g[i + 1, j, l], g[i + 1, j, l + 1], g[i + 1, j + 1, l], g[i + 1, j + 1, l + 1],
    )
    grad = np.zeros(3)
    for wi, gi in zip(w, corners):
        grad += wi * gi.astype(np.float64)
    return float(d), grad


# Status codes returned by sample_batch.
SAMPLE_OK = 0
SAMPLE_OOB = 1
SAMPLE_IN_OBSTACLE = 2


def sample_batch(f: DistanceField, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized :func:`sample` with per-point status codes instead of raises.

    Returns (values, gradients, status); entries with nonzero status carry
    NaN values.
    """
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array, got {pts.shape}")
    n = pts.shape[0]
    res = f.spec.resolution
    dims = np.array(f.spec.dims)
    rel = (pts - f.spec.origin[None, :]) / res
    oob = np.any((rel < -1e-9) | (rel > (dims - 1)[None, :] + 1e-9), axis=1)

    idx = np.clip(np.floor(rel).astype(int), 0, (dims - 2)[None, :])
    frac = np.clip(rel - idx, 0.0, 1.0)
    # Clamp out-of-bounds rows to a valid cell so the gather below is safe.
    idx[oob] = 0

    i, j, l = idx[:, 0], idx[:, 1], idx[:, 2]
    tx, ty, tz = frac[:, 0], frac[:, 1], frac[:, 2]
    v = f.values
    g = f.gradients
    vals = np.zeros(n)
    grads = np.zeros((n, 3))
    in_obs = np.zeros(n, dtype=bool)
    corner_min = np.full(n, np.inf)
    for dx in (0, 1):
        wx = tx if dx else (1.0 - tx)
        for dy in (0, 1):
            wy = ty if dy else (1.0 - ty)
            for dz in (0, 1):
                wz = tz if dz else (1.0 - tz)
                w = wx * wy * wz
                cv = v[i + dx, j + dy, l + dz].astype(np.float64)
                corner_min = np.minimum(corner_min, cv)
                vals += w * cv
                grads += w[:, None] * g[i + dx, j + dy, l + dz].astype(np.float64)
    in_obs = corner_min == INSIDE_SENTINEL

    status = np.zeros(n, dtype=np.int8)
    status[in_obs] = SAMPLE_IN_OBSTACLE
    status[oob] = SAMPLE_OOB
    bad = status != SAMPLE_OK
    vals[bad] = np.nan
    grads[bad] = np.nan
    return vals, grads, status


def save_field(f: DistanceField, path: str | Path) -> None:
    """Write a field to disk in the binary map format."""
    flags = FLAG_GRADIENTS if f.gradients is not None else 0
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        flags,
        *f.spec.dims,
        *(float(c) for c in f.spec.origin),
        float(f.spec.resolution),
        *(float(e) for e in f.inflated_by),
    )
    chunks = [header, np.ascontiguousarray(f.values.astype("<f4", copy=False).ravel(order="F")).tobytes()]
    if f.gradients is not None:
        # x-fastest node order with the 3 components adjacent per node.
        g = f.gradients.astype("<f4", copy=False).transpose(2, 1, 0, 3)
        chunks.append(np.ascontiguousarray(g).tobytes())
    payload = b"".join(chunks)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(payload + struct.pack("<I", crc))


def load_field(path: str | Path) -> DistanceField:
    """Read a field written by :func:`save_field`, verifying the checksum."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise TruncatedMapError(f"{path}: file shorter than the magic header")
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedMapError(f"{path}: truncated header")
    magic, version, flags, nx, ny, nz, ox, oy, oz, res, ex, ey, ez = _HEADER.unpack_from(raw, 0)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported format version {version}")

    n = nx * ny * nz
    size = _HEADER.size + 4 * n
    if flags & FLAG_GRADIENTS:
        size += 12 * n
    size += 4  # crc
    if len(raw) < size:
        raise TruncatedMapError(f"{path}: expected {size} bytes, found {len(raw)}")
    if len(raw) > size:
        raise MapFormatError(f"{path}: {len(raw) - size} trailing bytes after checksum")

    (stored_crc,) = struct.unpack_from("<I", raw, size - 4)
    crc = zlib.crc32(raw[: size - 4]) & 0xFFFFFFFF
    if crc != stored_crc:
        raise ChecksumMismatchError(f"{path}: crc32 {crc:#010x} != stored {stored_crc:#010x}")

    offset = _HEADER.size
    values = (
        np.frombuffer(raw, dtype="<f4", count=n, offset=offset)
        .reshape((nx, ny, nz), order="F")
        .copy()
    )
    offset += 4 * n
    gradients = None
    if flags & FLAG_GRADIENTS:
        gradients = (
            np.frombuffer(raw, dtype="<f4", count=3 * n, offset=offset)
            .reshape((nz, ny, nx, 3))
            .transpose(2, 1, 0, 3)
            .copy()
        )
    spec = GridSpec(origin=np.array([ox, oy, oz], dtype=float), resolution=float(res), dims=(nx, ny, nz))
    return DistanceField(spec=spec, values=values, gradients=gradients, inflated_by=np.array([ex, ey, ez], dtype=float))


def default_grid_spec(resolution: float = 0.1) -> GridSpec:
    """The stock gate-frame grid: x, y in [-6, 6], z in [-4, 4]."""
    nx = int(round(12.0 / resolution)) + 1
    ny = nx
    nz = int(round(8.0 / resolution)) + 1
    return GridSpec(origin=np.array([-6.0, -6.0, -4.0]), resolution=resolution, dims=(nx, ny, nz))
