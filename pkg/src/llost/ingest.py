"""Segmented mask volume -> world-coordinate surface point cloud.

Pipeline: per-slice signed distance fields, linear interpolation along z onto
a finer slice grid, marching cubes, then area-weighted surface sampling.
Axis conventions: voxel arrays are indexed ``(slice, row, col)`` with spacing
``(dz, dy, dx)``; world points are ``(x, y, z)`` with origin ``(x0, y0, z0)``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage import measure

DEFAULT_POINTS = 2048
CAP_EPS = 1e-3


@dataclass
class MaskVolume:
    voxels: np.ndarray
    spacing: tuple[float, float, float]  # (dz, dy, dx) in mm
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)  # (x0, y0, z0) in mm

    def __post_init__(self):
        v = np.asarray(self.voxels)
        if v.ndim != 3:
            raise ValueError(f"mask must be 3-D, got shape {v.shape}")
        if not np.isin(v, (0, 1)).all():
            raise ValueError("mask voxels must be binary")
        self.voxels = v.astype(bool)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError("spacing must be three positive numbers")
        if len(self.origin) != 3:
            raise ValueError("origin must have three entries")
        if not self.voxels.any():
            raise ValueError("mask is empty")

    @classmethod
    def from_indices(cls, indices, shape, spacing, origin=(0.0, 0.0, 0.0)) -> "MaskVolume":
        """Rasterize an enumeration of ``(slice, row, col)`` voxel indices."""
        vox = np.zeros(shape, dtype=bool)
        idx = np.asarray(indices, dtype=np.int64).reshape(-1, 3)
        vox[idx[:, 0], idx[:, 1], idx[:, 2]] = True
        return cls(vox, spacing, origin)


@dataclass
class Surface:
    """Implicit surface: negative inside, zero on the boundary."""

    sdf: np.ndarray  # (slices, rows, cols)
    spacing: tuple[float, float, float]  # (dz, dy, dx)
    origin: tuple[float, float, float]  # world (x, y, z) of sdf[0, 0, 0]
    meta: dict = field(default_factory=dict)


def mask_to_world(mask: MaskVolume) -> np.ndarray:
    """World ``(x, y, z)`` of every nonzero voxel centre."""
    dz, dy, dx = mask.spacing
    x0, y0, z0 = mask.origin
    s, r, c = np.nonzero(mask.voxels)
    if len(s) == 0:
        raise ValueError("mask is empty")
    return np.column_stack([c * dx + x0, r * dy + y0, s * dz + z0]).astype(float)


def slice_sdf(sl: np.ndarray, dy: float, dx: float) -> np.ndarray:
    """2-D signed distance of one binary slice with the boundary on voxel faces."""
    half = 0.25 * (dy + dx)
    if not sl.any():
        return np.full(sl.shape, np.inf)
    outside = ndimage.distance_transform_edt(~sl, sampling=(dy, dx))
    inside = ndimage.distance_transform_edt(sl, sampling=(dy, dx))
    return np.where(sl, half - inside, outside - half)


def interpolate_z(mask: MaskVolume, target_dz: float) -> Surface:
    """Resample the lesion onto slices no further apart than ``target_dz``.

    Non-empty slices act as keyframes; grid slices between two keyframes take
    the linear blend of their distance fields, which also bridges gaps of
    empty slices. A positive cap slice one grid step beyond each end closes
    the surface about half a step past the end keyframes. A lesion present on
    a single slice is extruded by one slice thickness and flagged in ``meta``.
    """
    if target_dz <= 0:
        raise ValueError("target_dz must be positive")
    dz, dy, dx = mask.spacing
    x0, y0, z0 = mask.origin
    # one outside pixel of padding so each slice contour closes
    vox = np.pad(mask.voxels, ((0, 0), (1, 1), (1, 1)))
    keys = np.flatnonzero(vox.any(axis=(1, 2)))
    fields = {int(k): slice_sdf(vox[k], dy, dx) for k in keys}
    key_z = keys * dz
    meta = {"extruded": False, "keyframes": len(keys)}

    if len(keys) == 1:
        meta["extruded"] = True
        z_grid = key_z[:1].astype(float)
        body = fields[int(keys[0])][None]
        step = dz
    else:
        span = key_z[-1] - key_z[0]
        n = int(math.ceil(span / target_dz - 1e-9)) + 1
        z_grid = np.linspace(key_z[0], key_z[-1], n)
        step = span / (n - 1)
        hi = np.clip(np.searchsorted(key_z, z_grid, side="right"), 1, len(keys) - 1)
        lo = hi - 1
        w = (z_grid - key_z[lo]) / (key_z[hi] - key_z[lo])
        body = np.stack([
            (1 - wi) * fields[int(keys[a])] + wi * fields[int(keys[b])]
            for a, b, wi in zip(lo, hi, w)
        ])
    cap_lo = np.abs(body[0]) + CAP_EPS
    cap_hi = np.abs(body[-1]) + CAP_EPS
    sdf = np.concatenate([cap_lo[None], body, cap_hi[None]])
    meta["slice_spacing"] = float(step)
    origin = (x0 - dx, y0 - dy, z0 + z_grid[0] - step)
    return Surface(sdf, (float(step), dy, dx), origin, meta)


def sample_triangles(verts: np.ndarray, faces: np.ndarray, n_points: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted uniform sampling on a triangle mesh; returns points and face ids."""
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    a, b, c = (verts[faces[:, i]] for i in range(3))
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    total = area.sum()
    if not total > 0:
        raise ValueError("mesh has zero surface area")
    tri = rng.choice(len(faces), size=n_points, p=area / total)
    u, v = rng.random(n_points), rng.random(n_points)
    su = np.sqrt(u)
    w0, w1, w2 = 1 - su, su * (1 - v), su * v
    pts = w0[:, None] * a[tri] + w1[:, None] * b[tri] + w2[:, None] * c[tri]
    return pts, tri


def surface_mesh(surface: Surface) -> tuple[np.ndarray, np.ndarray]:
    """Marching-cubes mesh of the zero level set in world ``(x, y, z)``."""
    sdf = surface.sdf
    if not (sdf.min() < 0 < sdf.max()):
        raise ValueError("distance field has no zero crossing")
    verts, faces, _, _ = measure.marching_cubes(sdf, level=0.0, spacing=surface.spacing)
    return verts[:, ::-1] + np.asarray(surface.origin), faces


def sample_surface(surface: Surface, n_points: int = DEFAULT_POINTS, seed: int = 0) -> np.ndarray:
    """``n_points`` area-uniform points on the surface, shape ``(n_points, 3)``."""
    verts, faces = surface_mesh(surface)
    pts, _ = sample_triangles(verts, faces, n_points, np.random.default_rng(seed))
    return pts


def normalize_cloud(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Centre to zero mean and scale to unit max radius; returns ``(cloud, centre, scale)``."""
    pts = np.asarray(points, dtype=float)
    center = pts.mean(0)
    scale = float(np.linalg.norm(pts - center, axis=1).max())
    if scale == 0:
        raise ValueError("cloud has zero extent")
    return (pts - center) / scale, center, scale


def denormalize_cloud(points: np.ndarray, center: np.ndarray, scale: float) -> np.ndarray:
    return np.asarray(points) * scale + center


def ingest_mask(mask: MaskVolume, n_points: int = DEFAULT_POINTS, target_dz: float | None = None,
                seed: int = 0) -> tuple[np.ndarray, dict]:
    """Full pipeline; returns the world-coordinate cloud and surface metadata."""
    if target_dz is None:
        target_dz = min(mask.spacing[1:])
    surface = interpolate_z(mask, target_dz)
    return sample_surface(surface, n_points, seed), surface.meta


def load_mask(mask_path: str | os.PathLike, meta_path: str | os.PathLike) -> MaskVolume:
    """Read a ``.npy`` mask plus a JSON sidecar with ``spacing`` and ``origin``."""
    voxels = np.load(mask_path)
    with open(meta_path) as fh:
        meta = json.load(fh)
    if "spacing" not in meta:
        raise ValueError(f"{meta_path}: sidecar needs a 'spacing' entry")
    return MaskVolume(voxels, meta["spacing"], meta.get("origin", (0.0, 0.0, 0.0)))


# PLY I/O ------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class PLYError(ValueError):
    pass


def write_cloud(points: np.ndarray, path: str | os.PathLike, binary: bool = True) -> None:
    pts = np.asarray(points, dtype=np.float32)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (n, 3) points, got {pts.shape}")
    if len(pts) == 0:
        raise ValueError("clouds must be non-empty")
    if not np.isfinite(pts).all():
        raise ValueError("cloud contains non-finite coordinates")
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(pts.astype("<f4").tobytes())
        else:
            for p in pts:
                fh.write((" ".join(repr(float(v)) for v in p) + "\n").encode("ascii"))
    os.replace(tmp, path)


def _read_header(fh):
    first = fh.readline().strip()
    if first != b"ply":
        raise PLYError("not a PLY file (missing 'ply' magic)")
    fmt, elements = None, []
    while True:
        line = fh.readline()
        if not line:
            raise PLYError("header ended without 'end_header'")
        words = line.decode("ascii", errors="replace").split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        if words[0] == "end_header":
            break
        if words[0] == "format":
            if len(words) != 3 or words[1] not in ("ascii", "binary_little_endian"):
                raise PLYError(f"unsupported format line: {' '.join(words)}")
            fmt = words[1]
        elif words[0] == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise PLYError(f"malformed element line: {' '.join(words)}")
            elements.append((words[1], int(words[2]), []))
        elif words[0] == "property":
            if not elements:
                raise PLYError("property before any element")
            if words[1] == "list" or len(words) != 3 or words[1] not in _PLY_TYPES:
                raise PLYError(f"unsupported property line: {' '.join(words)}")
            elements[-1][2].append((words[2], _PLY_TYPES[words[1]]))
        else:
            raise PLYError(f"unknown header keyword {words[0]!r}")
    if fmt is None:
        raise PLYError("header has no format line")
    return fmt, elements


def read_cloud(path: str | os.PathLike) -> np.ndarray:
    """Read the ``vertex`` element (first in file) as an ``(n, 3)`` float32 array."""
    with open(path, "rb") as fh:
        fmt, elements = _read_header(fh)
        if not elements or elements[0][0] != "vertex":
            raise PLYError("first element must be 'vertex'")
        _, count, props = elements[0]
        names = [p[0] for p in props]
        for axis in "xyz":
            if axis not in names:
                raise PLYError(f"vertex element is missing property {axis!r}")
        if count == 0:
            raise PLYError("clouds must be non-empty (0 vertices)")
        dtype = np.dtype([(n, "<" + t) for n, t in props])
        if fmt == "ascii":
            rows = []
            for _ in range(count):
                line = fh.readline()
                if not line:
                    raise PLYError("file ended before all vertices were read")
                vals = line.split()
                if len(vals) != len(props):
                    raise PLYError(f"vertex row has {len(vals)} values, expected {len(props)}")
                rows.append(tuple(float(v) for v in vals))
            data = np.array(rows, dtype=dtype)
        else:
            raw = fh.read(dtype.itemsize * count)
            if len(raw) != dtype.itemsize * count:
                raise PLYError("file ended before all vertices were read")
            data = np.frombuffer(raw, dtype=dtype)
    pts = np.column_stack([data[a] for a in "xyz"]).astype(np.float32)
    if not np.isfinite(pts).all():
        raise PLYError("cloud contains non-finite coordinates")
    return pts
