"""Supervision data generation and the on-disk dataset container.

Ground-truth octrees are built top-down from the analytic SDF with the
conservative surface test |sdf(center)| <= sqrt(3) * half_extent (any cell
containing surface passes), then every level is dilated by one cell to leave
an interpolation margin; parents of dilated cells are closed bottom-up.

Supervision points are rejection-sampled from occupied finest-lod cell
interiors, half within a wide band (one cell size, 1/2^(M-1)) and half within
a tight band (a quarter cell size, 1/2^(M+1)) of the surface, with exact fp64
targets evaluated per field kind.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .nets import FieldKind
from .octree import SparseOctree, cell_centers, dilate_codes
from .shapes import NerfToyField, Shape, constant_color

__all__ = [
    "FieldSampleSet", "ObjectSpec", "build_gt_octree", "sample_bands",
    "generate_dataset", "save_dataset", "load_dataset",
]

_SQRT3 = float(np.sqrt(3.0))
_MAGIC = b"RFND"
_VERSION = 1
_KIND_CODE = {FieldKind.SDF: 0, FieldKind.SDF_RGB: 1, FieldKind.NERF: 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


@dataclass
class FieldSampleSet:
    """Per-object supervision: coordinates, targets, ground-truth octree."""

    object_id: str
    kind: FieldKind
    coords: np.ndarray  # (N, 3) float32
    octree: SparseOctree
    sdf: np.ndarray | None = None  # (N,)
    color: np.ndarray | None = None  # (N, 3)
    density: np.ndarray | None = None  # (N,)
    view_dirs: np.ndarray | None = None  # (N, 3), radiance only

    def __post_init__(self):
        self.kind = FieldKind(self.kind)
        n = self.coords.shape[0]
        for name in ("sdf", "color", "density", "view_dirs"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[0] != n:
                raise ValueError(f"{name} length {arr.shape[0]} != coords {n}")

    @property
    def n(self) -> int:
        return int(self.coords.shape[0])

    @property
    def max_lod(self) -> int:
        return self.octree.max_lod


@dataclass
class ObjectSpec:
    """One object to encode: analytic shape plus optional appearance."""

    object_id: str
    shape: Shape
    color_fn: object | None = None
    toy: NerfToyField | None = None


def build_gt_octree(shape: Shape, max_lod: int, dilation: bool = True) -> SparseOctree:
    """Conservative surface-crossing octree of an analytic shape.

    Refinement descends only through cells passing the surface test; the
    optional dilation is applied to every level afterwards.
    """
    if max_lod < 1:
        raise ValueError("max_lod must be >= 1")
    root_hit = abs(float(shape(np.zeros((1, 3)))[0])) <= _SQRT3
    levels = [np.array([0], np.uint64) if root_hit else np.empty(0, np.uint64)]
    for m in range(1, max_lod + 1):
        parents = levels[m - 1]
        children = ((parents << np.uint64(3))[:, None]
                    + np.arange(8, dtype=np.uint64)).ravel()
        if children.size:
            dist = np.abs(shape.sdf(cell_centers(children, m)))
            children = children[dist <= _SQRT3 / (1 << m)]
        levels.append(children)
    if dilation:
        levels = [levels[0]] + [dilate_codes(lv, m) for m, lv in enumerate(levels[1:], 1)]
        for m in range(max_lod, 0, -1):
            parents = np.unique(levels[m] >> np.uint64(3))
            levels[m - 1] = np.unique(np.concatenate([levels[m - 1], parents]))
    return SparseOctree(max_lod, levels, validate=False)


def _sample_in_band(shape, octree, band: float, n: int, rng,
                    batch: int = 8192, max_rounds: int = 2000):
    """Uniform points from occupied leaf-cell interiors with |sdf| <= band."""
    max_lod = octree.max_lod
    leaves = octree.occupied(max_lod)
    if leaves.size == 0:
        raise ValueError("empty octree: nothing to sample")
    half = 1.0 / (1 << max_lod)
    centers = cell_centers(leaves, max_lod)
    pts, vals, drawn = [], [], 0
    for round_no in range(max_rounds):
        pick = rng.integers(0, leaves.size, size=batch)
        x = centers[pick] + rng.uniform(-half, half, size=(batch, 3))
        s = shape.sdf(x)
        keep = np.abs(s) <= band
        pts.append(x[keep])
        vals.append(s[keep])
        drawn += int(keep.sum())
        if drawn >= n:
            break
    else:
        rate = drawn / (max_rounds * batch)
        raise RuntimeError(
            f"band sampling stalled: {drawn}/{n} accepted after "
            f"{max_rounds} rounds (acceptance rate {rate:.2e}, band {band:.4g})"
        )
    x = np.concatenate(pts)[:n]
    s = np.concatenate(vals)[:n]
    return x, s


def _unit_vectors(n: int, rng) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_bands(
    shape: Shape,
    max_lod: int,
    n: int,
    kind: FieldKind | str,
    rng: np.random.Generator,
    object_id: str = "object",
    color_fn=None,
    toy: NerfToyField | None = None,
    octree: SparseOctree | None = None,
) -> FieldSampleSet:
    """Two-band supervision sampling with exact fp64 targets, stored fp32."""
    kind = FieldKind(kind)
    if octree is None:
        octree = build_gt_octree(shape, max_lod)
    wide = 1.0 / (1 << (max_lod - 1))
    tight = 1.0 / (1 << (max_lod + 1))
    n_wide = n // 2
    xw, sw = _sample_in_band(shape, octree, wide, n_wide, rng)
    xt, st = _sample_in_band(shape, octree, tight, n - n_wide, rng)
    coords = np.concatenate([xw, xt]).astype(np.float32)
    sdf = np.concatenate([sw, st])

    kwargs = {}
    if kind is FieldKind.NERF:
        if toy is None:
            toy = NerfToyField(shape, color_fn or constant_color([0.8, 0.8, 0.8]))
        dirs = _unit_vectors(n, rng)
        kwargs["density"] = toy.density(coords.astype(np.float64)).astype(np.float32)
        kwargs["color"] = toy.color(coords.astype(np.float64), dirs).astype(np.float32)
        kwargs["view_dirs"] = dirs.astype(np.float32)
    else:
        kwargs["sdf"] = sdf.astype(np.float32)
        if kind is FieldKind.SDF_RGB:
            if color_fn is None:
                raise ValueError("colored SDF sampling needs a color function")
            surf = shape.project(coords.astype(np.float64))
            kwargs["color"] = np.clip(color_fn(surf), 0.0, 1.0).astype(np.float32)
    return FieldSampleSet(object_id, kind, coords, octree, **kwargs)


def generate_dataset(
    specs: list[ObjectSpec], max_lod: int, n: int, kind: FieldKind | str, seed: int = 0,
) -> list[FieldSampleSet]:
    """Deterministic per-object sampling (each object gets a derived seed)."""
    kind = FieldKind(kind)
    out = []
    for k, spec in enumerate(specs):
        rng = np.random.default_rng([seed, k])
        out.append(
            sample_bands(spec.shape, max_lod, n, kind, rng,
                         object_id=spec.object_id, color_fn=spec.color_fn,
                         toy=spec.toy)
        )
    return out


# -- binary container ----------------------------------------------------------
#
# Layout (little endian):
#   magic "RFND", u32 version, u32 object count, then per object:
#     u16 id length, id bytes (utf-8), u8 kind, u32 max_lod, u32 N,
#     serialized octree (self-delimiting), N records of fp32:
#       sdf     -> x y z s
#       sdfrgb  -> x y z s r g b
#       nerf    -> x y z sigma r g b dx dy dz

_RECORD_WIDTH = {FieldKind.SDF: 4, FieldKind.SDF_RGB: 7, FieldKind.NERF: 10}


def _records(s: FieldSampleSet) -> np.ndarray:
    cols = [s.coords]
    if s.kind is FieldKind.NERF:
        cols += [s.density[:, None], s.color, s.view_dirs]
    else:
        cols.append(s.sdf[:, None])
        if s.kind is FieldKind.SDF_RGB:
            cols.append(s.color)
    return np.concatenate(cols, axis=1).astype("<f4")


def save_dataset(path, sets: list[FieldSampleSet]) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC + struct.pack("<II", _VERSION, len(sets)))
        for s in sets:
            ident = s.object_id.encode("utf-8")
            f.write(struct.pack("<H", len(ident)) + ident)
            f.write(struct.pack("<BII", _KIND_CODE[s.kind], s.max_lod, s.n))
            f.write(s.octree.to_bytes())
            f.write(_records(s).tobytes())


def load_dataset(path) -> list[FieldSampleSet]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MAGIC:
        raise DataError(f"{path}: not a dataset file (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise DataError(f"{path}: unsupported dataset version {version}")
    pos, sets = 12, []
    for _ in range(count):
        (id_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        object_id = blob[pos:pos + id_len].decode("utf-8")
        pos += id_len
        kind_code, max_lod, n = struct.unpack_from("<BII", blob, pos)
        pos += 9
        if kind_code not in _CODE_KIND:
            raise DataError(f"{path}: unknown field kind code {kind_code}")
        kind = _CODE_KIND[kind_code]
        octree, used = SparseOctree.from_bytes(blob, pos)
        pos += used
        if octree.max_lod != max_lod:
            raise DataError(f"{path}: octree lod mismatch for {object_id!r}")
        width = _RECORD_WIDTH[kind]
        rec = np.frombuffer(blob, dtype="<f4", count=n * width, offset=pos)
        rec = rec.reshape(n, width).copy()
        pos += n * width * 4
        coords = rec[:, :3]
        if kind is FieldKind.NERF:
            sets.append(FieldSampleSet(object_id, kind, coords, octree,
                                       density=rec[:, 3], color=rec[:, 4:7],
                                       view_dirs=rec[:, 7:10]))
        elif kind is FieldKind.SDF_RGB:
            sets.append(FieldSampleSet(object_id, kind, coords, octree,
                                       sdf=rec[:, 3], color=rec[:, 4:7]))
        else:
            sets.append(FieldSampleSet(object_id, kind, coords, octree,
                                       sdf=rec[:, 3]))
    return sets
