"""Morton-coded sparse octree geometry over the cube [-1, 1]^3.

This module is the geometric backbone of the codec. Cells at level-of-detail
``lod`` form a ``2**lod`` per-axis grid; a cell is addressed by the Morton
(Z-order) interleaving of its integer grid coordinates, which makes child
addressing arithmetic (children of code ``c`` are ``8c .. 8c+7``) and removes
any need for pointer structures. All heavy operations are vectorized over
numpy arrays of codes; the scalar :class:`MortonKey` API is a thin veneer.

Serialized form: one byte per occupied parent cell, bit ``i`` holding the
occupancy of Morton child ``i``, levels stored root-down (see
:meth:`SparseOctree.to_bytes`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

MAX_LOD = 20  # 3 * 21 = 63 usable bits in a uint64 Morton code

__all__ = [
    "MAX_LOD",
    "MortonKey",
    "CellFrame",
    "SparseOctree",
    "morton_encode",
    "morton_decode",
    "encode_grid",
    "decode_grid",
    "cell_frame",
    "cell_centers",
    "dilate",
    "trilinear_weights",
    "trilinear_sites",
]


class MortonKey(NamedTuple):
    """Address of one octree cell: Morton code plus its level of detail."""

    code: int
    lod: int


@dataclass(frozen=True)
class CellFrame:
    """World-space frame of a cell: center and half side length."""

    center: np.ndarray  # (3,) float64
    half_extent: float


# -- bit interleaving ---------------------------------------------------------
#
# Standard magic-mask spreading for up to 21 bits per axis. Axis x occupies
# code bits 0, 3, 6, ...; y bits 1, 4, 7, ...; z bits 2, 5, 8, ...


def _spread(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def _compact(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & np.uint64(0x1249249249249249)
    v = (v | (v >> np.uint64(2))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v >> np.uint64(4))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v >> np.uint64(8))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v >> np.uint64(16))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v >> np.uint64(32))) & np.uint64(0x1FFFFF)
    return v


def encode_grid(ix: np.ndarray, iy: np.ndarray, iz: np.ndarray) -> np.ndarray:
    """Interleave integer grid coordinate arrays into Morton codes (uint64)."""
    return (
        _spread(np.asarray(ix))
        | (_spread(np.asarray(iy)) << np.uint64(1))
        | (_spread(np.asarray(iz)) << np.uint64(2))
    )


def decode_grid(codes: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`encode_grid`: codes -> (ix, iy, iz) arrays."""
    codes = np.asarray(codes, dtype=np.uint64)
    return (
        _compact(codes).astype(np.int64),
        _compact(codes >> np.uint64(1)).astype(np.int64),
        _compact(codes >> np.uint64(2)).astype(np.int64),
    )


def morton_encode(ix: int, iy: int, iz: int, lod: int) -> MortonKey:
    """Encode grid indices at a given lod into a :class:`MortonKey`.

    Raises ``ValueError`` if the lod exceeds :data:`MAX_LOD` or any index
    falls outside ``[0, 2**lod)``.
    """
    if not 0 <= lod <= MAX_LOD:
        raise ValueError(f"lod {lod} outside [0, {MAX_LOD}]")
    n = 1 << lod
    for name, v in (("ix", ix), ("iy", iy), ("iz", iz)):
        if not 0 <= v < n:
            raise ValueError(f"{name}={v} outside [0, {n}) at lod {lod}")
    code = int(encode_grid(np.uint64(ix), np.uint64(iy), np.uint64(iz)))
    return MortonKey(code, lod)


def morton_decode(key: MortonKey) -> tuple[int, int, int]:
    """Recover (ix, iy, iz) from a key; exact inverse of :func:`morton_encode`."""
    _check_key(key)
    ix, iy, iz = decode_grid(np.uint64(key.code))
    return int(ix), int(iy), int(iz)


def _check_key(key: MortonKey) -> None:
    if not 0 <= key.lod <= MAX_LOD:
        raise ValueError(f"lod {key.lod} outside [0, {MAX_LOD}]")
    if not 0 <= key.code < 8**key.lod:
        raise ValueError(f"code {key.code} outside [0, 8^{key.lod})")


def cell_frame(key: MortonKey) -> CellFrame:
    """World-space center and half extent of the cell addressed by ``key``."""
    _check_key(key)
    ix, iy, iz = morton_decode(key)
    scale = 1 << key.lod
    center = -1.0 + (2.0 * np.array([ix, iy, iz], dtype=np.float64) + 1.0) / scale
    return CellFrame(center=center, half_extent=1.0 / scale)


def cell_centers(codes: np.ndarray, lod: int) -> np.ndarray:
    """Centers of many cells at one lod; returns (N, 3) float64."""
    ix, iy, iz = decode_grid(codes)
    idx = np.stack([ix, iy, iz], axis=-1).astype(np.float64)
    return -1.0 + (2.0 * idx + 1.0) / (1 << lod)


def _as_sorted_unique(codes) -> np.ndarray:
    arr = np.asarray(codes, dtype=np.uint64).ravel()
    return np.unique(arr)


class SparseOctree:
    """Per-lod sets of occupied Morton cells over [-1, 1]^3.

    Invariant: every occupied cell at lod ``m+1`` has an occupied parent at
    lod ``m`` (hierarchy consistency). Levels are stored as sorted unique
    uint64 code arrays, so iteration order is Morton order by construction.
    """

    def __init__(self, max_lod: int, levels: Sequence[np.ndarray] | None = None,
                 validate: bool = True):
        if not 0 <= max_lod <= MAX_LOD:
            raise ValueError(f"max_lod {max_lod} outside [0, {MAX_LOD}]")
        self.max_lod = max_lod
        if levels is None:
            levels = [np.empty(0, dtype=np.uint64) for _ in range(max_lod + 1)]
        if len(levels) != max_lod + 1:
            raise ValueError("need one level set per lod 0..max_lod")
        self.levels = [_as_sorted_unique(lv) for lv in levels]
        if validate:
            self._validate()

    def _validate(self) -> None:
        for m, lv in enumerate(self.levels):
            if lv.size and int(lv[-1]) >= 8**m:
                raise ValueError(f"code out of range at lod {m}")
            if m == 0:
                continue
            parents = np.unique(lv >> np.uint64(3))
            if not np.isin(parents, self.levels[m - 1]).all():
                raise ValueError(f"hierarchy violated: orphan cells at lod {m}")

    def occupied(self, lod: int) -> np.ndarray:
        """Sorted occupied codes at one lod."""
        return self.levels[lod]

    def count(self, lod: int) -> int:
        return int(self.levels[lod].size)

    def total_cells(self) -> int:
        return sum(lv.size for lv in self.levels)

    def contains(self, lod: int, codes: np.ndarray) -> np.ndarray:
        """Boolean membership of ``codes`` in the occupied set at ``lod``."""
        return np.isin(np.asarray(codes, dtype=np.uint64), self.levels[lod])

    def is_empty(self) -> bool:
        return self.levels[0].size == 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseOctree):
            return NotImplemented
        return self.max_lod == other.max_lod and all(
            np.array_equal(a, b) for a, b in zip(self.levels, other.levels)
        )

    @classmethod
    def from_leaves(cls, leaf_codes: np.ndarray, max_lod: int) -> "SparseOctree":
        """Build a hierarchy-consistent tree from occupied max-lod cells."""
        levels = [np.empty(0, dtype=np.uint64)] * (max_lod + 1)
        levels[max_lod] = _as_sorted_unique(leaf_codes)
        if levels[max_lod].size and int(levels[max_lod][-1]) >= 8**max_lod:
            raise ValueError(f"leaf code out of range for lod {max_lod}")
        for m in range(max_lod, 0, -1):
            levels[m - 1] = np.unique(levels[m] >> np.uint64(3))
        return cls(max_lod, levels, validate=False)

    # -- byte serialization ---------------------------------------------------
    #
    # Layout: u8 max_lod, u8 root_occupied, then for each lod 1..max_lod a
    # u32 byte count followed by that many child-mask bytes, one per occupied
    # parent cell in Morton order (bit i = Morton child i occupied).

    def to_bytes(self) -> bytes:
        out = [struct.pack("<BB", self.max_lod, 1 if self.levels[0].size else 0)]
        for m in range(1, self.max_lod + 1):
            parents = self.levels[m - 1]
            masks = np.zeros(parents.size, dtype=np.uint8)
            child = self.levels[m]
            if child.size:
                pidx = np.searchsorted(parents, child >> np.uint64(3))
                bits = (child & np.uint64(7)).astype(np.uint8)
                np.bitwise_or.at(masks, pidx, np.uint8(1) << bits)
            out.append(struct.pack("<I", masks.size))
            out.append(masks.tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes, offset: int = 0) -> tuple["SparseOctree", int]:
        """Parse a serialized tree; returns (tree, bytes consumed)."""
        max_lod, root = struct.unpack_from("<BB", blob, offset)
        pos = offset + 2
        levels = [np.array([0], dtype=np.uint64) if root else np.empty(0, np.uint64)]
        for m in range(1, max_lod + 1):
            (nbytes,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            if nbytes != levels[m - 1].size:
                raise ValueError(
                    f"octree bytes inconsistent at lod {m}: "
                    f"{nbytes} masks for {levels[m - 1].size} parents"
                )
            masks = np.frombuffer(blob, dtype=np.uint8, count=nbytes, offset=pos)
            pos += nbytes
            parents = levels[m - 1]
            base = (parents << np.uint64(3))[:, None] + np.arange(8, dtype=np.uint64)
            keep = (masks[:, None] & (np.uint8(1) << np.arange(8, dtype=np.uint8))) != 0
            levels.append(base[keep])
        return cls(max_lod, levels, validate=False), pos - offset


def dilate_codes(codes: np.ndarray, lod: int) -> np.ndarray:
    """Union of the 3x3x3 neighborhoods of cells, clamped to the grid."""
    codes = np.asarray(codes, dtype=np.uint64)
    if codes.size == 0 or lod == 0:
        return codes.copy()
    n = 1 << lod
    ix, iy, iz = decode_grid(codes)
    off = np.array(
        [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)],
        dtype=np.int64,
    )
    nx = ix[:, None] + off[:, 0]
    ny = iy[:, None] + off[:, 1]
    nz = iz[:, None] + off[:, 2]
    ok = (nx >= 0) & (nx < n) & (ny >= 0) & (ny < n) & (nz >= 0) & (nz < n)
    return np.unique(encode_grid(nx[ok], ny[ok], nz[ok]))


def dilate(tree: SparseOctree, lod: int) -> SparseOctree:
    """27-neighborhood dilation of one level, clamped to the grid bounds.

    Returns a new tree whose level ``lod`` is the union of the 3x3x3
    neighborhoods of its occupied cells; parents of newly occupied cells are
    set bottom-up so hierarchy consistency holds.
    """
    if not 0 <= lod <= tree.max_lod:
        raise ValueError(f"lod {lod} outside tree range 0..{tree.max_lod}")
    levels = [lv.copy() for lv in tree.levels]
    if levels[lod].size and lod > 0:
        levels[lod] = np.unique(
            np.concatenate([levels[lod], dilate_codes(levels[lod], lod)])
        )
        for m in range(lod, 0, -1):
            parents = np.unique(levels[m] >> np.uint64(3))
            levels[m - 1] = np.unique(np.concatenate([levels[m - 1], parents]))
    return SparseOctree(tree.max_lod, levels, validate=False)


def trilinear_sites(x: np.ndarray, lod: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized trilinear lattice lookup at cell centers of one lod.

    For each query point returns the 8 surrounding lattice sites and weights:

    - ``idx``: (N, 8, 3) int64 grid indices (may fall outside the grid),
    - ``weights``: (N, 8) float64, nonnegative, summing to 1 per point,
    - ``in_grid``: (N, 8) bool, False where the site has no cell,
    - ``frac``: (N, 3) float64 per-axis offsets in [0, 1) used for weights.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = 1 << lod
    h = 2.0 / n  # cell side
    u = (x + 1.0) / h - 0.5  # lattice coordinate: integer at cell centers
    base = np.floor(u).astype(np.int64)
    frac = u - base
    corner = np.array(
        [(k & 1, (k >> 1) & 1, (k >> 2) & 1) for k in range(8)], dtype=np.int64
    )
    idx = base[:, None, :] + corner[None, :, :]
    w_axis = np.where(corner[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
    weights = w_axis.prod(axis=2)
    in_grid = ((idx >= 0) & (idx < n)).all(axis=2)
    return idx, weights, in_grid, frac


def trilinear_weights(x, lod: int) -> list[tuple[MortonKey | None, float]]:
    """The 8 (cell key, weight) pairs surrounding one point at one lod.

    Sites falling outside the grid are reported as ``None`` keys; their
    weights are retained (weights always sum to 1).
    """
    x = np.asarray(x, dtype=np.float64).reshape(1, 3)
    if (np.abs(x) > 1.0).any():
        raise ValueError("query point outside [-1, 1]^3")
    idx, weights, in_grid, _ = trilinear_sites(x, lod)
    pairs: list[tuple[MortonKey | None, float]] = []
    for k in range(8):
        if in_grid[0, k]:
            key = MortonKey(
                int(encode_grid(*(np.uint64(v) for v in idx[0, k]))), lod
            )
        else:
            key = None
        pairs.append((key, float(weights[0, k])))
    return pairs
