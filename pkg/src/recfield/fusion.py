"""Query-time multiscale latent assembly.

A field query at point x interpolates the 8 surrounding cell-center latents
at every lod from 1 to the maximum (the root level carries no spatial lattice
and is excluded), then fuses the per-lod latents either by elementwise sum
(fused width D) or by concatenation in lod order (fused width D * max_lod).

Lattice sites that are not occupied contribute a zero latent while their
trilinear weight is kept (no renormalization): the dilation margin built into
the ground-truth octrees makes such misses rare near content, and zero-fill
keeps the fused latent continuous across occupancy boundaries. A query whose
8 sites at the finest lod are all missing is flagged out-of-field; it still
decodes, and renderers are expected to skip it.

The interpolation is one fused tape primitive differentiable both in the
latent table (training) and in the query coordinates (surface normals).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .expansion import LatentOctree, LevelTable
from .octree import encode_grid, trilinear_sites

__all__ = ["interpolate_level", "interpolate_lod", "fuse", "fused_query"]


def _site_rows(level: LevelTable, x: np.ndarray, query_offsets: np.ndarray):
    """Map each query's 8 lattice sites to rows of the level table (-1 = miss)."""
    idx3, weights, in_grid, frac = trilinear_sites(x, level.lod)
    clipped = np.clip(idx3, 0, (1 << level.lod) - 1)
    site_codes = encode_grid(clipped[..., 0], clipped[..., 1], clipped[..., 2])
    rows = np.full(site_codes.shape, -1, dtype=np.int64)
    for k, codes in enumerate(level.codes):
        s = slice(query_offsets[k], query_offsets[k + 1])
        if codes.size == 0:
            continue
        pos = np.searchsorted(codes, site_codes[s])
        pos_c = np.minimum(pos, codes.size - 1)
        found = (codes[pos_c] == site_codes[s]) & in_grid[s]
        rows[s] = np.where(found, pos_c + int(level.offsets[k]), -1)
    return rows, weights.astype(np.float32), frac


def interpolate_level(
    level: LevelTable,
    x: np.ndarray,
    query_offsets: np.ndarray | None = None,
    x_tensor: Tensor | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Trilinear latent interpolation at one lod.

    ``x`` is (N, 3); queries are grouped per object by ``query_offsets``
    (defaults to a single object owning all queries). Returns the (N, D)
    interpolated latents and a boolean miss mask, True where all 8 sites were
    unoccupied. Pass the coordinates again as ``x_tensor`` to make the result
    differentiable with respect to the query positions.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if query_offsets is None:
        query_offsets = np.array([0, x.shape[0]], dtype=np.int64)
    if int(query_offsets[-1]) != x.shape[0]:
        raise ValueError("query offsets do not cover the query array")
    rows, weights, frac = _site_rows(level, x, query_offsets)
    all_missing = (rows < 0).all(axis=1)

    table = level.table
    safe = np.maximum(rows, 0)
    hit = (rows >= 0).astype(np.float32)
    w_eff = weights * hit

    if table.data.shape[0]:
        corners = table.data[safe]  # (N, 8, D); rows masked by w_eff
    else:
        corners = np.zeros((x.shape[0], 8, table.data.shape[1]), np.float32)
    out = np.einsum("nk,nkd->nd", w_eff, corners).astype(np.float32)

    parents: list[Tensor] = [table]
    track_x = x_tensor is not None and x_tensor.requires_grad
    if track_x:
        parents.append(x_tensor)
    inv_h = (1 << level.lod) / 2.0  # d(frac)/dx

    def bwd(g):
        g_table = np.zeros_like(table.data)
        contrib = (w_eff[:, :, None] * g[:, None, :]).astype(np.float32)
        valid = rows >= 0
        np.add.at(g_table, rows[valid], contrib[valid])
        grads = [g_table]
        if track_x:
            # dw_k/dx_a = +-inv_h * prod over other axes of the axis factors
            corner_bits = np.array(
                [(k & 1, (k >> 1) & 1, (k >> 2) & 1) for k in range(8)], np.float64
            )
            u = np.where(corner_bits[None, :, :] == 1.0,
                         frac[:, None, :], 1.0 - frac[:, None, :])  # (N, 8, 3)
            sign = np.where(corner_bits == 1.0, 1.0, -1.0)  # (8, 3)
            dot = np.einsum("nkd,nd->nk", corners * hit[:, :, None], g)  # (N, 8)
            g_x = np.empty((x.shape[0], 3), dtype=np.float32)
            for a in range(3):
                others = [b for b in range(3) if b != a]
                prod = u[:, :, others[0]] * u[:, :, others[1]]
                g_x[:, a] = inv_h * (dot * sign[None, :, a] * prod).sum(axis=1)
            grads.append(g_x)
        return grads

    return ad.record(out, parents, bwd), all_missing


def interpolate_lod(tree: LatentOctree, lod: int, x) -> tuple[Tensor, np.ndarray]:
    """Single-object interpolation at one lod of an expanded octree."""
    if not 1 <= lod <= tree.max_lod:
        raise ValueError(f"lod {lod} outside [1, {tree.max_lod}]")
    return interpolate_level(tree.levels[lod], x)


def fuse(per_lod: list[Tensor], scheme: str) -> Tensor:
    """Combine per-lod latents (lod 1..M order) into the fused latent."""
    if not per_lod:
        raise ValueError("nothing to fuse")
    widths = {t.data.shape[1] for t in per_lod}
    if len(widths) != 1:
        raise ValueError(f"latent widths differ across lods: {sorted(widths)}")
    if scheme == "concat":
        return ad.concat(per_lod, axis=1)
    if scheme == "sum":
        out = per_lod[0]
        for t in per_lod[1:]:
            out = ad.add(out, t)
        return out
    raise ValueError(f"unknown fusion scheme {scheme!r}")


def fused_query(
    levels: list[LevelTable],
    x: np.ndarray,
    scheme: str,
    query_offsets: np.ndarray | None = None,
    x_tensor: Tensor | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Interpolate lods 1..M and fuse; returns (fused latents, out-of-field).

    The out-of-field mask is taken at the finest lod, where the occupied set
    delimits the renderable region.
    """
    per_lod = []
    out_of_field = None
    for level in levels[1:]:
        z, missing = interpolate_level(level, x, query_offsets, x_tensor)
        per_lod.append(z)
        out_of_field = missing
    return fuse(per_lod, scheme), out_of_field


def fused_query_tree(tree: LatentOctree, x, scheme: str,
                     x_tensor: Tensor | None = None) -> tuple[Tensor, np.ndarray]:
    """Single-object convenience wrapper over :func:`fused_query`."""
    return fused_query(tree.levels, x, scheme, x_tensor=x_tensor)
