"""Recursive top-down expansion of root latents into latent octrees.

Two modes share the same subdivision arithmetic:

- inference: children whose predicted occupancy is <= 0.5 are pruned along
  with their entire subtree; the result is a :class:`LatentOctree`.
- training: recursion is gated by the ground-truth octree instead (occupancy
  predictions never steer control flow), and the occupancy logits of *all*
  visited children, occupied or not, are returned for cross-entropy
  supervision.

The training path runs over a whole batch of objects at once: per level, all
objects' parent latents are stacked into one table so the subdivision and
occupancy networks each run a single matmul per level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nets import ModelBundle
from .octree import SparseOctree

__all__ = ["LevelTable", "LatentOctree", "BatchExpansion",
           "expand_inference", "expand_training", "expand_training_batch"]

_CHILD_OFFSETS = np.arange(8, dtype=np.uint64)


@dataclass
class LevelTable:
    """Latents of the stored cells at one lod, for a batch of objects.

    ``table`` stacks all objects' rows; object ``k`` owns rows
    ``offsets[k]:offsets[k+1]``, whose Morton codes are ``codes[k]`` (sorted,
    so row order within a block is Morton order).
    """

    lod: int
    table: Tensor
    codes: list[np.ndarray]
    offsets: np.ndarray

    @property
    def n_objects(self) -> int:
        return len(self.codes)


@dataclass
class LatentOctree:
    """The expanded representation of a single object: latents per lod."""

    max_lod: int
    latent_dim: int
    levels: list[LevelTable]
    degenerate: bool = False
    _leaf_set: set | None = field(default=None, repr=False)

    def codes(self, lod: int) -> np.ndarray:
        return self.levels[lod].codes[0]

    def latent_table(self, lod: int) -> Tensor:
        return self.levels[lod].table

    def count(self, lod: int) -> int:
        return int(self.codes(lod).size)

    def total_cells(self) -> int:
        return sum(self.count(m) for m in range(self.max_lod + 1))

    def leaf_codes(self) -> np.ndarray:
        """Occupied cells at the finest lod (the renderable voxel set)."""
        return self.codes(self.max_lod)

    def leaf_set(self) -> set:
        if self._leaf_set is None:
            self._leaf_set = set(int(c) for c in self.leaf_codes())
        return self._leaf_set


@dataclass
class BatchExpansion:
    """Training-mode expansion of a batch: level tables plus supervision."""

    levels: list[LevelTable]
    logits: Tensor  # (V, 1) occupancy logits of every visited child
    targets: np.ndarray  # (V,) float32 ground-truth occupancy bits

    def object_view(self, k: int) -> LatentOctree:
        """Single-object view sharing the batched level tensors."""
        levels = []
        for lv in self.levels:
            off = np.array([lv.offsets[k], lv.offsets[k + 1]], dtype=np.int64)
            levels.append(LevelTable(lv.lod, lv.table, [lv.codes[k]],
                                     off))
        return LatentOctree(len(self.levels) - 1,
                            self.levels[0].table.data.shape[1], levels)


def _child_codes(parent_codes: np.ndarray) -> np.ndarray:
    """Codes of all 8 children of each parent, parent-major, Morton order."""
    return ((np.asarray(parent_codes, np.uint64) << np.uint64(3))[:, None]
            + _CHILD_OFFSETS).ravel()


def expand_training_batch(
    roots: Tensor, gts: list[SparseOctree], bundle: ModelBundle,
) -> BatchExpansion:
    """GT-gated expansion of a batch of root latents, on the tape.

    Children of every ground-truth-occupied parent are visited and scored;
    only ground-truth-occupied children are kept and expanded further, so the
    stored cells per level are exactly the GT level sets.
    """
    max_lod = bundle.config.max_lod
    n_obj = roots.data.shape[0]
    if len(gts) != n_obj:
        raise ValueError("need one ground-truth octree per root latent")
    for gt in gts:
        if gt.max_lod < max_lod:
            raise ValueError(
                f"ground-truth octree lod {gt.max_lod} < model lod {max_lod}"
            )

    codes = [gt.occupied(0).copy() for gt in gts]  # [0] or empty per object
    # Root rows whose GT root is unoccupied are dropped from level 0.
    root_keep = np.concatenate(
        [np.full(c.size, k, dtype=np.int64) for k, c in enumerate(codes)]
    ) if n_obj else np.empty(0, np.int64)
    table = ad.gather_rows(roots, root_keep)
    offsets = np.concatenate([[0], np.cumsum([c.size for c in codes])]).astype(np.int64)

    levels = [LevelTable(0, table, codes, offsets)]
    all_logits: list[Tensor] = []
    all_targets: list[np.ndarray] = []

    for m in range(max_lod):
        parent = levels[m]
        children = bundle.expand_children(parent.table)  # (8P, D)
        logits = bundle.occupancy_logits(children)
        child_codes = [_child_codes(c) for c in parent.codes]
        occupied = [gt.contains(m + 1, cc) for gt, cc in zip(gts, child_codes)]
        target = (np.concatenate(occupied) if occupied
                  else np.empty(0, bool)).astype(np.float32)
        all_logits.append(logits)
        all_targets.append(target)

        keep = np.flatnonzero(target > 0.5)
        counts = [int(o.sum()) for o in occupied]
        next_offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        next_codes = [cc[o] for cc, o in zip(child_codes, occupied)]
        next_table = ad.gather_rows(children, keep)
        levels.append(LevelTable(m + 1, next_table, next_codes, next_offsets))

    logits = ad.concat(all_logits, axis=0) if all_logits else Tensor(np.zeros((0, 1)))
    targets = np.concatenate(all_targets) if all_targets else np.zeros(0, np.float32)
    return BatchExpansion(levels, logits, targets)


def expand_training(
    root: Tensor, gt: SparseOctree, bundle: ModelBundle,
) -> tuple[LatentOctree, Tensor, np.ndarray]:
    """Single-object training expansion: (octree view, logits, targets)."""
    batch = expand_training_batch(root, [gt], bundle)
    return batch.object_view(0), batch.logits, batch.targets


def expand_inference(
    root: np.ndarray, bundle: ModelBundle, max_lod: int | None = None,
) -> LatentOctree:
    """Expand a root latent, pruning children with predicted occupancy <= 0.5.

    If every child of some level is pruned the result is flagged
    ``degenerate`` (levels below the cut stay empty); this is a valid return,
    not an error.
    """
    max_lod = bundle.config.max_lod if max_lod is None else max_lod
    if max_lod < 1:
        raise ValueError("max_lod must be >= 1")
    d = bundle.config.latent_dim
    root = np.asarray(root, dtype=np.float32).reshape(1, d)

    degenerate = False
    with ad.no_grad():
        table = Tensor(root)
        codes = np.zeros(1, dtype=np.uint64)
        levels = [LevelTable(0, table, [codes], np.array([0, 1], np.int64))]
        for m in range(max_lod):
            if codes.size:
                children = bundle.expand_children(table)
                child_codes = _child_codes(codes)
                occ = bundle.occupancy(children)
                keep = occ > 0.5
                codes = child_codes[keep]
                table = Tensor(children.data[keep])
            if codes.size == 0:
                degenerate = True
                table = Tensor(np.zeros((0, d), np.float32))
                codes = np.empty(0, np.uint64)
            levels.append(
                LevelTable(m + 1, table, [codes],
                           np.array([0, codes.size], np.int64))
            )
    return LatentOctree(max_lod, d, levels, degenerate=degenerate)
