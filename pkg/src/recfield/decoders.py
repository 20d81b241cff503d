"""Field-specific decoding of fused latents: SDF, SDF+RGB, radiance.

Sign convention for distances: positive outside, negative inside. Radiance
density is the softplus of the raw geometry head (nonnegative); colors are
sigmoid-bounded to [0, 1]^3 by the color head itself.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DegenerateNormalError
from .expansion import LatentOctree
from .fusion import fused_query_tree
from .nets import FieldKind, ModelBundle

__all__ = ["FieldValue", "decode", "decode_batch", "sdf_and_normals", "sdf_normal"]

DEGENERATE_GRAD_NORM = 1e-8


@dataclass
class FieldValue:
    """Decoded field at one point; populated fields depend on the kind."""

    sdf: float | None = None
    color: np.ndarray | None = None
    density: float | None = None
    out_of_field: bool = False


@contextlib.contextmanager
def _frozen(bundle: ModelBundle):
    """Temporarily drop requires_grad on net weights (query-side grads only)."""
    params = bundle.net_parameters()
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def decode_batch(
    tree: LatentOctree,
    x: np.ndarray,
    bundle: ModelBundle,
    view_dirs: np.ndarray | None = None,
) -> dict:
    """Decode many points at once; returns arrays keyed by field name.

    Always contains ``out_of_field``; ``sdf`` for distance kinds, ``density``
    for radiance, ``color`` for both colored kinds. Out-of-field points are
    decoded anyway (callers decide whether to trust them).
    """
    kind = bundle.config.kind
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if kind is FieldKind.NERF and view_dirs is None:
        raise ValueError("radiance decoding needs view directions")
    if kind is not FieldKind.NERF and view_dirs is not None:
        raise ValueError("view directions are only valid for radiance fields")

    with ad.no_grad():
        fused, oof = fused_query_tree(tree, x, bundle.config.fusion)
        geo = bundle.geometry(fused)
        out = {"out_of_field": oof}
        if kind is FieldKind.NERF:
            out["density"] = ad.softplus(geo).data[:, 0]
            out["color"] = bundle.color(fused, np.asarray(view_dirs, np.float32)).data
        else:
            out["sdf"] = geo.data[:, 0]
            if kind is FieldKind.SDF_RGB:
                out["color"] = bundle.color(fused).data
    return out


def decode(tree: LatentOctree, x, bundle: ModelBundle,
           view_dir: np.ndarray | None = None) -> FieldValue:
    """Decode a single point into a :class:`FieldValue`."""
    dirs = None if view_dir is None else np.asarray(view_dir, np.float32).reshape(1, 3)
    batch = decode_batch(tree, np.asarray(x).reshape(1, 3), bundle, dirs)
    return FieldValue(
        sdf=float(batch["sdf"][0]) if "sdf" in batch else None,
        color=batch["color"][0] if "color" in batch else None,
        density=float(batch["density"][0]) if "density" in batch else None,
        out_of_field=bool(batch["out_of_field"][0]),
    )


def sdf_and_normals(
    tree: LatentOctree, x: np.ndarray, bundle: ModelBundle,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Signed distances plus unit normals from the coordinate gradient.

    Normals come from reverse-mode differentiation of the decoded distance
    with respect to the query coordinates. Returns (sdf, normals, degenerate);
    rows flagged degenerate (gradient below 1e-8) carry zero normals.
    """
    if bundle.config.kind is FieldKind.NERF:
        raise ValueError("normals are defined for distance fields only")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    with _frozen(bundle):
        xt = Tensor(x, requires_grad=True)
        fused, _ = fused_query_tree(tree, x, bundle.config.fusion, x_tensor=xt)
        s = bundle.geometry(fused)
        # each output row depends on its own input row, so one backward of the
        # sum yields all per-point gradients
        ad.sum_reduce(s).backward()
        grad = xt.grad.astype(np.float64)
    norms = np.linalg.norm(grad, axis=1)
    degenerate = norms < DEGENERATE_GRAD_NORM
    safe = np.where(degenerate, 1.0, norms)
    normals = grad / safe[:, None]
    normals[degenerate] = 0.0
    return s.data[:, 0], normals, degenerate


def sdf_normal(tree: LatentOctree, x, bundle: ModelBundle) -> np.ndarray:
    """Unit normal at one point; raises if the gradient is degenerate."""
    _, normals, degenerate = sdf_and_normals(tree, np.asarray(x).reshape(1, 3), bundle)
    if degenerate[0]:
        raise DegenerateNormalError(f"gradient below {DEGENERATE_GRAD_NORM} at {x}")
    return normals[0]
