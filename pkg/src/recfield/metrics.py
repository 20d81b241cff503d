"""Reconstruction metrics and latent-space analysis.

Conventions (documented because they feed the CSV report):

- chamfer: symmetric mean of *squared* nearest-neighbor distances in world
  units, both directions averaged, fp64 accumulation; no scale factor.
- normal consistency: mean absolute cosine between each point's normal and
  its nearest neighbor's normal, both directions averaged, in [0, 1].
- psnr (3D or image): 10 log10(peak^2 / mse) with peak 1.0; exact matches
  report the +inf sentinel.

Nearest-neighbor queries use a KD-tree; the O(N^2) oracle lives in the test
suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "chamfer", "normal_consistency", "psnr3d", "image_psnr",
    "latent_interpolate", "latent_pca", "silhouette_iou",
    "MetricRow", "MetricReport",
]


def _check_points(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3 or a.shape[0] == 0:
        raise ValueError(f"{name} must be a nonempty (N, 3) array")
    return a


def chamfer(pred: np.ndarray, gt: np.ndarray) -> float:
    """Symmetric mean squared nearest-neighbor distance."""
    pred = _check_points(pred, "pred")
    gt = _check_points(gt, "gt")
    d_pg, _ = cKDTree(gt).query(pred)
    d_gp, _ = cKDTree(pred).query(gt)
    return float(((d_pg**2).mean() + (d_gp**2).mean()) / 2.0)


def normal_consistency(pred: np.ndarray, pred_normals: np.ndarray,
                       gt: np.ndarray, gt_normals: np.ndarray) -> float:
    """Mean |cos| between normals of nearest-neighbor pairs, both ways."""
    pred = _check_points(pred, "pred")
    gt = _check_points(gt, "gt")
    pn = np.asarray(pred_normals, dtype=np.float64)
    gn = np.asarray(gt_normals, dtype=np.float64)
    _, idx_pg = cKDTree(gt).query(pred)
    _, idx_gp = cKDTree(pred).query(gt)
    cos_pg = np.abs((pn * gn[idx_pg]).sum(axis=1))
    cos_gp = np.abs((gn * pn[idx_gp]).sum(axis=1))
    return float((cos_pg.mean() + cos_gp.mean()) / 2.0)


def _psnr(mse: float, peak: float = 1.0) -> float:
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def psnr3d(pred_colors: np.ndarray, gt_colors: np.ndarray) -> float:
    """PSNR over colors sampled at matched 3D points (peak 1.0)."""
    pred = np.asarray(pred_colors, dtype=np.float64)
    gt = np.asarray(gt_colors, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"color shape mismatch: {pred.shape} vs {gt.shape}")
    return _psnr(float(((pred - gt) ** 2).mean()))


def image_psnr(rendered: np.ndarray, reference: np.ndarray) -> float:
    """Per-pixel PSNR between two images of identical shape (peak 1.0)."""
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shape mismatch: {a.shape} vs {b.shape}")
    return _psnr(float(((a - b) ** 2).mean()))


def silhouette_iou(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    """Intersection over union of two boolean masks."""
    a = np.asarray(mask_a, dtype=bool)
    b = np.asarray(mask_b, dtype=bool)
    union = (a | b).sum()
    return float((a & b).sum() / union) if union else 1.0


def latent_interpolate(za: np.ndarray, zb: np.ndarray, steps: int) -> np.ndarray:
    """Linear interpolation (1-t) za + t zb at t = k/steps, k = 0..steps.

    ``steps`` counts segments, so the result has steps + 1 rows and always
    includes both endpoints (steps=1 gives the endpoints only).
    """
    za = np.asarray(za, dtype=np.float32).ravel()
    zb = np.asarray(zb, dtype=np.float32).ravel()
    if za.shape != zb.shape:
        raise ValueError("latent dims differ")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    t = np.linspace(0.0, 1.0, steps + 1, dtype=np.float32)[:, None]
    return (1.0 - t) * za[None] + t * zb[None]


def latent_pca(latents: np.ndarray) -> np.ndarray:
    """Top-2 principal component projection of the latent table (fp64).

    Deterministic sign: each axis is flipped so its largest-magnitude
    loading is positive. Rank-deficient inputs zero the second axis.
    """
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 3:
        raise ValueError("need at least 3 latents for a PCA projection")
    centered = z - z.mean(axis=0)
    cov = centered.T @ centered / (z.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    axes = eigvecs[:, :2].copy()
    for k in range(2):
        lead = np.argmax(np.abs(axes[:, k]))
        if axes[lead, k] < 0:
            axes[:, k] *= -1
    proj = centered @ axes
    tol = max(eigvals[0], 0.0) * 1e-12
    if eigvals[1] <= tol:
        proj[:, 1] = 0.0
    return proj


@dataclass
class MetricRow:
    object_id: str
    chamfer: float = float("nan")
    normal_consistency: float = float("nan")
    psnr3d: float = float("nan")
    image_psnr: float = float("nan")


@dataclass
class MetricReport:
    """Per-object rows plus the aggregate; mirrors the CSV layout."""

    rows: list[MetricRow] = field(default_factory=list)

    def aggregate(self) -> MetricRow:
        agg = MetricRow(object_id="aggregate")
        for name in ("chamfer", "normal_consistency", "psnr3d", "image_psnr"):
            vals = [getattr(r, name) for r in self.rows
                    if np.isfinite(getattr(r, name))]
            if vals:
                setattr(agg, name, float(np.mean(vals)))
        return agg
