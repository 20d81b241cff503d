"""Reconstruction and rendering paths over expanded latent octrees.

Three outputs share one spatial restriction: queries happen only inside
occupied voxels at the finest lod, found per ray with a grid walk (DDA) and
measured exactly with the slab method.

- iso-surface projection: voxel centers (plus optional in-voxel samples) are
  projected along the distance gradient onto the zero set, giving an oriented,
  optionally colored point cloud.
- sphere tracing: march t <- t + s(x(t)) within occupied intervals, jumping
  across the gaps between them.
- volumetric compositing: emission-absorption model with prefix
  transmittance T_k = exp(-sum_{k'<k} sigma_k' delta_k'), weights
  w_k = T_k (1 - exp(-sigma_k delta_k)), and midpoint samples allocated per
  occupied interval (the sub-slice midpoints make the quadrature exact for
  fields constant within voxels).

The sphere and volume cores take plain field callbacks, so the same renderer
runs both decoded models and analytic reference fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoders import decode_batch, sdf_and_normals
from .expansion import LatentOctree
from .nets import FieldKind, ModelBundle
from .octree import SparseOctree, cell_centers, decode_grid, encode_grid

__all__ = [
    "Camera", "PointCloud", "camera_rays", "ray_voxel_intersections",
    "OccupancyGrid", "isosurface_extract", "sphere_trace_rays", "sphere_trace",
    "volume_render_rays", "volume_render", "render_image", "render_field_image",
    "model_sdf_fn", "model_field_fn", "toy_field_fn",
]


@dataclass
class Camera:
    """Pinhole camera: intrinsics, camera-to-world pose, image size.

    Conventions: +x right, +y down, +z forward (rays leave through +z);
    pixel (row v, column u) is sampled at its center (u + 0.5, v + 0.5).
    """

    intrinsics: np.ndarray  # (3, 3)
    pose: np.ndarray  # (4, 4) camera-to-world
    width: int
    height: int

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64)
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if self.intrinsics.shape != (3, 3) or self.pose.shape != (4, 4):
            raise ValueError("intrinsics must be 3x3 and pose 4x4")
        if abs(np.linalg.det(self.intrinsics)) < 1e-12:
            raise ValueError("intrinsics not invertible")
        r = self.pose[:3, :3]
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-4:
            raise ValueError("pose rotation block is not orthonormal")

    @classmethod
    def look_at(cls, eye, target, width: int = 64, height: int = 64,
                fov_deg: float = 50.0, up=(0.0, 1.0, 0.0)) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        pose = np.eye(4)
        pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, down, forward, eye
        f = (width / 2.0) / np.tan(np.deg2rad(fov_deg) / 2.0)
        k = np.array([[f, 0, width / 2.0], [0, f, height / 2.0], [0, 0, 1.0]])
        return cls(k, pose, width, height)


@dataclass
class PointCloud:
    """Oriented, colored point set (colors in [0, 1])."""

    points: np.ndarray
    normals: np.ndarray
    colors: np.ndarray

    @property
    def n(self) -> int:
        return int(self.points.shape[0])


def camera_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Unit rays through all pixel centers, row-major; (origins, directions)."""
    u, v = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    pix = np.stack([u.ravel() + 0.5, v.ravel() + 0.5, np.ones(u.size)], axis=1)
    d_cam = pix @ np.linalg.inv(camera.intrinsics).T
    d_world = d_cam @ camera.pose[:3, :3].T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.tile(camera.pose[:3, 3], (u.size, 1))
    return origins, d_world


class OccupancyGrid:
    """Dense boolean view of one octree level, for O(1) DDA lookups."""

    def __init__(self, codes: np.ndarray, lod: int):
        self.lod = lod
        self.n = 1 << lod
        self.grid = np.zeros((self.n, self.n, self.n), dtype=bool)
        if len(codes):
            ix, iy, iz = decode_grid(np.asarray(codes, np.uint64))
            self.grid[ix, iy, iz] = True

    @classmethod
    def from_tree(cls, tree) -> "OccupancyGrid":
        if isinstance(tree, SparseOctree):
            return cls(tree.occupied(tree.max_lod), tree.max_lod)
        if isinstance(tree, LatentOctree):
            return cls(tree.leaf_codes(), tree.max_lod)
        raise TypeError(f"cannot build an occupancy grid from {type(tree)}")


def _clip_to_bounds(origin, direction):
    """Positive parameter range where the ray is inside [-1, 1]^3, or None."""
    t0, t1 = 0.0, np.inf
    for a in range(3):
        if direction[a] == 0.0:
            if not -1.0 <= origin[a] <= 1.0:
                return None
            continue
        lo = (-1.0 - origin[a]) / direction[a]
        hi = (1.0 - origin[a]) / direction[a]
        if lo > hi:
            lo, hi = hi, lo
        t0, t1 = max(t0, lo), min(t1, hi)
    return (t0, t1) if t1 > t0 else None


def ray_voxel_intersections(grid: OccupancyGrid, origin, direction):
    """Ordered (enter, exit) intervals over occupied voxels along one ray.

    Voxels are discovered with a DDA grid walk and each hit is measured with
    an exact slab test; intervals are disjoint and sorted by entry parameter.
    Returns (intervals (K, 2) float64, codes (K,) uint64).
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    empty = (np.empty((0, 2)), np.empty(0, np.uint64))
    span = _clip_to_bounds(origin, direction)
    if span is None:
        return empty
    t_enter, t_exit = span
    n, h = grid.n, 2.0 / grid.n
    p = origin + (t_enter + 1e-12) * direction
    idx = np.clip(np.floor((p + 1.0) / h).astype(np.int64), 0, n - 1)

    step = np.sign(direction).astype(np.int64)
    with np.errstate(divide="ignore"):
        t_delta = np.where(direction != 0.0, h / np.abs(direction), np.inf)
        next_bound = -1.0 + (idx + (step > 0)) * h
        t_next = np.where(direction != 0.0,
                          (next_bound - origin) / direction, np.inf)

    hits_idx = []
    for _ in range(3 * n + 3):
        if grid.grid[idx[0], idx[1], idx[2]]:
            hits_idx.append(idx.copy())
        a = int(np.argmin(t_next))
        if t_next[a] >= t_exit:
            break
        idx[a] += step[a]
        if not 0 <= idx[a] < n:
            break
        t_next[a] += t_delta[a]

    if not hits_idx:
        return empty
    cells = np.array(hits_idx)
    lo = -1.0 + cells * h
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - origin) / direction
        tb = (lo + h - origin) / direction
    near = np.where(direction != 0.0, np.minimum(ta, tb), -np.inf)
    far = np.where(direction != 0.0, np.maximum(ta, tb), np.inf)
    enter = np.maximum(near.max(axis=1), 0.0)
    exit_ = far.min(axis=1)
    ok = exit_ > enter
    intervals = np.stack([enter[ok], exit_[ok]], axis=1)
    codes = encode_grid(cells[ok, 0], cells[ok, 1], cells[ok, 2])
    order = np.argsort(intervals[:, 0], kind="stable")
    return intervals[order], codes[order]


def _merge_runs(intervals: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Collapse abutting voxel intervals into maximal occupied runs."""
    if len(intervals) == 0:
        return intervals
    runs = [list(intervals[0])]
    for lo, hi in intervals[1:]:
        if lo <= runs[-1][1] + tol:
            runs[-1][1] = max(runs[-1][1], hi)
        else:
            runs.append([lo, hi])
    return np.array(runs)


# -- field callbacks ------------------------------------------------------------


def model_sdf_fn(tree: LatentOctree, bundle: ModelBundle):
    """Distance callback (N, 3) -> (N,) over a decoded model."""

    def fn(x):
        return decode_batch(tree, x, bundle)["sdf"].astype(np.float64)

    return fn


def model_field_fn(tree: LatentOctree, bundle: ModelBundle):
    """Radiance callback (x, dirs) -> (sigma, color) over a decoded model."""

    def fn(x, dirs):
        out = decode_batch(tree, x, bundle, view_dirs=dirs.astype(np.float32))
        return out["density"].astype(np.float64), out["color"].astype(np.float64)

    return fn


def toy_field_fn(toy):
    """Radiance callback over an analytic toy field (the render oracle)."""

    def fn(x, dirs):
        return toy.density(x), toy.color(x, dirs)

    return fn


# -- iso-surface extraction ------------------------------------------------------


def isosurface_extract(
    tree: LatentOctree,
    bundle: ModelBundle,
    samples_per_voxel: int = 0,
    iterations: int = 2,
    keep_tol: float | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[PointCloud, int]:
    """Project occupied finest-lod voxel centers onto the zero level set.

    Each seed moves ``iterations`` times along -s * normal; survivors with
    |s| < keep_tol (default: half the voxel half-extent) are returned with
    normals and colors. Returns (cloud, number of degenerate points skipped).
    """
    if bundle.config.kind is FieldKind.NERF:
        raise ValueError("iso-surface extraction needs a distance field")
    half = 1.0 / (1 << tree.max_lod)
    keep_tol = half / 2.0 if keep_tol is None else keep_tol
    seeds = cell_centers(tree.leaf_codes(), tree.max_lod)
    if samples_per_voxel > 0:
        rng = rng or np.random.default_rng(0)
        extra = seeds[:, None, :] + rng.uniform(
            -half, half, size=(seeds.shape[0], samples_per_voxel, 3)
        )
        seeds = np.concatenate([seeds, extra.reshape(-1, 3)])

    pts = seeds.copy()
    alive = np.ones(len(pts), dtype=bool)
    for _ in range(iterations):
        s, normals, degenerate = sdf_and_normals(tree, pts[alive], bundle)
        moved = pts[alive]
        ok = ~degenerate
        moved[ok] -= s[ok, None].astype(np.float64) * normals[ok]
        pts[alive] = moved
        idx = np.flatnonzero(alive)
        alive[idx[degenerate]] = False

    s, normals, degenerate = sdf_and_normals(tree, pts[alive], bundle)
    idx = np.flatnonzero(alive)
    alive[idx[degenerate]] = False
    n_degenerate = int((~alive).sum())

    final = pts[alive]
    s_final, normals, _ = sdf_and_normals(tree, final, bundle)
    keep = np.abs(s_final) < keep_tol
    final = final[keep]
    normals = normals[keep]
    inside = np.clip(final, -1.0, 1.0)
    if bundle.config.kind is FieldKind.SDF_RGB:
        colors = decode_batch(tree, inside, bundle)["color"].astype(np.float64)
    else:
        colors = np.full((len(final), 3), 0.7)
    return PointCloud(final, normals, colors), n_degenerate


# -- sphere tracing --------------------------------------------------------------


def sphere_trace_rays(
    sdf_fn,
    runs: list[np.ndarray],
    origins: np.ndarray,
    directions: np.ndarray,
    max_steps: int = 64,
    hit_eps: float = 1e-3,
    record_steps: bool = False,
):
    """Batched sphere tracing restricted to per-ray occupied runs.

    A ray whose current distance value falls below ``hit_eps`` stops at that
    point (a negative value at a run entry therefore hits immediately).
    Returns a dict with ``hit`` (R,), ``t`` (R,), ``points`` (R, 3) and, when
    requested, the list of evaluated parameters per ray.
    """
    n = len(origins)
    t = np.zeros(n)
    run_idx = np.zeros(n, dtype=np.int64)
    active = np.zeros(n, dtype=bool)
    hit = np.zeros(n, dtype=bool)
    steps: list[list[float]] = [[] for _ in range(n)] if record_steps else []

    for i, r in enumerate(runs):
        if len(r):
            t[i] = r[0, 0]
            active[i] = True

    for _ in range(max_steps):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        x = origins[idx] + t[idx, None] * directions[idx]
        s = np.asarray(sdf_fn(x), dtype=np.float64)
        if record_steps:
            for i, ti in zip(idx, t[idx]):
                steps[i].append(float(ti))
        landed = s < hit_eps
        hit[idx[landed]] = True
        active[idx[landed]] = False

        march = idx[~landed]
        t[march] += s[~landed]
        for i in march:
            r = runs[i]
            j = run_idx[i]
            while j < len(r) and t[i] > r[j, 1]:
                j += 1
                if j < len(r):
                    t[i] = max(t[i], r[j, 0])
            run_idx[i] = j
            if j >= len(r):
                active[i] = False

    out = {
        "hit": hit,
        "t": t,
        "points": origins + t[:, None] * directions,
    }
    if record_steps:
        out["steps"] = steps
    return out


def sphere_trace(tree: LatentOctree, bundle: ModelBundle, origin, direction,
                 max_steps: int = 64, hit_eps: float = 1e-3):
    """Trace a single ray against a decoded model; None on miss."""
    if bundle.config.kind is FieldKind.NERF:
        raise ValueError("sphere tracing needs a distance field")
    grid = OccupancyGrid.from_tree(tree)
    intervals, _ = ray_voxel_intersections(grid, origin, direction)
    res = sphere_trace_rays(
        model_sdf_fn(tree, bundle), [_merge_runs(intervals)],
        np.asarray(origin, np.float64)[None], np.asarray(direction, np.float64)[None],
        max_steps, hit_eps,
    )
    return res["points"][0] if res["hit"][0] else None


# -- volumetric rendering ---------------------------------------------------------


def _allocate_samples(intervals: np.ndarray, budget: int):
    """Midpoint sample positions and widths across intervals, by length."""
    lengths = intervals[:, 1] - intervals[:, 0]
    total = lengths.sum()
    if total <= 0 or budget <= 0:
        return np.empty(0), np.empty(0)
    share = lengths / total * budget
    counts = np.floor(share).astype(np.int64)
    rem = budget - counts.sum()
    if rem > 0:  # largest remainder
        order = np.argsort(-(share - counts), kind="stable")
        counts[order[:rem]] += 1
    ts, ds = [], []
    for (lo, hi), c in zip(intervals, counts):
        if c == 0:
            continue
        width = (hi - lo) / c
        ts.append(lo + (np.arange(c) + 0.5) * width)
        ds.append(np.full(c, width))
    return np.concatenate(ts), np.concatenate(ds)


def composite(sigma: np.ndarray, color: np.ndarray, delta: np.ndarray):
    """Emission-absorption compositing of one ray's ordered samples.

    Returns (rgb, opacity, transmittance T_k before each sample, weights).
    """
    tau = sigma * delta
    t_k = np.exp(-np.concatenate([[0.0], np.cumsum(tau[:-1])]))
    w = t_k * (1.0 - np.exp(-tau))
    rgb = (w[:, None] * color).sum(axis=0)
    return rgb, float(w.sum()), t_k, w


def volume_render_rays(field_fn, runs: list[np.ndarray], origins, directions,
                       budget: int = 128):
    """Composite many rays; samples for all rays share one field evaluation.

    Sample widths live in occupied-space measure (gaps between runs carry no
    density and are skipped). Background is black: a ray with no occupied run
    keeps rgb 0 and opacity 0.
    """
    n = len(origins)
    ts, ds, owners = [], [], []
    for i, r in enumerate(runs):
        t, d = _allocate_samples(r, budget) if len(r) else (np.empty(0), np.empty(0))
        ts.append(t)
        ds.append(d)
        owners.append(np.full(len(t), i))
    counts = np.array([len(t) for t in ts])
    rgb = np.zeros((n, 3))
    opacity = np.zeros(n)
    depth = np.zeros(n)
    if counts.sum() == 0:
        return {"rgb": rgb, "opacity": opacity, "depth": depth,
                "samples": ts, "deltas": ds}

    t_all = np.concatenate(ts)
    owner = np.concatenate(owners)
    x = origins[owner] + t_all[:, None] * directions[owner]
    sigma, color = field_fn(x, directions[owner])
    sigma = np.asarray(sigma, dtype=np.float64)
    color = np.asarray(color, dtype=np.float64)

    pos = 0
    for i in range(n):
        c = counts[i]
        if c == 0:
            continue
        seg = slice(pos, pos + c)
        pos += c
        rgb[i], opacity[i], _, w = composite(sigma[seg], color[seg], ds[i])
        if opacity[i] > 1e-12:
            depth[i] = float((w * ts[i]).sum() / opacity[i])
    return {"rgb": rgb, "opacity": opacity, "depth": depth,
            "samples": ts, "deltas": ds}


def volume_render(tree: LatentOctree, bundle: ModelBundle, origin, direction,
                  budget: int = 128):
    """Composite a single ray of a decoded radiance model."""
    if bundle.config.kind is not FieldKind.NERF:
        raise ValueError("volumetric rendering needs a radiance field")
    grid = OccupancyGrid.from_tree(tree)
    intervals, _ = ray_voxel_intersections(grid, origin, direction)
    out = volume_render_rays(
        model_field_fn(tree, bundle), [intervals],
        np.asarray(origin, np.float64)[None],
        np.asarray(direction, np.float64)[None], budget,
    )
    return out["rgb"][0], out["opacity"][0], out["depth"][0]


# -- full image paths --------------------------------------------------------------


def _per_ray_intervals(grid, origins, dirs, merge: bool):
    runs = []
    for o, d in zip(origins, dirs):
        intervals, _ = ray_voxel_intersections(grid, o, d)
        runs.append(_merge_runs(intervals) if merge else intervals)
    return runs


def render_image(tree: LatentOctree, bundle: ModelBundle, camera: Camera,
                 renderer: str, budget: int = 128, max_steps: int = 64,
                 hit_eps: float = 1e-3) -> tuple[np.ndarray, dict]:
    """Render a model to an (H, W, 3) float image in [0, 1] plus aux buffers.

    ``renderer`` is "sphere" (distance kinds; normal-shaded or decoded
    albedo) or "volume" (radiance kind). Background is black.
    """
    kind = bundle.config.kind
    if renderer == "volume" and kind is not FieldKind.NERF:
        raise ValueError("volume renderer needs a radiance-field model")
    if renderer == "sphere" and kind is FieldKind.NERF:
        raise ValueError("sphere renderer needs a distance-field model")
    if renderer not in ("sphere", "volume"):
        raise ValueError(f"unknown renderer {renderer!r}")

    origins, dirs = camera_rays(camera)
    grid = OccupancyGrid.from_tree(tree)
    shape = (camera.height, camera.width)

    if renderer == "volume":
        runs = _per_ray_intervals(grid, origins, dirs, merge=False)
        out = volume_render_rays(model_field_fn(tree, bundle), runs,
                                 origins, dirs, budget)
        img = out["rgb"].reshape(*shape, 3)
        aux = {"opacity": out["opacity"].reshape(shape),
               "depth": out["depth"].reshape(shape)}
        return np.clip(img, 0.0, 1.0).astype(np.float32), aux

    runs = _per_ray_intervals(grid, origins, dirs, merge=True)
    res = sphere_trace_rays(model_sdf_fn(tree, bundle), runs, origins, dirs,
                            max_steps, hit_eps)
    img = np.zeros((len(origins), 3))
    hit = res["hit"]
    if hit.any():
        pts = np.clip(res["points"][hit], -1.0, 1.0)
        if kind is FieldKind.SDF_RGB:
            img[hit] = decode_batch(tree, pts, bundle)["color"]
        else:
            _, normals, _ = sdf_and_normals(tree, pts, bundle)
            img[hit] = 0.5 + 0.5 * normals  # normal-map shading
    aux = {"hit": hit.reshape(shape), "depth": res["t"].reshape(shape)}
    return np.clip(img.reshape(*shape, 3), 0.0, 1.0).astype(np.float32), aux


def render_field_image(field_fn, octree: SparseOctree, camera: Camera,
                       budget: int = 256) -> tuple[np.ndarray, dict]:
    """Volume-render an arbitrary field callback inside a given octree.

    This is the reference path: rendering an analytic toy field through the
    same compositor the model uses.
    """
    origins, dirs = camera_rays(camera)
    grid = OccupancyGrid.from_tree(octree)
    runs = _per_ray_intervals(grid, origins, dirs, merge=False)
    out = volume_render_rays(field_fn, runs, origins, dirs, budget)
    shape = (camera.height, camera.width)
    img = np.clip(out["rgb"].reshape(*shape, 3), 0.0, 1.0).astype(np.float32)
    return img, {"opacity": out["opacity"].reshape(shape),
                 "depth": out["depth"].reshape(shape)}
