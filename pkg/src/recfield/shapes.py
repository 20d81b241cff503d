"""Analytic CSG shapes with exact (or conservatively bounded) fp64 SDFs.

These stand in for mesh datasets at desk scale: every primitive has a closed
form distance, so supervision targets and evaluation oracles are exact.
Primitive leaves (sphere, box, torus) are true distances; CSG combinations
are standard lower-bound distances (correct sign, magnitude never exceeding
the true distance), which is what the conservative octree test expects.

Colors are plain functions R^3 -> [0,1]^3 attached per object; radiance toy
fields derive density from the SDF (solid interior, soft shell) and shade a
base albedo with a fixed light, giving a deterministic volumetric target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Shape", "Sphere", "Box", "Torus", "Union", "Intersection", "SmoothUnion",
    "Transformed", "normalize_to_unit", "normalize_points", "surface_samples",
    "constant_color", "axis_gradient_color", "NerfToyField",
    "shape_from_dict", "color_from_dict",
]


class Shape:
    """Base CSG node: fp64 SDF over (N, 3) points plus a bounding sphere."""

    def sdf(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        """Conservative (center, radius) containing the surface."""
        raise NotImplementedError

    def __call__(self, x) -> np.ndarray:
        return self.sdf(np.atleast_2d(np.asarray(x, dtype=np.float64)))

    def normal(self, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
        """Outward unit normals by central differences of the SDF."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        g = np.empty_like(x)
        for a in range(3):
            e = np.zeros(3)
            e[a] = h
            g[:, a] = (self.sdf(x + e) - self.sdf(x - e)) / (2 * h)
        n = np.linalg.norm(g, axis=1, keepdims=True)
        return g / np.maximum(n, 1e-300)

    def project(self, x: np.ndarray, iterations: int = 3) -> np.ndarray:
        """Newton projection onto the zero level set."""
        p = np.atleast_2d(np.asarray(x, dtype=np.float64)).copy()
        for _ in range(iterations):
            p -= self.sdf(p)[:, None] * self.normal(p)
        return p


@dataclass
class Sphere(Shape):
    radius: float

    def sdf(self, x):
        return np.linalg.norm(x, axis=1) - self.radius

    def bounding_sphere(self):
        return np.zeros(3), self.radius


@dataclass
class Box(Shape):
    half_extents: np.ndarray

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64)

    def sdf(self, x):
        q = np.abs(x) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def bounding_sphere(self):
        return np.zeros(3), float(np.linalg.norm(self.half_extents))


@dataclass
class Torus(Shape):
    """Ring of radius ``major`` in the xz-plane, tube radius ``minor``."""

    major: float
    minor: float

    def sdf(self, x):
        ring = np.hypot(np.hypot(x[:, 0], x[:, 2]) - self.major, x[:, 1])
        return ring - self.minor

    def bounding_sphere(self):
        return np.zeros(3), self.major + self.minor


def _merge_spheres(a, b):
    (ca, ra), (cb, rb) = a, b
    d = np.linalg.norm(cb - ca)
    if d + rb <= ra:
        return ca, ra
    if d + ra <= rb:
        return cb, rb
    r = (d + ra + rb) / 2.0
    c = ca + (cb - ca) * ((r - ra) / d if d > 0 else 0.0)
    return c, r


@dataclass
class Union(Shape):
    shapes: list

    def sdf(self, x):
        return np.min([s.sdf(x) for s in self.shapes], axis=0)

    def bounding_sphere(self):
        out = self.shapes[0].bounding_sphere()
        for s in self.shapes[1:]:
            out = _merge_spheres(out, s.bounding_sphere())
        return out


@dataclass
class Intersection(Shape):
    shapes: list

    def sdf(self, x):
        return np.max([s.sdf(x) for s in self.shapes], axis=0)

    def bounding_sphere(self):
        # any child's sphere contains the intersection; take the smallest
        return min((s.bounding_sphere() for s in self.shapes), key=lambda cr: cr[1])


@dataclass
class SmoothUnion(Shape):
    """Polynomial smooth minimum of two shapes with blend size ``k``."""

    a: Shape
    b: Shape
    k: float = 0.1

    def sdf(self, x):
        da, db = self.a.sdf(x), self.b.sdf(x)
        h = np.clip(0.5 + 0.5 * (db - da) / self.k, 0.0, 1.0)
        return db + (da - db) * h - self.k * h * (1.0 - h)

    def bounding_sphere(self):
        c, r = _merge_spheres(self.a.bounding_sphere(), self.b.bounding_sphere())
        return c, r + self.k / 4.0  # smooth blend can bulge by at most k/4


@dataclass
class Transformed(Shape):
    """Rigid transform plus uniform scale applied to a child shape."""

    child: Shape
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray | None = None  # world-from-child, orthonormal
    scale: float = 1.0

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.rotation is not None:
            self.rotation = np.asarray(self.rotation, dtype=np.float64)
            if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=1e-8):
                raise ValueError("rotation must be orthonormal")

    def _to_child(self, x):
        p = x - self.translation
        if self.rotation is not None:
            p = p @ self.rotation  # R^T applied row-wise
        return p / self.scale

    def sdf(self, x):
        return self.child.sdf(self._to_child(x)) * self.scale

    def bounding_sphere(self):
        c, r = self.child.bounding_sphere()
        if self.rotation is not None:
            c = c @ self.rotation.T
        return c * self.scale + self.translation, r * self.scale


def normalize_to_unit(shape: Shape, target_radius: float = 0.9) -> Transformed:
    """Recenter and rescale so the bounding sphere has the target radius.

    Distances scale with the shape: s_new(x) = f * s_old(x / f + c) for
    f = target_radius / r_old.
    """
    center, radius = shape.bounding_sphere()
    if radius <= 0:
        raise ValueError("degenerate shape: zero-extent bounding sphere")
    f = target_radius / radius
    return Transformed(shape, translation=-center * f, scale=f)


def normalize_points(points: np.ndarray, target_radius: float = 0.9) -> np.ndarray:
    """Recenter/rescale a point set into a bounding sphere of target radius."""
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise ValueError("empty point set")
    center = (points.min(axis=0) + points.max(axis=0)) / 2.0
    radius = np.linalg.norm(points - center, axis=1).max()
    if radius <= 0:
        raise ValueError("degenerate point set: zero extent")
    return (points - center) * (target_radius / radius)


def surface_samples(shape: Shape, n: int, rng: np.random.Generator,
                    band: float = 0.1, batch: int = 8192) -> np.ndarray:
    """Near-uniform surface points: rejection-sample a band, Newton-project.

    Serves as the analytic ground-truth point sampler for metrics; points are
    projected until |sdf| < 1e-9.
    """
    center, radius = shape.bounding_sphere()
    out = []
    have = 0
    for _ in range(10_000):
        pts = center + rng.uniform(-(radius + band), radius + band, size=(batch, 3))
        keep = np.abs(shape.sdf(pts)) < band
        if keep.any():
            p = shape.project(pts[keep], iterations=6)
            good = np.abs(shape.sdf(p)) < 1e-9
            out.append(p[good])
            have += int(good.sum())
        if have >= n:
            break
    else:
        raise RuntimeError(f"surface sampling stalled: {have}/{n} points")
    return np.concatenate(out)[:n]


# -- colors and radiance toys --------------------------------------------------


def constant_color(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)

    def fn(x):
        return np.tile(rgb, (np.atleast_2d(x).shape[0], 1))

    return fn


def axis_gradient_color(axis: int, low, high):
    """Linear blend between two colors along one axis of [-1, 1]."""
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)

    def fn(x):
        t = np.clip((np.atleast_2d(x)[:, axis] + 1.0) / 2.0, 0.0, 1.0)[:, None]
        return low + t * (high - low)

    return fn


@dataclass
class NerfToyField:
    """Deterministic density/color field derived from an analytic shape.

    Density ramps linearly from 0 at the surface to ``density_scale`` one
    shell-width inside (solid interior); color is the albedo shaded by a
    fixed directional light, so it is view-independent (Lambertian).
    """

    shape: Shape
    albedo: callable
    density_scale: float = 40.0
    shell_width: float = 0.08
    light_dir: np.ndarray = field(
        default_factory=lambda: np.array([0.4, 0.8, 0.45]) / np.linalg.norm([0.4, 0.8, 0.45])
    )
    ambient: float = 0.35

    def density(self, x: np.ndarray) -> np.ndarray:
        s = self.shape.sdf(np.atleast_2d(x))
        return self.density_scale * np.clip(-s / self.shell_width, 0.0, 1.0)

    def color(self, x: np.ndarray, view_dirs: np.ndarray | None = None) -> np.ndarray:
        x = np.atleast_2d(x)
        lambert = np.maximum(self.shape.normal(x) @ self.light_dir, 0.0)
        shade = self.ambient + (1.0 - self.ambient) * lambert
        return np.clip(self.albedo(x) * shade[:, None], 0.0, 1.0)


# -- declarative construction (shape spec files) -------------------------------

_PRIMITIVES = {
    "sphere": lambda d: Sphere(radius=float(d["radius"])),
    "box": lambda d: Box(half_extents=d["half_extents"]),
    "torus": lambda d: Torus(major=float(d["major"]), minor=float(d["minor"])),
}


def shape_from_dict(d: dict) -> Shape:
    """Build a CSG tree from a plain dict (the gen-data spec format)."""
    kind = d.get("type")
    if kind in _PRIMITIVES:
        shape = _PRIMITIVES[kind](d)
    elif kind == "union":
        shape = Union([shape_from_dict(c) for c in d["shapes"]])
    elif kind == "intersection":
        shape = Intersection([shape_from_dict(c) for c in d["shapes"]])
    elif kind == "smooth_union":
        shape = SmoothUnion(shape_from_dict(d["a"]), shape_from_dict(d["b"]),
                            k=float(d.get("k", 0.1)))
    else:
        raise ValueError(f"unknown shape type {kind!r}")
    if any(key in d for key in ("translate", "scale", "rotate_z_deg")):
        rot = None
        if "rotate_z_deg" in d:
            a = np.deg2rad(float(d["rotate_z_deg"]))
            rot = np.array([[np.cos(a), -np.sin(a), 0],
                            [np.sin(a), np.cos(a), 0],
                            [0, 0, 1.0]])
        shape = Transformed(shape, translation=np.asarray(d.get("translate", [0, 0, 0]),
                                                          dtype=np.float64),
                            rotation=rot, scale=float(d.get("scale", 1.0)))
    return shape


def color_from_dict(d: dict):
    kind = d.get("type")
    if kind == "constant":
        return constant_color(d["rgb"])
    if kind == "axis_gradient":
        return axis_gradient_color(int(d["axis"]), d["low"], d["high"])
    raise ValueError(f"unknown color type {kind!r}")
