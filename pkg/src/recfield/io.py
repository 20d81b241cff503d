"""Checkpoints and artifact writers (PLY point clouds, PPM images, CSV).

Checkpoint layout (little endian), bit-exact over fp32 payloads:

    magic "RFNE", u32 format version,
    u32 metadata length, metadata JSON (model config + object ids),
    u32 tensor count, then per tensor:
        u16 name length, name (utf-8), u8 ndim, u32 dims..., fp32 payload.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import DataError
from .metrics import MetricReport
from .nets import ModelBundle, ModelConfig
from .rendering import Camera, PointCloud

__all__ = [
    "save_checkpoint", "load_checkpoint", "checkpoint_nbytes",
    "write_ply", "write_ppm", "read_ppm", "write_metrics_csv",
    "load_train_config", "load_camera",
]

_MAGIC = b"RFNE"
_VERSION = 1


def save_checkpoint(path, bundle: ModelBundle) -> None:
    meta = {
        "model": bundle.config.to_dict(),
        "object_ids": bundle.latents.object_ids,
    }
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    named = bundle.named_tensors()
    with open(path, "wb") as f:
        f.write(_MAGIC + struct.pack("<I", _VERSION))
        f.write(struct.pack("<I", len(meta_blob)) + meta_blob)
        f.write(struct.pack("<I", len(named)))
        for name, tensor in named:
            raw = name.encode("utf-8")
            data = np.ascontiguousarray(tensor.data, dtype="<f4")
            f.write(struct.pack("<H", len(raw)) + raw)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def load_checkpoint(path) -> ModelBundle:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack_from("<I", blob, 8)
    pos = 12
    meta = json.loads(blob[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    config = ModelConfig.from_dict(meta["model"])
    object_ids = list(meta["object_ids"])

    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(
            blob, dtype="<f4", count=size, offset=pos
        ).reshape(shape).copy()
        pos += 4 * size

    bundle = ModelBundle.create(config, object_ids, seed=0)
    for name, tensor in bundle.named_tensors():
        if name not in tensors:
            raise DataError(f"{path}: checkpoint missing tensor {name!r}")
        if tensors[name].shape != tensor.data.shape:
            raise DataError(
                f"{path}: tensor {name!r} shape {tensors[name].shape} != "
                f"expected {tensor.data.shape}"
            )
        tensor.data = tensors[name]
    return bundle


def checkpoint_nbytes(bundle: ModelBundle) -> int:
    """Exact serialized size without writing to disk."""
    meta = {
        "model": bundle.config.to_dict(),
        "object_ids": bundle.latents.object_ids,
    }
    n = 4 + 4 + 4 + len(json.dumps(meta, sort_keys=True).encode("utf-8")) + 4
    for name, tensor in bundle.named_tensors():
        n += 2 + len(name.encode("utf-8")) + 1 + 4 * tensor.data.ndim
        n += 4 * tensor.data.size
    return n


# -- artifact writers -----------------------------------------------------------


def write_ply(path, cloud: PointCloud) -> None:
    """ASCII PLY with positions, normals, and 8-bit colors."""
    rgb = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype(np.uint8)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {cloud.n}\n")
        for prop in ("x", "y", "z", "nx", "ny", "nz"):
            f.write(f"property float {prop}\n")
        for prop in ("red", "green", "blue"):
            f.write(f"property uchar {prop}\n")
        f.write("end_header\n")
        for p, nrm, c in zip(cloud.points, cloud.normals, rgb):
            f.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} "
                    f"{nrm[0]:.6f} {nrm[1]:.6f} {nrm[2]:.6f} "
                    f"{c[0]} {c[1]} {c[2]}\n")


def write_ppm(path, image: np.ndarray) -> None:
    """Binary PPM (P6, 8-bit) from an (H, W, 3) float image in [0, 1]."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Inverse of :func:`write_ppm`; returns float32 in [0, 1]."""
    with open(path, "rb") as f:
        if f.readline().strip() != b"P6":
            raise DataError(f"{path}: not a P6 PPM")
        dims = f.readline().split()
        maxval = int(f.readline())
        if maxval != 255:
            raise DataError(f"{path}: unsupported max value {maxval}")
        w, h = int(dims[0]), int(dims[1])
        data = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
    return (data.reshape(h, w, 3).astype(np.float32)) / 255.0


_CSV_HEADER = """\
# Reconstruction metrics, one row per object plus an 'aggregate' mean row.
# chamfer: symmetric mean of squared nearest-neighbor distances (world units).
# normal_consistency: mean |cos| between nearest-neighbor normals, in [0, 1].
# psnr3d: color PSNR at matched 3D surface points, dB, peak 1.0.
# image_psnr: per-pixel PSNR of rendered vs reference images, dB, peak 1.0.
# 'inf' marks an exact match; empty cells were not evaluated.
object_id,chamfer,normal_consistency,psnr3d,image_psnr
"""


def _cell(v: float) -> str:
    if not np.isfinite(v):
        return "inf" if v > 0 else ""
    return f"{v:.8g}"


def write_metrics_csv(path, report: MetricReport) -> None:
    with open(path, "w") as f:
        f.write(_CSV_HEADER)
        for row in [*report.rows, report.aggregate()]:
            f.write(",".join([
                row.object_id,
                _cell(row.chamfer),
                _cell(row.normal_consistency),
                _cell(row.psnr3d),
                _cell(row.image_psnr),
            ]) + "\n")


# -- structured-text configs -----------------------------------------------------


def load_train_config(path):
    from .training import TrainConfig

    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: invalid JSON ({e})") from e
    try:
        return TrainConfig.from_dict(raw)
    except (ValueError, TypeError) as e:
        raise DataError(f"{path}: {e}") from e


def load_camera(path) -> Camera:
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: invalid JSON ({e})") from e
    required = {"intrinsics", "pose", "width", "height"}
    if set(raw) != required:
        raise DataError(
            f"{path}: camera file must have exactly the keys {sorted(required)}"
        )
    try:
        return Camera(np.array(raw["intrinsics"], dtype=np.float64),
                      np.array(raw["pose"], dtype=np.float64),
                      int(raw["width"]), int(raw["height"]))
    except ValueError as e:
        raise DataError(f"{path}: {e}") from e
