"""Recursive latent-octree codec for 3D fields.

One shared network plus one compact latent per object encodes sets of signed
distance fields (optionally colored) or radiance fields; reconstruction is
recursive octree expansion with occupancy pruning, multiscale trilinear
feature fusion, and field-specific decoding, rendered by iso-surface
projection, sphere tracing, or volumetric compositing.
"""

from .data import (
    FieldSampleSet,
    ObjectSpec,
    build_gt_octree,
    generate_dataset,
    load_dataset,
    sample_bands,
    save_dataset,
)
from .estimator import FieldCodec
from .evaluate import evaluate_model, expand_object, reconstruct_object
from .expansion import LatentOctree, expand_inference, expand_training
from .io import load_checkpoint, save_checkpoint, write_ply, write_ppm
from .metrics import (
    MetricReport,
    chamfer,
    image_psnr,
    latent_interpolate,
    latent_pca,
    normal_consistency,
    psnr3d,
)
from .nets import FieldKind, ModelBundle, ModelConfig
from .octree import MortonKey, SparseOctree, morton_decode, morton_encode
from .rendering import Camera, PointCloud, render_image
from .training import TrainConfig, TrainReport, train

__version__ = "0.1.0"

__all__ = [
    "FieldCodec",
    "FieldKind",
    "FieldSampleSet",
    "ObjectSpec",
    "ModelBundle",
    "ModelConfig",
    "TrainConfig",
    "TrainReport",
    "Camera",
    "PointCloud",
    "LatentOctree",
    "MortonKey",
    "SparseOctree",
    "MetricReport",
    "build_gt_octree",
    "chamfer",
    "evaluate_model",
    "expand_inference",
    "expand_object",
    "expand_training",
    "generate_dataset",
    "image_psnr",
    "latent_interpolate",
    "latent_pca",
    "load_checkpoint",
    "load_dataset",
    "morton_decode",
    "morton_encode",
    "normal_consistency",
    "psnr3d",
    "reconstruct_object",
    "render_image",
    "sample_bands",
    "save_checkpoint",
    "save_dataset",
    "train",
    "write_ply",
    "write_ppm",
]
