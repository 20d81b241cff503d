"""sklearn-style estimator facade over the codec.

``FieldCodec`` follows the standard estimator contract (constructor stores
hyperparameters verbatim, ``fit`` returns self, fitted state lives in
trailing-underscore attributes, ``get_params``/``set_params``/``clone`` work),
so the codec drops into pipelines and parameter searches. ``X`` is a list of
:class:`~recfield.data.FieldSampleSet`, one per object to encode.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import FieldSampleSet
from .decoders import decode_batch
from .evaluate import evaluate_model, expand_object, reconstruct_object
from .metrics import MetricReport
from .rendering import Camera, PointCloud, render_image
from .training import TrainConfig, train

__all__ = ["FieldCodec"]


def _validate_objects(X) -> list[FieldSampleSet]:
    if not isinstance(X, (list, tuple)) or len(X) == 0:
        raise ValueError("X must be a nonempty list of FieldSampleSet")
    for s in X:
        if not isinstance(s, FieldSampleSet):
            raise TypeError(f"expected FieldSampleSet, got {type(s).__name__}")
        if not np.isfinite(s.coords).all():
            raise ValueError(f"object {s.object_id!r} has non-finite coordinates")
    ids = [s.object_id for s in X]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate object ids")
    return list(X)


class FieldCodec(BaseEstimator):
    """Encode a set of 3D field objects into one network plus one latent each.

    Parameters mirror :class:`~recfield.training.TrainConfig`; see there for
    semantics and defaults.
    """

    def __init__(self, kind="sdf", latent_dim=32, max_lod=4, fusion="concat",
                 phi_hidden=1024, head_hidden=256, head_layers=2,
                 activation="sine", omega0=30.0, loss_weights=None,
                 lr_net=2e-5, lr_latent=1e-4, batch_objects=4,
                 samples_per_object=512, max_steps=5000, seed=0):
        self.kind = kind
        self.latent_dim = latent_dim
        self.max_lod = max_lod
        self.fusion = fusion
        self.phi_hidden = phi_hidden
        self.head_hidden = head_hidden
        self.head_layers = head_layers
        self.activation = activation
        self.omega0 = omega0
        self.loss_weights = loss_weights
        self.lr_net = lr_net
        self.lr_latent = lr_latent
        self.batch_objects = batch_objects
        self.samples_per_object = samples_per_object
        self.max_steps = max_steps
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(**self.get_params())

    def fit(self, X, y=None) -> "FieldCodec":
        """Optimize the shared networks and per-object latents over ``X``."""
        dataset = _validate_objects(X)
        self.bundle_, self.report_ = train(dataset, self._train_config())
        self.object_ids_ = list(self.bundle_.latents.object_ids)
        return self

    def expand(self, object_id: str):
        """Inference-mode latent octree of one fitted object."""
        check_is_fitted(self)
        return expand_object(self.bundle_, object_id)

    def decode(self, object_id: str, coords, view_dirs=None) -> dict:
        """Field values of one fitted object at query coordinates."""
        check_is_fitted(self)
        return decode_batch(self.expand(object_id), coords, self.bundle_,
                            view_dirs=view_dirs)

    def reconstruct(self, object_id: str, samples_per_voxel: int = 0,
                    iterations: int = 2, keep_tol=None) -> PointCloud:
        """Oriented (optionally colored) surface point cloud of one object."""
        check_is_fitted(self)
        cloud, _ = reconstruct_object(
            self.bundle_, object_id, samples_per_voxel=samples_per_voxel,
            iterations=iterations, keep_tol=keep_tol, seed=self.seed,
        )
        return cloud

    def render(self, object_id: str, camera: Camera, renderer: str = "sphere",
               **kwargs):
        """Render one object to an image; see :func:`rendering.render_image`."""
        check_is_fitted(self)
        return render_image(self.expand(object_id), self.bundle_, camera,
                            renderer, **kwargs)

    def evaluate(self, X, max_points: int = 2**14, threads: int = 1) -> MetricReport:
        """Metric report of the fitted model against a dataset."""
        check_is_fitted(self)
        return evaluate_model(self.bundle_, _validate_objects(X),
                              max_points=max_points, seed=self.seed,
                              threads=threads)

    def score(self, X, y=None) -> float:
        """Negative mean squared geometry error at the dataset coordinates.

        Higher is better, per the sklearn scoring convention.
        """
        check_is_fitted(self)
        total, count = 0.0, 0
        for s in _validate_objects(X):
            out = self.decode(s.object_id, s.coords.astype(np.float64),
                              view_dirs=s.view_dirs)
            pred = out["density"] if s.density is not None else out["sdf"]
            target = s.density if s.density is not None else s.sdf
            total += float(((pred - target) ** 2).sum())
            count += s.n
        return -total / count
