"""Joint optimization of the shared networks and per-object root latents.

The composite objective is w_o * L_o + w_g * L_g + w_c * L_c: binary cross
entropy on the occupancy logits of every child visited during ground-truth
gated expansion, plus mean squared error on the decoded geometry (distance,
or density for radiance) and color at sampled supervision coordinates. The
color term is dropped entirely for pure distance fields. Default weights are
(2, 10, 1) for distance kinds and (2, 1, 1) for radiance.

Networks and latents form two optimizer groups (defaults 2e-5 and 1e-4);
each object's latent has its own Adam state and is stepped only when that
object appears in the batch, so untouched objects stay bit-identical.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .data import FieldSampleSet
from .errors import NumericsError
from .expansion import expand_training_batch
from .fusion import fused_query
from .nets import FieldKind, ModelBundle, ModelConfig

__all__ = ["TrainConfig", "TrainReport", "loss_step", "train"]

log = logging.getLogger(__name__)

_DEFAULT_WEIGHTS = {
    FieldKind.SDF: (2.0, 10.0, 1.0),
    FieldKind.SDF_RGB: (2.0, 10.0, 1.0),
    FieldKind.NERF: (2.0, 1.0, 1.0),
}


@dataclass
class TrainConfig:
    """Everything one training run needs, serializable as flat JSON."""

    kind: str = "sdf"
    latent_dim: int = 32
    max_lod: int = 4
    fusion: str = "concat"
    phi_hidden: int = 1024
    head_hidden: int = 256
    head_layers: int = 2
    activation: str = "sine"
    omega0: float = 30.0
    loss_weights: tuple | None = None  # (w_o, w_g, w_c); None = per-kind default
    lr_net: float = 2e-5
    lr_latent: float = 1e-4
    batch_objects: int = 4
    samples_per_object: int = 512
    max_steps: int = 5000
    seed: int = 0
    log_interval: int = 100
    checkpoint_interval: int = 0  # steps between snapshots; 0 = final only
    divergence_factor: float = 10.0
    divergence_patience: int = 1000

    def __post_init__(self):
        self.kind = FieldKind(self.kind)
        if self.loss_weights is not None:
            self.loss_weights = tuple(float(w) for w in self.loss_weights)
            if len(self.loss_weights) != 3:
                raise ValueError("loss_weights must be (w_o, w_g, w_c)")
        if self.max_steps < 0 or self.batch_objects < 1 or self.samples_per_object < 1:
            raise ValueError("invalid training budget")

    @property
    def weights(self) -> tuple[float, float, float]:
        return self.loss_weights or _DEFAULT_WEIGHTS[self.kind]

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            kind=self.kind, latent_dim=self.latent_dim, max_lod=self.max_lod,
            fusion=self.fusion, phi_hidden=self.phi_hidden,
            head_hidden=self.head_hidden, head_layers=self.head_layers,
            activation=self.activation, omega0=self.omega0,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["loss_weights"] = list(self.loss_weights) if self.loss_weights else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainReport:
    """Loss trajectory and run accounting."""

    steps_run: int = 0
    wall_time: float = 0.0
    early_stopped: bool = False
    history: list = field(default_factory=list)  # dicts of logged loss parts

    @property
    def final_loss(self) -> float:
        return self.history[-1]["total"] if self.history else float("nan")


def _subsample(s: FieldSampleSet, count: int, rng) -> dict:
    idx = rng.integers(0, s.n, size=min(count, s.n))
    out = {"coords": s.coords[idx].astype(np.float64)}
    for name in ("sdf", "color", "density", "view_dirs"):
        arr = getattr(s, name)
        if arr is not None:
            out[name] = arr[idx]
    return out


def loss_step(
    bundle: ModelBundle,
    batch: list[FieldSampleSet],
    rng: np.random.Generator,
    config: TrainConfig,
) -> tuple[Tensor, dict]:
    """Forward pass of one batch; returns (scalar loss, float parts)."""
    kind = bundle.config.kind
    w_o, w_g, w_c = config.weights

    roots = ad.concat([bundle.latents.latent(s.object_id) for s in batch], axis=0)
    expansion = expand_training_batch(roots, [s.octree for s in batch], bundle)
    loss_occ = ad.bce_with_logits(expansion.logits, expansion.targets[:, None])

    samples = [_subsample(s, config.samples_per_object, rng) for s in batch]
    coords = np.concatenate([s["coords"] for s in samples])
    offsets = np.concatenate(
        [[0], np.cumsum([len(s["coords"]) for s in samples])]
    ).astype(np.int64)
    fused, _ = fused_query(expansion.levels, coords, bundle.config.fusion, offsets)
    geo = bundle.geometry(fused)

    if kind is FieldKind.NERF:
        density = ad.softplus(geo)
        target_density = np.concatenate([s["density"] for s in samples])[:, None]
        loss_geo = ad.mse(density, target_density)
        dirs = np.concatenate([s["view_dirs"] for s in samples])
        color = bundle.color(fused, dirs)
        loss_color = ad.mse(color, np.concatenate([s["color"] for s in samples]))
    else:
        target_sdf = np.concatenate([s["sdf"] for s in samples])[:, None]
        loss_geo = ad.mse(geo, target_sdf)
        loss_color = None
        if kind is FieldKind.SDF_RGB:
            color = bundle.color(fused)
            loss_color = ad.mse(color, np.concatenate([s["color"] for s in samples]))

    total = ad.add(ad.scale(loss_occ, w_o), ad.scale(loss_geo, w_g))
    parts = {
        "occupancy": float(loss_occ.data),
        "geometry": float(loss_geo.data),
    }
    if loss_color is not None:
        total = ad.add(total, ad.scale(loss_color, w_c))
        parts["color"] = float(loss_color.data)
    parts["total"] = float(total.data)
    if not np.isfinite(parts["total"]):
        raise NumericsError(f"non-finite loss: {parts}")
    return total, parts


def train(
    dataset: list[FieldSampleSet],
    config: TrainConfig,
    checkpoint_path=None,
    bundle: ModelBundle | None = None,
) -> tuple[ModelBundle, TrainReport]:
    """Optimize a model over the dataset; deterministic for a given seed.

    Pass ``bundle`` to resume from existing weights. Checkpoints are written
    to ``checkpoint_path`` every ``checkpoint_interval`` steps and at the end.
    """
    if not dataset:
        raise ValueError("empty dataset")
    kinds = {s.kind for s in dataset}
    if kinds != {config.kind}:
        raise ValueError(f"dataset kinds {kinds} do not match config {config.kind}")
    ids = [s.object_id for s in dataset]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate object ids in dataset")

    if bundle is None:
        bundle = ModelBundle.create(config.model_config(), ids, seed=config.seed)
    by_id = {s.object_id: s for s in dataset}

    opt_net = Adam(bundle.net_parameters(), lr=config.lr_net)
    opt_latent = {
        oid: Adam([bundle.latents.latent(oid)], lr=config.lr_latent) for oid in ids
    }
    rng = np.random.default_rng([config.seed, 0xBA7C4])

    report = TrainReport()
    start = time.perf_counter()
    initial_loss = None
    bad_steps = 0

    for step in range(config.max_steps):
        if len(ids) <= config.batch_objects:
            batch_ids = ids
        else:
            batch_ids = [ids[i] for i in
                         rng.choice(len(ids), size=config.batch_objects,
                                    replace=False)]
        batch = [by_id[oid] for oid in batch_ids]
        loss, parts = loss_step(bundle, batch, rng, config)
        ad.backward(loss)
        opt_net.step()
        opt_net.zero_grad()
        for oid in batch_ids:
            opt_latent[oid].step()
            opt_latent[oid].zero_grad()

        report.steps_run = step + 1
        if step % config.log_interval == 0 or step == config.max_steps - 1:
            report.history.append({"step": step, **parts})
            log.info("step %d: %s", step,
                     " ".join(f"{k}={v:.5f}" for k, v in parts.items()))

        if initial_loss is None:
            initial_loss = parts["total"]
        if parts["total"] > config.divergence_factor * initial_loss:
            bad_steps += 1
            if bad_steps >= config.divergence_patience:
                report.early_stopped = True
                log.warning("divergence: loss %.4g > %gx initial for %d steps",
                            parts["total"], config.divergence_factor, bad_steps)
                break
        else:
            bad_steps = 0

        if (checkpoint_path and config.checkpoint_interval
                and (step + 1) % config.checkpoint_interval == 0):
            from .io import save_checkpoint

            save_checkpoint(checkpoint_path, bundle)

    report.wall_time = time.perf_counter() - start
    if checkpoint_path:
        from .io import save_checkpoint

        save_checkpoint(checkpoint_path, bundle)
    return bundle, report
