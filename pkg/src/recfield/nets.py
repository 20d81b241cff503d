"""The shared networks and per-object root latents.

Four MLPs make up one model: a subdivision net mapping a parent latent to its
8 Morton-ordered child latents, an occupancy head producing pruning logits, a
geometry head (signed distance, or raw density for radiance fields), and a
color head. All four default to sine activations with the standard
frequency/initialization scheme (first layer U(-1/fan_in, 1/fan_in), deeper
layers U(-sqrt(6/fan_in)/w0, sqrt(6/fan_in)/w0), w0 = 30); ``activation`` can
be flipped to ``"relu"`` without changing any shape contract.

Each encoded object owns exactly one trainable root latent, held in a
:class:`LatentTable`; everything else is shared across objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = ["FieldKind", "ModelConfig", "SirenMlp", "LatentTable", "ModelBundle"]


class FieldKind(str, Enum):
    SDF = "sdf"
    SDF_RGB = "sdfrgb"
    NERF = "nerf"

    @property
    def has_color(self) -> bool:
        return self is not FieldKind.SDF


@dataclass
class ModelConfig:
    """Structural hyperparameters shared by all networks of one model."""

    kind: FieldKind = FieldKind.SDF
    latent_dim: int = 32
    max_lod: int = 4
    fusion: str = "concat"  # "concat" | "sum"
    phi_hidden: int = 1024
    head_hidden: int = 256
    head_layers: int = 2
    activation: str = "sine"  # "sine" | "relu"
    omega0: float = 30.0

    def __post_init__(self):
        self.kind = FieldKind(self.kind)
        if self.fusion not in ("concat", "sum"):
            raise ValueError(f"unknown fusion scheme {self.fusion!r}")
        if self.activation not in ("sine", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.max_lod < 1:
            raise ValueError("max_lod must be >= 1")

    @property
    def fused_dim(self) -> int:
        """Input width of the decoding heads under the fusion scheme."""
        if self.fusion == "concat":
            return self.latent_dim * self.max_lod
        return self.latent_dim

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class SirenMlp:
    """Fully connected MLP with sine (or relu) activations, linear output."""

    def __init__(self, dims: list[int], activation: str = "sine",
                 omega0: float = 30.0, rng: np.random.Generator | None = None):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        rng = rng or np.random.default_rng()
        self.dims = list(dims)
        self.activation = activation
        self.omega0 = omega0
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for layer, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            if activation == "sine":
                bound = 1.0 / fan_in if layer == 0 else np.sqrt(6.0 / fan_in) / omega0
            else:
                bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-1.0, 1.0, size=fan_out) / np.sqrt(fan_in)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(b, requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, w), b)
            if i < last:
                if self.activation == "sine":
                    h = ad.sin(ad.scale(h, self.omega0))
                else:
                    h = ad.relu(h)
        return h

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())


class LatentTable:
    """One trainable root latent per object, keyed by object id.

    Rows are separate tensors so the optimizer can touch exactly the objects
    present in a batch, leaving every other latent bit-identical.
    """

    def __init__(self, object_ids: list[str], latent_dim: int,
                 rng: np.random.Generator | None = None, init_scale: float = 0.01):
        if len(set(object_ids)) != len(object_ids):
            raise ValueError("duplicate object ids")
        rng = rng or np.random.default_rng()
        self.latent_dim = latent_dim
        self.rows: dict[str, Tensor] = {
            oid: Tensor(rng.normal(0.0, init_scale, size=(1, latent_dim)),
                        requires_grad=True)
            for oid in object_ids
        }

    @property
    def object_ids(self) -> list[str]:
        return list(self.rows)

    def __len__(self) -> int:
        return len(self.rows)

    def latent(self, object_id: str) -> Tensor:
        if object_id not in self.rows:
            raise KeyError(f"unknown object id {object_id!r}")
        return self.rows[object_id]

    def matrix(self) -> np.ndarray:
        """All root latents stacked as a (K, D) float32 array."""
        return np.concatenate([t.data for t in self.rows.values()], axis=0)

    @classmethod
    def from_matrix(cls, object_ids: list[str], mat: np.ndarray) -> "LatentTable":
        table = cls(object_ids, mat.shape[1])
        for oid, row in zip(object_ids, mat):
            table.rows[oid] = Tensor(row.reshape(1, -1), requires_grad=True)
        return table


@dataclass
class ModelBundle:
    """Everything one trained model consists of: nets, latents, config."""

    config: ModelConfig
    phi: SirenMlp
    omega: SirenMlp
    psi: SirenMlp
    xi: SirenMlp
    latents: LatentTable

    @classmethod
    def create(cls, config: ModelConfig, object_ids: list[str], seed: int = 0) -> "ModelBundle":
        master = np.random.default_rng(seed)
        seeds = master.integers(0, 2**63 - 1, size=5)
        d, h = config.latent_dim, config.head_hidden
        head = [config.head_hidden] * config.head_layers
        act, w0 = config.activation, config.omega0
        phi = SirenMlp([d, config.phi_hidden, 8 * d], act, w0,
                       np.random.default_rng(seeds[0]))
        omega = SirenMlp([d, *head, 1], act, w0, np.random.default_rng(seeds[1]))
        psi = SirenMlp([config.fused_dim, *head, 1], act, w0,
                       np.random.default_rng(seeds[2]))
        xi_in = config.fused_dim + (3 if config.kind is FieldKind.NERF else 0)
        xi = SirenMlp([xi_in, *head, 3], act, w0, np.random.default_rng(seeds[3]))
        latents = LatentTable(object_ids, d, np.random.default_rng(seeds[4]))
        return cls(config, phi, omega, psi, xi, latents)

    # -- network surfaces ------------------------------------------------------

    def expand_children(self, z: Tensor) -> Tensor:
        """Subdivide (P, D) parent latents into (8P, D) child latents.

        Children of parent row p occupy rows 8p..8p+7 in Morton child order,
        matching the code arithmetic ``child = 8 * parent + i``.
        """
        p = z.data.shape[0]
        return ad.reshape(self.phi(z), (8 * p, self.config.latent_dim))

    def occupancy_logits(self, z: Tensor) -> Tensor:
        return self.omega(z)

    def occupancy(self, z: Tensor) -> np.ndarray:
        """Occupancy probabilities in (0, 1) for (P, D) latents."""
        with ad.no_grad():
            logits = self.omega(z)
        return ad._sigmoid(logits.data)[:, 0]

    def geometry(self, fused: Tensor) -> Tensor:
        """Raw geometry head output: signed distance, or density pre-softplus."""
        return self.psi(fused)

    def color(self, fused: Tensor, view_dirs: np.ndarray | None = None) -> Tensor:
        """Color head with sigmoid bound; view directions only for radiance fields."""
        if self.config.kind is FieldKind.NERF:
            if view_dirs is None:
                raise ValueError("radiance-field color needs view directions")
            inp = ad.concat([fused, Tensor(view_dirs)], axis=1)
        else:
            if view_dirs is not None:
                raise ValueError("view directions are only valid for radiance fields")
            inp = fused
        return ad.sigmoid(self.xi(inp))

    def net_parameters(self) -> list[Tensor]:
        out = []
        for net in (self.phi, self.omega, self.psi, self.xi):
            out.extend(net.parameters())
        return out

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        """Stable (name, tensor) listing of all weights, for serialization."""
        named = []
        for net_name, net in (("phi", self.phi), ("omega", self.omega),
                              ("psi", self.psi), ("xi", self.xi)):
            for i, (w, b) in enumerate(zip(net.weights, net.biases)):
                named.append((f"{net_name}/w{i}", w))
                named.append((f"{net_name}/b{i}", b))
        for oid, row in self.latents.rows.items():
            named.append((f"latent/{oid}", row))
        return named
