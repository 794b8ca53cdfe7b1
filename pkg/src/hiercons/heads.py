"""Reference MLP backbone and the per-level linear classification heads."""

from dataclasses import dataclass, field

import numpy as np

from .hierarchy import HierarchySpec
from .numerics import autodiff as ad
from .numerics.autodiff import Tensor

NONLINEARITIES = {"tanh": ad.tanh, "softplus": ad.softplus}


@dataclass(frozen=True)
class BackboneConfig:
    input_dim: int
    feature_dim: int
    hidden: tuple = ()
    nonlinearity: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        dims = (self.input_dim, self.feature_dim, *self.hidden)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"backbone dimensions must be >= 1, got {dims}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}; choose from {sorted(NONLINEARITIES)}")

    @property
    def is_identity(self) -> bool:
        return not self.hidden and self.feature_dim == self.input_dim


@dataclass
class Linear:
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, fan_in: int, fan_out: int, rng: np.random.Generator, name: str):
        s = 1.0 / np.sqrt(fan_in)
        w = Tensor(rng.uniform(-s, s, size=(fan_in, fan_out)), requires_grad=True, name=f"{name}.weight")
        b = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.bias")
        return cls(w, b)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)

    def parameters(self):
        return [self.weight, self.bias]


@dataclass
class Backbone:
    config: BackboneConfig
    layers: list = field(default_factory=list)

    @classmethod
    def init(cls, config: BackboneConfig, rng: np.random.Generator):
        if config.is_identity:
            return cls(config, [])
        dims = [config.input_dim, *config.hidden, config.feature_dim]
        layers = [Linear.init(a, b, rng, f"backbone.{i}") for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))]
        return cls(config, layers)

    def __call__(self, x) -> Tensor:
        return forward_backbone(self, x)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


@dataclass
class LevelHead:
    level: int
    layers: list

    @property
    def width(self) -> int:
        return self.layers[-1].bias.shape[0]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


def forward_backbone(backbone: Backbone, x) -> Tensor:
    """Features of shape (batch, feature_dim); the nonlinearity follows every layer."""
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != backbone.config.input_dim:
        raise ValueError(f"expected input of shape (n, {backbone.config.input_dim}), got {x.shape}")
    act = NONLINEARITIES[backbone.config.nonlinearity]
    for layer in backbone.layers:
        x = act(layer(x))
    return x


def init_heads(spec: HierarchySpec, feature_dim: int, rng: np.random.Generator,
               hidden: tuple = ()) -> list:
    heads = []
    for h, width in enumerate(spec.sizes, start=1):
        dims = [feature_dim, *hidden, width]
        layers = [
            Linear.init(a, b, rng, f"head.{h}.{i}")
            for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))
        ]
        heads.append(LevelHead(h, layers))
    return heads


def forward_heads(features: Tensor, heads: list, spec: HierarchySpec = None,
                  nonlinearity: str = "tanh") -> list:
    """One logits tensor (batch, |level h|) per level, coarse first."""
    if spec is not None:
        if len(heads) != spec.num_levels:
            raise ValueError(f"{len(heads)} heads for a {spec.num_levels}-level hierarchy")
        for head, width in zip(heads, spec.sizes):
            if head.width != width:
                raise ValueError(f"head for level {head.level} has width {head.width}, level has {width} classes")
    act = NONLINEARITIES[nonlinearity]
    logits = []
    for head in heads:
        z = features
        for i, layer in enumerate(head.layers):
            z = layer(z)
            if i < len(head.layers) - 1:
                z = act(z)
        logits.append(z)
    return logits
