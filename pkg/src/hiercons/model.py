"""Backbone + level heads + log-joint matrices bundled as one trainable model."""

from dataclasses import dataclass

import numpy as np

from . import consensus as cons
from .heads import Backbone, BackboneConfig, forward_heads, init_heads
from .hierarchy import HierarchySpec, ancestor_map, parse_hierarchy
from .numerics import autodiff as ad
from .numerics.autodiff import Tensor

INFERENCE_MODES = ("consensus", "fine_head", "flat")


@dataclass
class HierarchicalModel:
    spec: HierarchySpec
    backbone: Backbone
    heads: list
    joints: list
    head_hidden: tuple = ()

    @classmethod
    def create(cls, spec: HierarchySpec, backbone_config: BackboneConfig, seed: int = 0,
               head_hidden=(), joint_init: str = "uniform"):
        rng = np.random.default_rng(seed)
        backbone = Backbone.init(backbone_config, rng)
        heads = init_heads(spec, backbone_config.feature_dim, rng, tuple(head_hidden))
        joints = cons.init_all_log_joints(spec, joint_init)
        return cls(spec, backbone, heads, joints, tuple(head_hidden))

    @property
    def num_levels(self) -> int:
        return self.spec.num_levels

    def named_parameters(self) -> list:
        params = self.backbone.parameters()
        for head in self.heads:
            params += head.parameters()
        params += [j.param for j in self.joints]
        return [(p.name, p) for p in params]

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def joint(self, coarse: int, fine: int) -> cons.LogJointMatrix:
        for j in self.joints:
            if j.pair == (coarse, fine):
                return j
        raise KeyError(f"no log-joint matrix for pair {(coarse, fine)}")

    def forward(self, x) -> list:
        features = self.backbone(x)
        return forward_heads(features, self.heads, self.spec, self.backbone.config.nonlinearity)

    def projections(self) -> dict:
        return cons.projection_matrices(self.joints)

    def loss(self, x, labels, weights: cons.LossWeights, multi_level: bool = True,
             hc_loss: bool = True) -> cons.LossBreakdown:
        """Full training objective on one batch; ``labels`` is (n, H)."""
        logits = self.forward(x)
        log_probs = [ad.log_softmax(g) for g in logits]
        level_w = weights.level
        if not multi_level:
            level_w = (0.0,) * (self.num_levels - 1) + (1.0,)
        per_level, cce = cons.cce_loss(log_probs, labels, level_w)
        hc = None
        if hc_loss and multi_level and self.num_levels > 1:
            bundles = cons.all_consensus(logits, self.projections())
            hc = cons.hc_loss(bundles)
        total = cons.total_loss(cce, hc, weights.hc)
        return cons.LossBreakdown(per_level, cce, hc, total, weights)

    def predict(self, x, mode: str = "consensus") -> np.ndarray:
        """(n, H) class indices. ``flat`` lifts the finest head's decision to the coarser levels."""
        if mode not in INFERENCE_MODES:
            raise ValueError(f"unknown inference mode {mode!r}; choose from {INFERENCE_MODES}")
        logits = [Tensor(g.data) for g in self.forward(Tensor(np.asarray(x, dtype=np.float64)))]
        if mode == "flat":
            fine = np.argmax(logits[-1].data, axis=-1)
            H = self.num_levels
            return np.stack([ancestor_map(self.spec, H, h)[fine] for h in range(1, H + 1)], axis=-1)
        projections = {k: Tensor(v.data) for k, v in self.projections().items()} if mode == "consensus" else {}
        return cons.infer(logits, projections, mode)

    def state(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state(self, state: dict):
        for name, p in self.named_parameters():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} vs {p.data.shape}")
            p.data = value.copy()

    def describe(self) -> dict:
        cfg = self.backbone.config
        return {
            "hierarchy": self.spec.to_document(),
            "backbone": {
                "input_dim": cfg.input_dim,
                "feature_dim": cfg.feature_dim,
                "hidden": list(cfg.hidden),
                "nonlinearity": cfg.nonlinearity,
            },
            "head_hidden": list(self.head_hidden),
            "joint_init": [j.mode for j in self.joints],
        }

    @classmethod
    def from_description(cls, desc: dict):
        spec = parse_hierarchy(desc["hierarchy"])
        b = desc["backbone"]
        config = BackboneConfig(b["input_dim"], b["feature_dim"], tuple(b["hidden"]), b["nonlinearity"])
        model = cls.create(spec, config, 0, tuple(desc.get("head_hidden", ())))
        for joint, mode in zip(model.joints, desc.get("joint_init", [])):
            joint.mode = mode
        return model
