"""Trainable log-joint hierarchy matrices, cross-level projection, consensus and losses.

A single log-joint matrix per (coarse, fine) level pair serves both
directions: fine->coarse conditionals are its row-normalization, and
coarse->fine conditionals are the row-normalization of its transpose.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .hierarchy import HierarchySpec, indicator_matrix, level_pairs
from .numerics import autodiff as ad
from .numerics.autodiff import Tensor

NEG_FILL = -30.0
INIT_MODES = ("uniform", "indicator")


@dataclass
class LogJointMatrix:
    coarse: int
    fine: int
    param: Tensor  # (|fine level|, |coarse level|)
    mode: str = "uniform"

    @property
    def pair(self) -> tuple:
        return (self.coarse, self.fine)


def init_log_joint(spec: HierarchySpec, pair: tuple, mode: str = "uniform") -> LogJointMatrix:
    coarse, fine = pair
    if not 1 <= coarse < fine <= spec.num_levels:
        raise ValueError(f"invalid level pair {pair} for a {spec.num_levels}-level hierarchy")
    shape = (spec.size(fine), spec.size(coarse))
    if mode == "uniform":
        values = np.zeros(shape)
    elif mode == "indicator":
        values = np.where(indicator_matrix(spec, fine, coarse) == 1, 0.0, NEG_FILL)
    else:
        raise ValueError(f"unknown init mode {mode!r}; choose from {INIT_MODES}")
    param = Tensor(values, requires_grad=True, name=f"joint.{coarse}.{fine}")
    return LogJointMatrix(coarse, fine, param, mode)


def init_all_log_joints(spec: HierarchySpec, mode: str = "uniform") -> list:
    return [init_log_joint(spec, pair, mode) for pair in level_pairs(spec.num_levels)]


def projection_from_joint(joint, direction: str = "fine_to_coarse") -> Tensor:
    """Log projection matrix, rows indexed by source class, row-stochastic after exp."""
    L = joint.param if isinstance(joint, LogJointMatrix) else ad.as_tensor(joint)
    if direction == "fine_to_coarse":
        return ad.log_row_normalize(L)
    if direction == "coarse_to_fine":
        return ad.log_row_normalize(ad.transpose(L))
    raise ValueError(f"unknown direction {direction!r}")


def projection_matrices(joints: list) -> dict:
    """Map (source level, target level) -> log projection for every ordered pair of distinct levels."""
    out = {}
    for joint in joints:
        out[(joint.fine, joint.coarse)] = projection_from_joint(joint, "fine_to_coarse")
        out[(joint.coarse, joint.fine)] = projection_from_joint(joint, "coarse_to_fine")
    return out


def project_logprobs(logits, log_proj) -> Tensor:
    """Project source-level logits to a target-level log-distribution.

    ``out[n, j] = lse_i(g[n, i] + log M[i, j]) - lse_i(g[n, i])``
    """
    logits = ad.as_tensor(logits)
    log_proj = ad.as_tensor(log_proj)
    if logits.ndim != 2:
        raise ValueError(f"logits must be (batch, classes), got {logits.shape}")
    if logits.shape[-1] != log_proj.shape[0]:
        raise ValueError(f"logits width {logits.shape[-1]} does not match projection rows {log_proj.shape[0]}")
    return ad.sub(ad.log_matmul(logits, log_proj), ad.lse(logits, axis=-1, keepdims=True))


@dataclass
class ConsensusBundle:
    target: int
    projected: list  # log p^{h -> target} for h = 1..H; the self entry is the level's own log-probs
    scores: Tensor  # g_HC, the mean of the committee log-probs
    log_normalizer: Tensor  # lse(g_HC) = log Z
    log_consensus: Tensor  # g_HC - log Z


def consensus(logits: list, projections: dict, target: int) -> ConsensusBundle:
    """Normalized geometric mean, taken in the log domain, of every level's vote at ``target``."""
    H = len(logits)
    if not 1 <= target <= H:
        raise ValueError(f"target level {target} outside 1..{H}")
    projected = []
    for h in range(1, H + 1):
        g = ad.as_tensor(logits[h - 1])
        if h == target:
            projected.append(ad.log_softmax(g))
            continue
        if (h, target) not in projections:
            raise KeyError(f"missing projection matrix {h} -> {target}")
        projected.append(project_logprobs(g, projections[(h, target)]))
    total = projected[0]
    for p in projected[1:]:
        total = ad.add(total, p)
    scores = ad.scale(total, 1.0 / H)
    log_z = ad.lse(scores, axis=-1, keepdims=True)
    return ConsensusBundle(target, projected, scores, log_z, ad.sub(scores, log_z))


def all_consensus(logits: list, projections: dict) -> list:
    return [consensus(logits, projections, t) for t in range(1, len(logits) + 1)]


@dataclass(frozen=True)
class LossWeights:
    level: tuple
    hc: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "level", tuple(float(w) for w in self.level))
        if any(w < 0 for w in self.level) or self.hc < 0:
            raise ValueError(f"loss weights must be >= 0, got level={self.level}, hc={self.hc}")

    @classmethod
    def default(cls, num_levels: int, hc: float = 1.0):
        return cls(default_level_weights(num_levels), hc)


def default_level_weights(num_levels: int) -> tuple:
    if num_levels == 3:
        return (0.3, 0.2, 0.5)
    w = np.ones(num_levels)
    w[-1] = 2.0
    return tuple((w / w.sum()).tolist())


def _labels_column(labels, h: int, n: int, width: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    col = y[:, h - 1] if y.ndim == 2 else y
    if col.shape != (n,):
        raise ValueError(f"expected {n} labels at level {h}, got shape {col.shape}")
    if n and (col.min() < 0 or col.max() >= width):
        raise IndexError(f"label out of range at level {h}: valid 0..{width - 1}")
    return col


def level_cce(log_probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the labelled class."""
    n = log_probs.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    return ad.neg(ad.mean(ad.pick(log_probs, labels)))


def cce_loss(level_log_probs: list, labels, weights) -> tuple:
    """Per-level CCE tensors and their weighted sum.

    ``labels`` is an (n, H) array. Levels with zero weight are skipped entirely.
    """
    level_w = weights.level if isinstance(weights, LossWeights) else tuple(weights)
    if len(level_w) != len(level_log_probs):
        raise ValueError(f"{len(level_w)} weights for {len(level_log_probs)} levels")
    per_level, total = [], None
    for h, (lp, w) in enumerate(zip(level_log_probs, level_w), start=1):
        y = _labels_column(labels, h, lp.shape[0], lp.shape[1])
        loss_h = level_cce(lp, y)
        per_level.append(loss_h)
        if w == 0:
            continue
        term = ad.scale(loss_h, w)
        total = term if total is None else ad.add(total, term)
    if total is None:
        total = ad.scale(per_level[-1], 0.0)
    return per_level, total


def balance_jsd(jsd_terms: list, level_sizes) -> Tensor:
    """Weight each target level's summed JSD terms by 1 / log(class count) and add up.

    ``jsd_terms[t]`` is the list of per-sample JSD tensors (shape (n,)) for
    target level t + 1. Returns the batch mean of the balanced sum.
    """
    total = None
    for terms, size in zip(jsd_terms, level_sizes):
        if size < 2:
            raise ValueError("consensus loss is undefined for a level with a single class")
        group = terms[0]
        for t in terms[1:]:
            group = ad.add(group, t)
        group = ad.scale(group, 1.0 / np.log(size))
        total = group if total is None else ad.add(total, group)
    return ad.mean(total)


def jsd_terms(bundle: ConsensusBundle) -> list:
    return [ad.jsd(bundle.log_consensus, p) for p in bundle.projected]


def hc_loss(bundles: list) -> Tensor:
    """Class-count-balanced JSD between each target level's consensus and every committee member."""
    bundles = sorted(bundles, key=lambda b: b.target)
    sizes = [b.log_consensus.shape[-1] for b in bundles]
    return balance_jsd([jsd_terms(b) for b in bundles], sizes)


@dataclass
class LossBreakdown:
    per_level_cce: list
    cce: Tensor
    hc: Optional[Tensor]
    total: Tensor
    weights: LossWeights = field(default=None)

    def as_floats(self) -> dict:
        return {
            "cce_per_level": [float(t.data) for t in self.per_level_cce],
            "cce": float(self.cce.data),
            "hc": None if self.hc is None else float(self.hc.data),
            "total": float(self.total.data),
        }


def total_loss(cce: Tensor, hc: Optional[Tensor], hc_weight: float) -> Tensor:
    if hc is None:
        return cce
    return ad.add(cce, ad.scale(hc, hc_weight))


def infer(logits: list, projections: dict, mode: str = "consensus") -> np.ndarray:
    """Predicted class index per sample and level, shape (n, H)."""
    if mode == "fine_head":
        preds = [np.argmax(ad.as_tensor(g).data, axis=-1) for g in logits]
    elif mode == "consensus":
        frozen_logits = [Tensor(ad.as_tensor(g).data) for g in logits]
        frozen = {k: Tensor(ad.as_tensor(v).data) for k, v in projections.items()}
        preds = [np.argmax(b.log_consensus.data, axis=-1) for b in all_consensus(frozen_logits, frozen)]
    else:
        raise ValueError(f"unknown inference mode {mode!r}")
    return np.stack(preds, axis=-1).astype(np.int64)
