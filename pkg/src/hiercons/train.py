"""Training loop, evaluation, and the multi-seed runner."""

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import metrics
from .consensus import LossWeights, default_level_weights
from .data import SampleSet
from .heads import BackboneConfig
from .hierarchy import HierarchySpec
from .model import HierarchicalModel
from .numerics import autodiff as ad
from .optim import AdamW, cosine_lr

log = logging.getLogger(__name__)

SELECTION_METRICS = ("mf1", "oa")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    level_weights: Optional[tuple] = None
    hc_weight: float = 1.0
    multi_level: bool = True
    hc_loss: bool = True
    hc_inference: bool = True
    # "auto": uniform when the consensus loss trains the matrices, else the user-defined tree
    joint_init: str = "auto"
    seed: int = 0
    selection_metric: str = "mf1"
    selection_level: Optional[int] = None

    def validate(self, num_levels: Optional[int] = None):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.lr > 0 or self.weight_decay < 0 or not self.eps > 0:
            raise ValueError("lr and eps must be > 0, weight_decay >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.hc_weight < 0:
            raise ValueError("hc_weight must be >= 0")
        if self.joint_init not in ("auto", "uniform", "indicator"):
            raise ValueError(f"unknown joint_init {self.joint_init!r}")
        if self.selection_metric not in SELECTION_METRICS:
            raise ValueError(f"selection_metric must be one of {SELECTION_METRICS}")
        if (self.hc_loss or self.hc_inference) and not self.multi_level:
            raise ValueError("consensus training/inference needs multi_level heads")
        if num_levels is not None:
            if self.level_weights is not None and len(self.level_weights) != num_levels:
                raise ValueError(f"{len(self.level_weights)} level weights for {num_levels} levels")
            if self.selection_level is not None and not 1 <= self.selection_level <= num_levels:
                raise ValueError(f"selection_level {self.selection_level} outside 1..{num_levels}")

    def loss_weights(self, num_levels: int) -> LossWeights:
        level = self.level_weights if self.level_weights is not None else default_level_weights(num_levels)
        return LossWeights(tuple(level), self.hc_weight)

    def effective_joint_init(self) -> str:
        if self.joint_init != "auto":
            return self.joint_init
        return "uniform" if self.hc_loss else "indicator"

    @property
    def inference_mode(self) -> str:
        if not self.multi_level:
            return "flat"
        return "consensus" if self.hc_inference else "fine_head"

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["level_weights"] is not None:
            d["level_weights"] = list(d["level_weights"])
        return d


@dataclass
class TrainResult:
    model: HierarchicalModel
    best_epoch: int
    best_state: dict
    history: list = field(default_factory=list)


def evaluate(model: HierarchicalModel, samples: SampleSet, mode: str = "consensus") -> dict:
    preds = model.predict(samples.x, mode)
    report = metrics.metrics_report(samples.y, preds, model.spec.sizes)
    report["inference"] = mode
    report["n"] = len(samples)
    return report


def _selection_score(report: dict, config: TrainConfig, num_levels: int) -> float:
    level = config.selection_level or num_levels
    return report["levels"][level - 1][config.selection_metric]


def train(model: HierarchicalModel, train_set: SampleSet, val_set: SampleSet,
          config: TrainConfig) -> TrainResult:
    """Optimize ``model`` in place; on return it holds the best validation checkpoint."""
    H = model.num_levels
    config.validate(H)
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if train_set.y.shape[1] != H:
        raise ValueError(f"dataset has {train_set.y.shape[1]} label levels, model has {H}")
    weights = config.loss_weights(H)
    opt = AdamW(config.weight_decay, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng([config.seed, 1])
    named = model.named_parameters()
    params = [p for _, p in named]
    n = len(train_set)
    steps_per_epoch = -(-n // config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    mode = config.inference_mode

    history, best_score, best_epoch, best_state = [], -np.inf, -1, None
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = None
        for k in range(steps_per_epoch):
            idx = order[k * config.batch_size:(k + 1) * config.batch_size]
            try:
                bd = model.loss(ad.Tensor(train_set.x[idx]), train_set.y[idx], weights,
                                multi_level=config.multi_level, hc_loss=config.hc_loss)
                grads = ad.backward(bd.total, params)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"non-finite value at epoch {epoch}, step {step}: {exc}") from exc
            if not np.isfinite(bd.total.data):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}: {bd.as_floats()}")
            lr = cosine_lr(config.lr, step, total_steps)
            opt.step(named, grads, lr)
            step += 1
            vals = bd.as_floats()
            w = len(idx) / n
            if sums is None:
                sums = {"cce": 0.0, "hc": 0.0 if vals["hc"] is not None else None, "total": 0.0,
                        "cce_per_level": [0.0] * H}
            sums["cce"] += w * vals["cce"]
            sums["total"] += w * vals["total"]
            if sums["hc"] is not None:
                sums["hc"] += w * vals["hc"]
            sums["cce_per_level"] = [a + w * b for a, b in zip(sums["cce_per_level"], vals["cce_per_level"])]

        val_report = evaluate(model, val_set, mode)
        score = _selection_score(val_report, config, H)
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": sums,
            "val": {
                "oa": [lv["oa"] for lv in val_report["levels"]],
                "mf1": [lv["mf1"] for lv in val_report["levels"]],
            },
        }
        history.append(record)
        if score >= best_score:
            best_score, best_epoch, best_state = score, epoch, model.state()
        log.debug("epoch %d loss %.6f val %s %.4f", epoch, sums["total"], config.selection_metric, score)

    model.load_state(best_state)
    return TrainResult(model, best_epoch, best_state, history)


def run_once(spec: HierarchySpec, backbone: BackboneConfig, datasets: dict, config: TrainConfig,
             head_hidden=()) -> tuple:
    """Create, train and evaluate one seeded model. Returns (TrainResult, JSON-ready report)."""
    config.validate(spec.num_levels)
    model = HierarchicalModel.create(spec, backbone, config.seed, head_hidden, config.effective_joint_init())
    result = train(model, datasets["train"], datasets["val"], config)
    mode = config.inference_mode
    report = {
        "seed": config.seed,
        "config": config.to_dict(),
        "inference": mode,
        "best_epoch": result.best_epoch,
        "history": result.history,
        "final": {
            split: evaluate(model, datasets[split], mode)
            for split in ("val", "test") if split in datasets and len(datasets[split])
        },
    }
    return result, report


def summarize(reports: list, split: str = "test") -> dict:
    """Mean and unbiased std of per-level OA and mF1 across seeded run reports."""
    H = len(reports[0]["final"][split]["levels"])
    out = {"seeds": [r["seed"] for r in reports], "split": split, "levels": []}
    for h in range(H):
        out["levels"].append({
            key: metrics.aggregate([r["final"][split]["levels"][h][key] for r in reports])
            for key in ("oa", "mf1")
        })
    return out
