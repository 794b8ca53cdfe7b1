"""Central finite-difference checks for every differentiable op and for a full model loss."""

from dataclasses import dataclass

import numpy as np

from .consensus import LossWeights
from .heads import BackboneConfig
from .hierarchy import balanced_hierarchy, lift_labels
from .model import HierarchicalModel
from .numerics import autodiff as ad
from .numerics.autodiff import Tensor

STEP = 1e-5
RTOL = 1e-5
ATOL = 1e-8


def relative_error(analytic, numeric, rtol: float = RTOL, atol: float = ATOL) -> float:
    """Largest ``|a - n| / max(|a|, |n|, atol / rtol)``; at most ``rtol`` means every entry passes.

    An entry passes when it is within ``rtol`` relatively or ``atol`` absolutely.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), atol / rtol)
    return float(np.max(np.abs(a - n) / scale))


def numeric_grad(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. ``x``, perturbed in place."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return g


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    passed: bool

    def as_dict(self) -> dict:
        return {"name": self.name, "max_rel_error": self.max_rel_error, "passed": self.passed}


def _op_cases(rng: np.random.Generator) -> dict:
    """op name -> (forward on Tensors, list of input arrays)."""
    r = lambda *shape: rng.normal(size=shape)
    return {
        "add": (lambda a, b: ad.add(a, b), [r(3, 4), r(4)]),
        "sub": (lambda a, b: ad.sub(a, b), [r(3, 4), r(3, 1)]),
        "neg": (lambda a: ad.neg(a), [r(3, 4)]),
        "scale": (lambda a: ad.scale(a, -1.7), [r(3, 4)]),
        "mul": (lambda a, b: ad.mul(a, b), [r(3, 4), r(3, 4)]),
        "matmul": (lambda a, b: ad.matmul(a, b), [r(3, 4), r(4, 2)]),
        "transpose": (lambda a: ad.transpose(a), [r(3, 4)]),
        "exp": (lambda a: ad.exp(a), [r(3, 4)]),
        "log": (lambda a: ad.log(a), [rng.uniform(0.5, 2.0, size=(3, 4))]),
        "tanh": (lambda a: ad.tanh(a), [r(3, 4)]),
        "softplus": (lambda a: ad.softplus(a), [r(3, 4)]),
        "gather_rows": (lambda a: ad.gather_rows(a, [2, 0, 2, 1]), [r(3, 4)]),
        "pick": (lambda a: ad.pick(a, [1, 3, 0]), [r(3, 4)]),
        "concat": (lambda a, b: ad.concat([a, b], axis=1), [r(3, 4), r(3, 2)]),
        "lse": (lambda a: ad.lse(a, axis=-1), [r(3, 4) * 3]),
        "log_matmul": (lambda a, b: ad.log_matmul(a, b), [r(3, 4) * 2, r(4, 5) * 2]),
        "logaddexp": (lambda a, b: ad.logaddexp(a, b), [r(3, 4), r(3, 4)]),
        "sum": (lambda a: ad.sum(a, axis=0), [r(3, 4)]),
        "mean": (lambda a: ad.mean(a, axis=1), [r(3, 4)]),
    }


def check_op(name: str, forward, inputs: list, rng: np.random.Generator) -> CheckResult:
    """Vector-Jacobian check of a single op's backward rule against central differences."""
    tensors = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    out = forward(*tensors)
    upstream = rng.normal(size=out.shape)
    for t in tensors:
        t.grad = np.zeros_like(t.data)
    out._backward(upstream)
    worst = 0.0
    for t in tensors:
        probe = [Tensor(u.data) for u in tensors]
        target = probe[tensors.index(t)]
        f = lambda: float(np.sum(forward(*probe).data * upstream))
        worst = max(worst, relative_error(t.grad, numeric_grad(f, target.data)))
    return CheckResult(name, worst, worst <= RTOL)


def check_ops(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    return [check_op(name, fwd, inputs, rng) for name, (fwd, inputs) in _op_cases(rng).items()]


def toy_problem(seed: int = 0, sizes=(2, 3, 5), input_dim: int = 6, feature_dim: int = 8, batch: int = 4):
    """A random 3-level model with non-uniform log-joint matrices, a batch, and loss weights."""
    rng = np.random.default_rng(seed)
    spec = balanced_hierarchy(sizes)
    model = HierarchicalModel.create(spec, BackboneConfig(input_dim, feature_dim, (7,)), seed)
    for name, p in model.named_parameters():
        if name.endswith(".bias") or name.startswith("joint."):
            p.data = rng.normal(size=p.data.shape)
    x = rng.normal(size=(batch, input_dim))
    y = lift_labels(spec, rng.integers(spec.size(spec.num_levels), size=batch))
    weights = LossWeights(tuple(rng.uniform(0.2, 1.0, size=len(sizes))), float(rng.uniform(0.5, 2.0)))
    return model, x, y, weights


def check_model(seed: int = 0) -> list:
    """Per-parameter-group max relative error of the full training loss."""
    model, x, y, weights = toy_problem(seed)
    named = model.named_parameters()
    loss = model.loss(Tensor(x), y, weights)
    grads = ad.backward(loss.total, [p for _, p in named])
    f = lambda: float(model.loss(Tensor(x), y, weights).total.data)
    results = []
    for (name, p), g in zip(named, grads):
        err = relative_error(g, numeric_grad(f, p.data))
        results.append(CheckResult(name, err, err <= RTOL))
    return results


def run_gradcheck(seed: int = 0, trials: int = 1) -> dict:
    """Run op-level and model-level checks for ``trials`` consecutive seeds."""
    op_worst, group_worst = {}, {}
    for t in range(trials):
        for res in check_ops(seed + t):
            op_worst[res.name] = max(op_worst.get(res.name, 0.0), res.max_rel_error)
        for res in check_model(seed + t):
            group_worst[res.name] = max(group_worst.get(res.name, 0.0), res.max_rel_error)
    ops = [{"name": k, "max_rel_error": v, "passed": v <= RTOL} for k, v in op_worst.items()]
    groups = [{"name": k, "max_rel_error": v, "passed": v <= RTOL} for k, v in group_worst.items()]
    failed_ops = [o["name"] for o in ops if not o["passed"]]
    return {
        "seed": seed,
        "trials": trials,
        "step": STEP,
        "rtol": RTOL,
        "atol": ATOL,
        "ops": ops,
        "parameters": groups,
        "failed_ops": failed_ops,
        "passed": not failed_ops and all(g["passed"] for g in groups),
    }
