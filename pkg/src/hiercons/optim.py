"""AdamW updates and cosine learning-rate decay."""

import math
from dataclasses import dataclass, field

import numpy as np


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """``base_lr * (1 + cos(pi * step / total_steps)) / 2``."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside 0..{total_steps}")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def decays(name: str) -> bool:
    """Weight decay applies to weight matrices only, never biases or log-joint matrices."""
    return name.endswith(".weight")


@dataclass
class AdamWState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


@dataclass
class AdamW:
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: AdamWState = field(default_factory=AdamWState)

    def step(self, named_params: list, grads: list, lr: float):
        """In-place update of ``(name, Tensor)`` pairs given matching gradient arrays."""
        if len(named_params) != len(grads):
            raise ValueError("parameter and gradient lists differ in length")
        st = self.state
        st.t += 1
        bc1 = 1.0 - self.beta1 ** st.t
        bc2 = 1.0 - self.beta2 ** st.t
        for (name, p), g in zip(named_params, grads):
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} does not match {name} {p.data.shape}")
            m = st.m.get(name)
            if m is None:
                m = st.m[name] = np.zeros_like(p.data)
                st.v[name] = np.zeros_like(p.data)
            v = st.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay and decays(name):
                p.data = p.data * (1.0 - lr * self.weight_decay)
            p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
