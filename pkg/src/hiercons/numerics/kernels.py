"""Log-domain probability kernels on plain numpy arrays.

Every function reduces over the last axis, so a single vector and a
batch of row vectors are handled the same way.
"""

import numpy as np

# Probability mass at or below this value contributes nothing to a KL term (0 * log 0 := 0).
PROB_FLOOR = 1e-12
LOG2 = float(np.log(2.0))


def _as_float(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64)


def lse(v, axis: int = -1, keepdims: bool = False) -> np.ndarray:
    """Max-shifted log-sum-exp along ``axis``."""
    v = _as_float(v)
    if v.size == 0 or v.shape[axis] == 0:
        raise ValueError("lse of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    if not keepdims:
        out = np.squeeze(out, axis=axis)
    return out


def softmax(g) -> np.ndarray:
    g = _as_float(g)
    return np.exp(g - lse(g, keepdims=True))


def log_softmax(g) -> np.ndarray:
    g = _as_float(g)
    return g - lse(g, keepdims=True)


def log_row_normalize(L) -> np.ndarray:
    """Subtract each row's log-sum-exp so every row exponentiates to a distribution."""
    L = _as_float(L)
    if L.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {L.shape}")
    return L - lse(L, axis=1, keepdims=True)


def log_matmul(a, b) -> np.ndarray:
    """``log(exp(a) @ exp(b))`` without leaving the log domain.

    ``a`` is (n, k) or (k,), ``b`` is (k, m).
    """
    a = _as_float(a)
    b = _as_float(b)
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"log_matmul shape mismatch {a.shape} x {b.shape}")
    return lse(a[..., :, None] + b, axis=-2)


def _check_same(log_p, log_q):
    if log_p.shape != log_q.shape:
        raise ValueError(f"distributions have mismatched shapes {log_p.shape} vs {log_q.shape}")


def kld(log_p, log_q) -> np.ndarray:
    """KL(p || q) in nats, from log-probabilities."""
    log_p = _as_float(log_p)
    log_q = _as_float(log_q)
    _check_same(log_p, log_q)
    p = np.exp(log_p)
    keep = p > PROB_FLOOR
    with np.errstate(invalid="ignore"):
        terms = np.where(keep, p * (log_p - log_q), 0.0)
    return np.sum(terms, axis=-1)


def log_mixture(log_a, log_b) -> np.ndarray:
    """Log of the equal-weight mixture (a + b) / 2."""
    return np.logaddexp(log_a, log_b) - LOG2


def jsd(log_a, log_b) -> np.ndarray:
    """Jensen-Shannon divergence in nats; lies in [0, log 2]."""
    log_a = _as_float(log_a)
    log_b = _as_float(log_b)
    _check_same(log_a, log_b)
    log_m = log_mixture(log_a, log_b)
    # rounding can leave a -1e-17 residue on identical inputs
    return np.maximum(0.5 * kld(log_a, log_m) + 0.5 * kld(log_b, log_m), 0.0)
