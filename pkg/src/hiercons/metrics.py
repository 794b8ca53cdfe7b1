"""Overall accuracy and macro-F1 from confusion matrices."""

import numpy as np


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    denom = 2 * tp + (cm.sum(axis=0) - tp) + (cm.sum(axis=1) - tp)
    # classes never predicted and never present score 0
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def overall_accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    return float(np.trace(cm) / total) if total else 0.0


def level_report(y_true, y_pred, num_classes: int) -> dict:
    cm = confusion_matrix(y_true, y_pred, num_classes)
    f1 = per_class_f1(cm)
    return {
        "oa": overall_accuracy(cm),
        "mf1": float(f1.mean()),
        "per_class_f1": f1.tolist(),
        "confusion": cm.tolist(),
    }


def metrics_report(y_true, y_pred, sizes) -> dict:
    """Per-level report for (n, H) label and prediction arrays."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    return {
        "levels": [
            level_report(y_true[:, h], y_pred[:, h], k) for h, k in enumerate(sizes)
        ]
    }


def aggregate(values) -> dict:
    """Mean and unbiased standard deviation across runs."""
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std, "n": int(arr.size)}
