"""Classification metrics and the attention-localization score.

Confusion matrices are plain integer arrays with rows = ground truth and
columns = prediction, carried alongside a class-name list where labels
matter for rendering.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence

import numpy as np

__all__ = [
    "confusion_matrix",
    "mca",
    "mpca",
    "merged_mca",
    "attention_localization",
    "render_confusion",
]


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int],
                     n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred length mismatch")
    if y_true.size and (y_true.min() < 0 or y_true.max() >= n_classes):
        raise ValueError("ground-truth label out of range")
    if y_pred.size and (y_pred.min() < 0 or y_pred.max() >= n_classes):
        raise ValueError("predicted label out of range")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _check_cm(cm: np.ndarray) -> np.ndarray:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if (cm < 0).any():
        raise ValueError("confusion matrix has negative counts")
    return cm


def mca(cm: np.ndarray) -> float:
    """Overall accuracy: correctly classified fraction of all samples."""
    cm = _check_cm(cm)
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm) / total)


def mpca(cm: np.ndarray) -> float:
    """Mean of per-class recalls; classes with no ground-truth samples are skipped."""
    cm = _check_cm(cm)
    row_sums = cm.sum(axis=1)
    present = row_sums > 0
    if not present.any():
        raise ValueError("confusion matrix has no populated ground-truth rows")
    recalls = np.diag(cm)[present] / row_sums[present]
    return float(recalls.mean())


def merged_mca(cm: np.ndarray, merge: Dict[int, int]) -> float:
    """Accuracy after folding classes together through a surjective map."""
    cm = _check_cm(cm)
    n = cm.shape[0]
    for c in range(n):
        if c not in merge:
            raise ValueError(f"merge map missing class {c}")
    targets = sorted({merge[c] for c in range(n)})
    remap = {t: i for i, t in enumerate(targets)}
    m = len(targets)
    folded = np.zeros((m, m), dtype=cm.dtype)
    for i in range(n):
        for j in range(n):
            folded[remap[merge[i]], remap[merge[j]]] += cm[i, j]
    return mca(folded)


def attention_localization(att: np.ndarray, key_masks: np.ndarray) -> float:
    """Mean attention mass landing inside the key-actor masks.

    att: (T, HW) rows summing to 1; key_masks: (T, HW) in {0, 1}. Frames
    whose mask is empty (no cell reaches the key threshold) are skipped
    rather than scored 0 — same convention as mpca with absent classes.
    """
    att = np.asarray(att, dtype=np.float64)
    key_masks = np.asarray(key_masks, dtype=np.float64)
    if att.shape != key_masks.shape:
        raise ValueError(f"att {att.shape} vs masks {key_masks.shape}")
    if att.ndim != 2:
        raise ValueError("expected (T, HW) arrays")
    keep = key_masks.any(axis=1)
    if not keep.any():
        return 0.0
    return float((att[keep] * key_masks[keep]).sum(axis=1).mean())


def render_confusion(cm: np.ndarray, names: Optional[List[str]] = None) -> str:
    """Plain-text table, rows labeled by class name."""
    cm = _check_cm(cm)
    n = cm.shape[0]
    if names is None:
        names = [f"class{i}" for i in range(n)]
    if len(names) != n:
        raise ValueError("name list length mismatch")
    label_w = max(len(s) for s in names)
    cell_w = max(5, len(str(int(cm.max()))) if cm.size else 1)
    header = " " * (label_w + 2) + " ".join(f"{s[:cell_w]:>{cell_w}}" for s in names)
    lines = [header]
    for i in range(n):
        row = " ".join(f"{int(v):>{cell_w}}" for v in cm[i])
        lines.append(f"{names[i]:<{label_w}}  {row}")
    return "\n".join(lines)
