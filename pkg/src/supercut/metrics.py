"""Region-based segmentation metrics: covering, Rand index, variation of information.

All three are computed from one contingency table of overlap counts, so
they cost O(N + M_seg * M_gt).
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import StructuralError
from .superpixels import compact_labels


@dataclass
class ConfusionTable:
    counts: np.ndarray  # (M_seg, M_gt) int64

    @property
    def n(self):
        return int(self.counts.sum())

    @property
    def seg_sizes(self):
        return self.counts.sum(axis=1)

    @property
    def gt_sizes(self):
        return self.counts.sum(axis=0)


def confusion_table(seg, gt):
    seg = np.asarray(seg)
    gt = np.asarray(gt)
    if seg.shape != gt.shape:
        raise StructuralError(f"segmentation is {seg.shape}, ground truth is {gt.shape}")
    if seg.size == 0:
        raise StructuralError("empty label maps")
    a, na = compact_labels(seg)
    b, nb = compact_labels(gt)
    return ConfusionTable(kernels.contingency(a, b, na, nb))


def segmentation_covering(seg, gt):
    """Size-weighted best-IoU covering of ``gt``'s regions by ``seg``'s."""
    t = confusion_table(seg, gt)
    inter = t.counts.astype(np.float64)
    union = t.seg_sizes[:, None] + t.gt_sizes[None, :] - inter
    best = (inter / union).max(axis=0)
    return float((t.gt_sizes * best).sum() / t.n)


def _pairs(x):
    x = np.asarray(x, dtype=np.int64)
    return int((x * (x - 1) // 2).sum())


def rand_index(seg, gt):
    """Fraction of unordered pixel pairs on which the two maps agree."""
    t = confusion_table(seg, gt)
    n = t.n
    total = n * (n - 1) // 2
    if total == 0:
        return 1.0
    disagree = _pairs(t.seg_sizes) + _pairs(t.gt_sizes) - 2 * _pairs(t.counts)
    return (total - disagree) / total


def probabilistic_rand_index(seg, gts):
    """Mean Rand index of ``seg`` against each ground truth in ``gts``."""
    if isinstance(gts, np.ndarray) and gts.ndim == 2:
        gts = [gts]
    gts = list(gts)
    if not gts:
        raise StructuralError("at least one ground truth is required")
    return float(np.mean([rand_index(seg, g) for g in gts]))


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def variation_of_information(seg, gt):
    """``H(seg) + H(gt) - 2 I(seg; gt)`` in nats."""
    t = confusion_table(seg, gt)
    n = t.n
    h_seg = _entropy(t.seg_sizes, n)
    h_gt = _entropy(t.gt_sizes, n)
    h_joint = _entropy(t.counts.ravel(), n)
    # I = H(a) + H(b) - H(a, b)  =>  VI = 2 H(a, b) - H(a) - H(b)
    return max(0.0, 2.0 * h_joint - h_seg - h_gt)


def evaluate(seg, gts):
    """SC, PRI and VI of one segmentation against one or more ground truths.

    SC and VI are averaged over the ground truths.
    """
    if isinstance(gts, np.ndarray) and gts.ndim == 2:
        gts = [gts]
    gts = list(gts)
    if not gts:
        raise StructuralError("at least one ground truth is required")
    return {
        "SC": float(np.mean([segmentation_covering(seg, g) for g in gts])),
        "PRI": probabilistic_rand_index(seg, gts),
        "VI": float(np.mean([variation_of_information(seg, g) for g in gts])),
    }


def ods_ois(scores, better="higher"):
    """Dataset-best and image-best aggregation of an (images x parameters) matrix.

    Returns ``(ods, ods_param_index, ois)``. Ties between parameters go to the
    lowest index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.size == 0:
        raise StructuralError(f"need a non-empty 2-D score matrix, got shape {scores.shape}")
    if better not in ("higher", "lower"):
        raise StructuralError(f"better must be 'higher' or 'lower', got {better!r}")
    col_means = scores.mean(axis=0)
    if better == "higher":
        idx = int(np.argmax(col_means))
        per_image = scores.max(axis=1)
    else:
        idx = int(np.argmin(col_means))
        per_image = scores.min(axis=1)
    return float(col_means[idx]), idx, float(per_image.mean())
