"""Deep superpixel cut: soft partitioning of superpixels by gradient descent.

Each iteration turns the per-pixel embedding ``F`` (N x K) into class
probabilities ``P``, votes a pseudo-label per superpixel, pools ``F`` and
``P`` per superpixel into ``G`` and ``Q``, builds a spatially gated Gaussian
affinity ``W`` between superpixels, and takes one SGD step on
``alpha * cross_entropy + beta * soft_cut``.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, StructuralError
from .nn import functional as Fn
from .nn.optim import SGD
from .params import HyperParams
from .superae import to_nchw
from .superpixels import check_label_map, compact_labels, region_stats

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class PseudoLabels:
    pixel_class: np.ndarray  # (N,) argmax class per pixel
    region_class: np.ndarray  # (M,) majority class per superpixel
    onehot: np.ndarray  # (N, K)

    def segmentation(self, shape):
        return self.onehot.argmax(axis=1).reshape(shape)


@dataclass
class DSCResult:
    segmentation: np.ndarray  # (H, W) partition index per pixel
    pseudo_labels: PseudoLabels
    losses: np.ndarray  # (T, 3): cross-entropy, cut, weighted total


def _flat_labels(labels):
    labels = np.asarray(labels)
    return labels.ravel().astype(np.int64), check_label_map(labels) if labels.ndim == 2 else int(labels.max()) + 1


def standardize_embedding(feat, eps=1e-5):
    """Zero-mean, unit-variance columns of an (N, K) embedding.

    Returns ``(z, inv_std)``; ``inv_std`` is what the backward pass needs.
    Without this the logits carry a large per-channel offset that lets one
    class absorb the rest within a few iterations.
    """
    feat = np.asarray(feat, dtype=np.float64)
    centred = feat - feat.mean(axis=0)
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=0) + eps)
    return centred * inv_std, inv_std


def standardize_embedding_backward(grad, z, inv_std):
    """Batch-norm style backward of :func:`standardize_embedding`."""
    g_mean = grad.mean(axis=0)
    gz_mean = (grad * z).mean(axis=0)
    return inv_std * (grad - g_mean - z * gz_mean)


def compute_probabilities(feat):
    """Row-wise softmax of an (N, K) embedding."""
    return Fn.softmax(np.asarray(feat, dtype=np.float64), axis=1)


def generate_pseudo_labels(prob, labels):
    """Per-pixel argmax, then a majority vote inside every superpixel.

    Both argmax steps break ties toward the lowest class index.
    """
    flat, m = _flat_labels(labels)
    n, k = prob.shape
    if flat.size != n:
        raise StructuralError(f"label map has {flat.size} pixels, probabilities have {n}")
    pixel_class = np.argmax(prob, axis=1)
    votes = np.bincount(flat * k + pixel_class, minlength=m * k).reshape(m, k)
    region_class = np.argmax(votes, axis=1)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), region_class[flat]] = 1.0
    return PseudoLabels(pixel_class, region_class, onehot)


def cross_entropy_loss(prob, target):
    """Summed cross-entropy and its gradient w.r.t. the logits behind ``prob``.

    ``target`` is a :class:`PseudoLabels` or an (N, K) one-hot array.
    """
    y = target.onehot if isinstance(target, PseudoLabels) else np.asarray(target, dtype=np.float64)
    loss = -float((y * np.log(np.maximum(prob, PROB_FLOOR))).sum())
    return loss, prob - y


def region_mean(values, labels):
    """(M, K) per-superpixel mean of an (N, K) array."""
    flat, m = _flat_labels(labels)
    sizes = np.bincount(flat, minlength=m).astype(np.float64)
    sums = np.zeros((m, values.shape[1]))
    np.add.at(sums, flat, values)
    return sums / sizes[:, None]


def region_mean_backward(grad, labels):
    """Scatter an (M, K) gradient back to pixels: ``d g_j / d f_i = z_ij / |S_j|``."""
    flat, m = _flat_labels(labels)
    sizes = np.bincount(flat, minlength=m).astype(np.float64)
    return grad[flat] / sizes[flat, None]


def pool_superpixel_features(feat, labels):
    return region_mean(np.asarray(feat, dtype=np.float64), labels)


def compute_association(prob, labels):
    return region_mean(np.asarray(prob, dtype=np.float64), labels)


def build_similarity(pooled, centers, sigma, d):
    """``w_ij = exp(-|g_i - g_j|^2 / sigma^2)`` for centres closer than ``d``, else 0."""
    if sigma <= 0 or d <= 0:
        raise StructuralError("sigma and d must be positive")
    g = np.asarray(pooled, dtype=np.float64)
    sq = (g * g).sum(axis=1)
    dist2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * g @ g.T, 0.0)
    c = np.asarray(centers, dtype=np.float64)
    cdist = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(-1))
    w = np.where(cdist < d, np.exp(-dist2 / (sigma * sigma)), 0.0)
    # the Gram-matrix route can leave the two halves a rounding error apart
    return 0.5 * (w + w.T)


def cut_loss(assoc, weights):
    """``sum_k Q_k^T W (1 - Q_k)`` and its gradient ``W 1 - 2 W Q_k`` (symmetric W)."""
    q = np.asarray(assoc, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (q.shape[0], q.shape[0]):
        raise StructuralError(f"W is {w.shape}, Q has {q.shape[0]} rows")
    wq = w @ q
    loss = float((q * (w.sum(axis=1, keepdims=True) - wq)).sum())
    grad = w.sum(axis=1, keepdims=True) - 2.0 * wq
    return loss, grad


def dsc_objective(feat, labels, centers, hp, d, beta, frozen=None):
    """Loss and (N, K) gradient of ``alpha * L1 + beta * L2`` at one embedding.

    The pseudo-labels and the affinity matrix act as constants. They are
    computed from ``feat`` unless ``frozen=(pseudo_labels, W)`` is given.
    Returns ``(total, l1, l2, grad, pseudo_labels, W)``.
    """
    prob = compute_probabilities(feat)
    if frozen is None:
        pseudo = generate_pseudo_labels(prob, labels)
        w = build_similarity(pool_superpixel_features(feat, labels), centers, hp.sigma, d)
    else:
        pseudo, w = frozen
    l1, g1 = cross_entropy_loss(prob, pseudo)
    q = compute_association(prob, labels)
    l2, gq = cut_loss(q, w)
    g2 = Fn.softmax_backward(region_mean_backward(gq, labels), prob, axis=1)
    total = hp.alpha * l1 + beta * l2
    return total, l1, l2, hp.alpha * g1 + beta * g2, pseudo, w


def run_dsc(model, image, labels, hp=None):
    """Partition the superpixels of ``image`` by optimising ``model`` in place.

    Only the encoder and the feature head are updated. Batch norm runs on the
    image's own statistics throughout. With ``hp.standardize`` the embedding
    is standardised per channel before the softmax.
    """
    hp = HyperParams() if hp is None else hp
    hp.validate()
    if model.k != hp.k:
        raise StructuralError(f"model has {model.k} feature channels, hyperparameters ask for k={hp.k}")
    image = np.asarray(image, dtype=np.float64)
    labels, m = compact_labels(labels)
    h, w = labels.shape
    if image.shape[:2] != (h, w):
        raise StructuralError(f"image is {image.shape[:2]}, superpixel map is {(h, w)}")
    d, beta = hp.resolve(h * w, m)
    centers = region_stats(image, labels).centers
    x = to_nchw(image)
    opt = SGD({**model.encoder_params(), **model.head_params()}, lr=hp.lr, momentum=hp.momentum)
    losses = np.zeros((hp.t, 3))

    def embed():
        feat = np.ascontiguousarray(model.features(x, training=True)[0].reshape(hp.k, -1).T)
        if hp.standardize:
            return standardize_embedding(feat)
        return feat, None

    for it in range(hp.t):
        feat, inv_std = embed()
        total, l1, l2, grad, _, _ = dsc_objective(feat, labels, centers, hp, d, beta)
        if not np.isfinite(total):
            raise NumericError(f"cut loss became non-finite at iteration {it + 1}")
        losses[it] = (l1, l2, total)
        if inv_std is not None:
            grad = standardize_embedding_backward(grad, feat, inv_std)
        model.zero_grad()
        model.backward_features(np.ascontiguousarray(grad.T).reshape(1, hp.k, h, w))
        opt.step()
        log.debug("iter %d  L1 %.6g  L2 %.6g", it + 1, l1, l2)

    pseudo = generate_pseudo_labels(compute_probabilities(embed()[0]), labels)
    return DSCResult(pseudo.segmentation((h, w)), pseudo, losses)
