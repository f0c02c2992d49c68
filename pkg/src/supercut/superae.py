"""Superpixelwise autoencoder: network, template-regularised loss and training.

Images are (H, W, C) float arrays in [0, 1] at this module's boundary; the
network itself works on NCHW batches.
"""
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from . import nn
from .errors import NumericError, StructuralError
from .nn import functional as F
from .nn.layers import Conv2d, ConvBlock
from .nn.optim import Adam
from .superpixels import check_label_map, compact_labels

log = logging.getLogger(__name__)


def to_nchw(images):
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


def from_nchw(batch):
    return np.ascontiguousarray(batch.transpose(0, 2, 3, 1))


class SuperAE:
    """Three encoder blocks, three decoder blocks and a 1x1 feature head.

    Encoder blocks 2 and 3 halve the resolution; decoder blocks 4 and 5
    double it back with transposed convolutions, targeting the sizes seen on
    the way down so odd sizes round-trip. The feature head maps
    ``[x, up(e1), up(e2), up(e3)]`` to ``k`` channels.
    """

    def __init__(self, widths=(64, 128, 256), k=32, in_channels=3, seed=0):
        c1, c2, c3 = widths
        rng = np.random.default_rng(seed)
        self.widths, self.k, self.in_channels = tuple(int(c) for c in widths), int(k), int(in_channels)
        self.enc1 = ConvBlock(in_channels, c1, stride=1, rng=rng)
        self.enc2 = ConvBlock(c1, c2, stride=2, rng=rng)
        self.enc3 = ConvBlock(c2, c3, stride=2, rng=rng)
        self.dec4 = ConvBlock(c3, c2, stride=2, transpose=True, rng=rng)
        self.dec5 = ConvBlock(c2, c1, stride=2, transpose=True, rng=rng)
        self.dec6 = Conv2d(c1, in_channels, 3, 1, 1, rng=rng)
        self.head = Conv2d(in_channels + c1 + c2 + c3, k, 1, 1, 0, rng=rng)
        self._sizes = None
        self._enc_out = None
        self._x = None
        self._out = None

    # -- parameter groups ---------------------------------------------------

    def _group(self, names):
        out = {}
        for name in names:
            for pname, p in getattr(self, name).params().items():
                out[f"{name}.{pname}"] = p
        return out

    def encoder_params(self):
        return self._group(("enc1", "enc2", "enc3"))

    def decoder_params(self):
        return self._group(("dec4", "dec5", "dec6"))

    def head_params(self):
        return self._group(("head",))

    def params(self):
        return self._group(("enc1", "enc2", "enc3", "dec4", "dec5", "dec6", "head"))

    def buffers(self):
        out = {}
        for name in ("enc1", "enc2", "enc3", "dec4", "dec5"):
            for bname, b in getattr(self, name).buffers().items():
                out[f"{name}.{bname}"] = b
        return out

    def zero_grad(self):
        for p in self.params().values():
            p.zero_grad()

    # -- forward / backward -------------------------------------------------

    def encode(self, x, training=True):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise StructuralError(f"expected (B, {self.in_channels}, H, W) input, got {x.shape}")
        self._x = x
        h1 = self.enc1.forward(x, training)
        h2 = self.enc2.forward(h1, training)
        h3 = self.enc3.forward(h2, training)
        self._sizes = (h1.shape[2:], h2.shape[2:])
        self._enc_out = (h1, h2, h3)
        return h1, h2, h3

    def decode(self, h3, training=True):
        s1, s2 = self._sizes
        h = self.dec4.forward(h3, training, output_size=s2)
        h = self.dec5.forward(h, training, output_size=s1)
        self._out = F.sigmoid(self.dec6.forward(h))
        return self._out

    def reconstruct(self, x, training=True):
        return self.decode(self.encode(x, training)[2], training)

    def backward_encoder(self, g1, g2, g3):
        g2 = g2 + self.enc3.backward(g3)
        g1 = g1 + self.enc2.backward(g2)
        return self.enc1.backward(g1)

    def backward_reconstruction(self, g_out):
        g = F.sigmoid_backward(g_out, self._out)
        g = self.dec6.backward(g)
        g = self.dec5.backward(g)
        g3 = self.dec4.backward(g)
        h1, h2, _ = self._enc_out
        return self.backward_encoder(np.zeros_like(h1), np.zeros_like(h2), g3)

    def features(self, x, training=True):
        """(B, k, H, W) deep embedding."""
        h1, h2, h3 = self.encode(x, training)
        hgt, wid = x.shape[2:]
        parts = [x, h1, F.bilinear_upsample(h2, hgt, wid), F.bilinear_upsample(h3, hgt, wid)]
        return self.head.forward(F.concat_channels(parts))

    def backward_features(self, g_feat):
        g = self.head.backward(g_feat)
        h1, h2, h3 = self._enc_out
        gx, g1, g2, g3 = F.concat_channels_backward(g, [self.in_channels, h1.shape[1], h2.shape[1], h3.shape[1]])
        g2 = F.bilinear_upsample_backward(g2, h2.shape)
        g3 = F.bilinear_upsample_backward(g3, h3.shape)
        return gx + self.backward_encoder(g1, g2, g3)

    # -- persistence ----------------------------------------------------------

    def state_arrays(self):
        arrays = {f"param.{k}": p.data for k, p in self.params().items()}
        arrays.update({f"buffer.{k}": b for k, b in self.buffers().items()})
        return arrays

    def save(self, path):
        meta = {"widths": list(self.widths), "k": self.k, "in_channels": self.in_channels}
        nn.save_arrays(path, self.state_arrays(), meta)

    @classmethod
    def load(cls, path, k=None, seed=0):
        """Load a checkpoint; a different ``k`` re-initialises only the head (from ``seed``)."""
        arrays, meta = nn.load_arrays(path)
        stored_k = int(meta["k"])
        model = cls(tuple(meta["widths"]), stored_k, int(meta.get("in_channels", 3)))
        model.load_state(arrays)
        if k is not None and int(k) != stored_k:
            fresh = cls(model.widths, int(k), model.in_channels, seed=seed)
            model.head, model.k = fresh.head, int(k)
        return model

    def load_state(self, arrays):
        params, buffers = self.params(), self.buffers()
        for name, arr in arrays.items():
            kind, key = name.split(".", 1)
            target = params[key].data if kind == "param" else buffers[key]
            if target.shape != arr.shape:
                raise StructuralError(f"checkpoint array {name} has shape {arr.shape}, model expects {target.shape}")
            target[...] = arr

    def copy(self):
        clone = SuperAE(self.widths, self.k, self.in_channels)
        clone.load_state(self.state_arrays())
        return clone


# ---------------------------------------------------------------------------
# template-regularised reconstruction loss
# ---------------------------------------------------------------------------


def superpixel_mean(values, labels, n_regions=None):
    """(M, C) mean of ``values`` (an (H, W, C) or (N, C) array) over each region."""
    labels = np.asarray(labels)
    m = check_label_map(labels) if labels.ndim == 2 else None
    flat = labels.ravel().astype(np.int64)
    vals = np.asarray(values, dtype=np.float64)
    vals = vals.reshape(flat.size, -1)
    if n_regions is not None:
        m = n_regions
    elif m is None:
        m = int(flat.max()) + 1
    if flat.size and (flat.min() < 0 or flat.max() >= m):
        raise StructuralError(f"labels must lie in [0, {m})")
    sizes = np.bincount(flat, minlength=m).astype(np.float64)
    if np.any(sizes == 0):
        raise StructuralError("every region must contain at least one pixel")
    sums = np.stack([np.bincount(flat, weights=vals[:, c], minlength=m) for c in range(vals.shape[1])], axis=1)
    return sums / sizes[:, None]


def reconstruction_loss(x, x_rec, template, lam=1.0):
    """Squared error plus ``lam`` times the within-template scatter of ``x_rec``.

    ``template`` is a label map over the image grid. The region means are
    computed from ``x_rec`` itself and differentiated through; their
    contribution to the gradient vanishes because deviations from a mean sum
    to zero. Returns ``(loss, grad_wrt_x_rec)``.
    """
    x = np.asarray(x, dtype=np.float64)
    x_rec = np.asarray(x_rec, dtype=np.float64)
    if x.shape != x_rec.shape:
        raise StructuralError(f"image shapes differ: {x.shape} vs {x_rec.shape}")
    template = np.asarray(template)
    if template.shape != x.shape[:2]:
        raise StructuralError(f"template is {template.shape}, image is {x.shape[:2]}")
    if lam < 0:
        raise StructuralError("lambda must be non-negative")
    diff = x_rec - x
    loss = float((diff * diff).sum())
    grad = 2.0 * diff
    if lam:
        means = superpixel_mean(x_rec, template)
        dev = x_rec - means[template]
        loss += lam * float((dev * dev).sum())
        grad = grad + 2.0 * lam * dev
    return loss, grad


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    widths: tuple = (64, 128, 256)
    k: int = 32
    epochs: int = 100
    batch_size: int = 10
    lr: float = 1e-3
    lam: float = 1.0
    crop: int = 300
    flip: bool = True
    seed: int = 0

    def as_dict(self):
        return asdict(self)


FULL_PROFILE = TrainConfig()
DESK_PROFILE = TrainConfig(epochs=50, crop=64)


@dataclass
class TrainResult:
    model: SuperAE
    losses: list = field(default_factory=list)


def random_crop_flip(image, template, size, rng, flip=True):
    """Crop a ``size`` x ``size`` patch (or less, for small images) and maybe mirror it."""
    h, w = image.shape[:2]
    ch, cw = min(size, h), min(size, w)
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    img = image[top : top + ch, left : left + cw]
    tpl = template[top : top + ch, left : left + cw]
    if flip and rng.random() < 0.5:
        img, tpl = img[:, ::-1], tpl[:, ::-1]
    return np.ascontiguousarray(img), compact_labels(tpl)[0]


def train_superae(images, templates, config=DESK_PROFILE, model=None):
    """Fit a :class:`SuperAE` with Adam; returns the model and per-epoch mean loss."""
    images = [np.asarray(im, dtype=np.float64) for im in images]
    templates = [np.asarray(t) for t in templates]
    if not images:
        raise StructuralError("training set is empty")
    if len(images) != len(templates):
        raise StructuralError(f"{len(images)} images but {len(templates)} templates")
    for i, (im, t) in enumerate(zip(images, templates)):
        if im.ndim != 3 or t.shape != im.shape[:2]:
            raise StructuralError(f"image {i}: template {t.shape} does not match image {im.shape}")
    crop = min(config.crop, min(im.shape[0] for im in images), min(im.shape[1] for im in images))
    if model is None:
        model = SuperAE(config.widths, config.k, images[0].shape[2], seed=config.seed)
    # the feature head only learns during the cut stage
    opt = Adam({**model.encoder_params(), **model.decoder_params()}, lr=config.lr)
    losses = []
    n = len(images)
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            crops = [
                random_crop_flip(images[i], templates[i], crop, np.random.default_rng([config.seed, epoch, int(i)]), config.flip)
                for i in idx
            ]
            xb = to_nchw(np.stack([c[0] for c in crops]))
            rec = from_nchw(model.reconstruct(xb, training=True))
            grads = np.empty_like(rec)
            batch_loss = 0.0
            for j, (img, tpl) in enumerate(crops):
                loss, g = reconstruction_loss(img, rec[j], tpl, config.lam)
                batch_loss += loss
                grads[j] = g / len(crops)
            if not np.isfinite(batch_loss):
                raise NumericError(f"reconstruction loss became non-finite at epoch {epoch + 1}")
            model.zero_grad()
            model.backward_reconstruction(to_nchw(grads))
            opt.step()
            total += batch_loss
        losses.append(total / n)
        log.debug("epoch %d loss %.6g", epoch + 1, losses[-1])
    return TrainResult(model, losses)


def reconstruct_image(model, image, training=False):
    """Reconstruction of one (H, W, C) image (running batch-norm statistics by default)."""
    return from_nchw(model.reconstruct(to_nchw(image), training=training))[0]


def extract_deep_features(model, image, training=True):
    """(N, K) embedding of one image, rows in row-major pixel order."""
    feat = model.features(to_nchw(image), training=training)
    k = feat.shape[1]
    return np.ascontiguousarray(feat[0].reshape(k, -1).T)
