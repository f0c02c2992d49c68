"""SLIC superpixels, label-map ingestion and per-region statistics.

A label map is an (H, W) int64 array whose values form the compact range
``[0, M)``.
"""
from dataclasses import dataclass

import numpy as np

from . import imageio, kernels
from .errors import StructuralError


@dataclass
class RegionStats:
    sizes: np.ndarray  # (M,) pixel counts
    centers: np.ndarray  # (M, 2) (row, col) centroids
    mean_colors: np.ndarray  # (M, C)

    @property
    def n_regions(self):
        return self.sizes.shape[0]


def compact_labels(labels):
    """Relabel to ``[0, M)`` in order of first appearance (raster order).

    Returns ``(labels, M)``.
    """
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise StructuralError(f"label map must be 2-D, got shape {labels.shape}")
    flat = labels.ravel()
    uniq, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[order] = np.arange(len(uniq))
    return rank[inverse].reshape(labels.shape), len(uniq)


def check_label_map(labels, shape=None, n_regions=None):
    """Validate a compact label map and return its region count."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise StructuralError(f"label map must be 2-D, got shape {labels.shape}")
    if shape is not None and labels.shape != tuple(shape):
        raise StructuralError(f"label map is {labels.shape}, image is {tuple(shape)}")
    if labels.size == 0:
        raise StructuralError("empty label map")
    m = int(labels.max()) + 1 if n_regions is None else n_regions
    if labels.min() < 0 or labels.max() >= m:
        raise StructuralError(f"labels must lie in [0, {m})")
    return m


def region_stats(image, labels):
    h, w = labels.shape
    image = np.asarray(image, dtype=np.float64)
    if image.shape[:2] != (h, w):
        raise StructuralError(f"image is {image.shape[:2]}, label map is {(h, w)}")
    m = check_label_map(labels)
    flat = labels.ravel()
    sizes = np.bincount(flat, minlength=m)
    rows, cols = np.divmod(np.arange(h * w, dtype=np.float64), w)
    with np.errstate(invalid="ignore", divide="ignore"):
        centers = np.stack(
            [np.bincount(flat, weights=rows, minlength=m), np.bincount(flat, weights=cols, minlength=m)], axis=1
        ) / sizes[:, None]
        img2 = image.reshape(h * w, -1)
        means = np.stack([np.bincount(flat, weights=img2[:, c], minlength=m) for c in range(img2.shape[1])], axis=1)
        means = means / sizes[:, None]
    return RegionStats(sizes=sizes, centers=centers, mean_colors=means)


# ---------------------------------------------------------------------------
# colour conversion
# ---------------------------------------------------------------------------

_D65 = np.array([0.95047, 1.0, 1.08883])
_RGB2XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)


def rgb_to_lab(image):
    """sRGB in [0, 1] to CIELab under a D65 white point."""
    rgb = np.asarray(image, dtype=np.float64)
    lin = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    xyz = lin @ _RGB2XYZ.T / _D65
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


# ---------------------------------------------------------------------------
# SLIC
# ---------------------------------------------------------------------------


def _grid_shape(h, w, m):
    """Rows x cols of seeds: count closest to ``m``, then most square cells."""
    best = None
    for ny in range(1, min(h, m) + 1):
        nx = min(w, max(1, int(round(m / ny))))
        score = (abs(ny * nx - m), abs(np.log((h / ny) / (w / nx))))
        if best is None or score < best[0]:
            best = (score, ny, nx)
    return best[1], best[2]


def _init_centers(lab, m):
    h, w = lab.shape[:2]
    ny, nx = _grid_shape(h, w, m)
    ys = (np.arange(ny) + 0.5) * h / ny
    xs = (np.arange(nx) + 0.5) * w / nx
    grad = np.zeros((h, w))
    grad[1:-1, :] += ((lab[2:] - lab[:-2]) ** 2).sum(-1)
    grad[:, 1:-1] += ((lab[:, 2:] - lab[:, :-2]) ** 2).sum(-1)
    centers = []
    for y in ys:
        for x in xs:
            iy, ix = int(y), int(x)
            # nudge the seed to the lowest-gradient pixel of its 3x3 neighbourhood
            y0, y1 = max(iy - 1, 0), min(iy + 2, h)
            x0, x1 = max(ix - 1, 0), min(ix + 2, w)
            win = grad[y0:y1, x0:x1]
            dy, dx = np.unravel_index(np.argmin(win), win.shape)
            py, px = y0 + dy, x0 + dx
            centers.append([py, px, *lab[py, px]])
    return np.array(centers, dtype=np.float64)


def enforce_connectivity(labels, min_size):
    """Make every region 4-connected.

    Each connected piece becomes its own region; pieces smaller than
    ``min_size`` are folded, in raster order, into the largest adjacent
    region (ties to the lower id). Returns a compact label map.
    """
    comp, n = kernels.connected_components(labels)
    sizes = np.bincount(comp.ravel(), minlength=n).astype(np.int64)
    pairs = np.concatenate(
        [
            np.stack([comp[:, :-1].ravel(), comp[:, 1:].ravel()], 1),
            np.stack([comp[:-1, :].ravel(), comp[1:, :].ravel()], 1),
        ]
    )
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    adj = [set() for _ in range(n)]
    for a, b in pairs:
        adj[a].add(int(b))
        adj[b].add(int(a))

    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for c in range(n):
        g = find(c)
        if sizes[g] >= min_size:
            continue
        neigh = {find(j) for j in adj[g]} - {g}
        if not neigh:
            continue
        target = min(neigh, key=lambda r: (-sizes[r], r))
        parent[g] = target
        sizes[target] += sizes[g]
        adj[target] |= adj[g]
        adj[g] = set()
    roots = np.array([find(i) for i in range(n)], dtype=np.int64)
    return compact_labels(roots[comp])[0]


def slic_segment(image, m_target, compactness=10.0, iterations=10):
    """SLIC superpixels of an RGB image in [0, 1].

    Seeds sit on a regular grid with spacing ``S = sqrt(N / m_target)``;
    each iteration assigns pixels within ``2S x 2S`` of a seed by the
    distance ``sqrt(d_lab^2 + (d_xy / S)^2 * compactness^2)`` and moves the
    seeds to their members' mean. Small orphan pieces are merged afterwards.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise StructuralError(f"SLIC needs an (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    n = h * w
    if m_target < 1 or m_target > n:
        raise StructuralError(f"m_target={m_target} must lie in [1, {n}]")
    if compactness <= 0:
        raise StructuralError("compactness must be positive")
    lab = np.ascontiguousarray(rgb_to_lab(image))
    step = float(np.sqrt(n / m_target))
    centers = _init_centers(lab, m_target)

    # start from the seed grid cells so pixels outside every window stay labelled
    ny, nx = _grid_shape(h, w, m_target)
    cell_y = np.minimum(np.arange(h) * ny // h, ny - 1)
    cell_x = np.minimum(np.arange(w) * nx // w, nx - 1)
    labels = (cell_y[:, None] * nx + cell_x[None, :]).astype(np.int64)
    for _ in range(iterations):
        dist = np.full((h, w), np.inf)
        kernels.slic_assign(lab, centers, step, float(compactness), labels, dist)
        kernels.slic_update(lab, labels, centers)
    return enforce_connectivity(labels, step * step / 4.0)


# ---------------------------------------------------------------------------
# files and visualisation
# ---------------------------------------------------------------------------


def ingest_label_map(path):
    """Read a P5 PGM or CSV label map and compact it. Returns ``(labels, M)``."""
    return compact_labels(imageio.read_label_file(path))


def boundary_mask(labels):
    """Pixels whose right or lower neighbour carries a different label."""
    mask = np.zeros(labels.shape, dtype=bool)
    mask[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    mask[:-1, :] |= labels[:-1, :] != labels[1:, :]
    return mask


def overlay_boundaries(image, labels, color=(1.0, 0.0, 0.0)):
    out = np.array(image, dtype=np.float64, copy=True)
    out[boundary_mask(labels)] = color
    return out
