"""Hot inner loops, each in a numba flavour and a numpy flavour.

The public names at the bottom dispatch on :data:`supercut._jit.USE_NUMBA`.
Both flavours perform the same floating-point operations in the same order,
so they return identical arrays; the test-suite holds them to that.
"""
import numpy as np
from scipy import ndimage

from ._jit import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# SLIC assignment step
# ---------------------------------------------------------------------------


def _window(c, step, n):
    lo = int(np.floor(c - step))
    hi = int(np.ceil(c + step)) + 1
    return max(lo, 0), min(hi, n)


@njit
def _slic_assign_numba(lab, centers, step, compactness, labels, dist):
    h, w = labels.shape
    spatial = (compactness * compactness) / (step * step)
    for k in range(centers.shape[0]):
        cy, cx = centers[k, 0], centers[k, 1]
        y0 = max(int(np.floor(cy - step)), 0)
        y1 = min(int(np.ceil(cy + step)) + 1, h)
        x0 = max(int(np.floor(cx - step)), 0)
        x1 = min(int(np.ceil(cx + step)) + 1, w)
        for y in range(y0, y1):
            dy = y - cy
            for x in range(x0, x1):
                dx = x - cx
                dl = lab[y, x, 0] - centers[k, 2]
                da = lab[y, x, 1] - centers[k, 3]
                db = lab[y, x, 2] - centers[k, 4]
                d = (dl * dl + da * da + db * db) + (dy * dy + dx * dx) * spatial
                if d < dist[y, x]:
                    dist[y, x] = d
                    labels[y, x] = k


def _slic_assign_numpy(lab, centers, step, compactness, labels, dist):
    h, w = labels.shape
    spatial = (compactness * compactness) / (step * step)
    for k in range(centers.shape[0]):
        cy, cx = centers[k, 0], centers[k, 1]
        y0, y1 = _window(cy, step, h)
        x0, x1 = _window(cx, step, w)
        if y0 >= y1 or x0 >= x1:
            continue
        sub = lab[y0:y1, x0:x1]
        dy = (np.arange(y0, y1) - cy)[:, None]
        dx = (np.arange(x0, x1) - cx)[None, :]
        dl = sub[..., 0] - centers[k, 2]
        da = sub[..., 1] - centers[k, 3]
        db = sub[..., 2] - centers[k, 4]
        d = (dl * dl + da * da + db * db) + (dy * dy + dx * dx) * spatial
        region = dist[y0:y1, x0:x1]
        better = d < region
        region[better] = d[better]
        labels[y0:y1, x0:x1][better] = k


# ---------------------------------------------------------------------------
# SLIC centre update
# ---------------------------------------------------------------------------


@njit
def _slic_update_numba(lab, labels, centers):
    h, w = labels.shape
    k = centers.shape[0]
    sums = np.zeros((k, 5))
    counts = np.zeros(k)
    for y in range(h):
        for x in range(w):
            c = labels[y, x]
            sums[c, 0] += y
            sums[c, 1] += x
            sums[c, 2] += lab[y, x, 0]
            sums[c, 3] += lab[y, x, 1]
            sums[c, 4] += lab[y, x, 2]
            counts[c] += 1.0
    for c in range(k):
        if counts[c] > 0:
            for j in range(5):
                centers[c, j] = sums[c, j] / counts[c]


def _slic_update_numpy(lab, labels, centers):
    h, w = labels.shape
    k = centers.shape[0]
    flat = labels.ravel()
    yy, xx = np.divmod(np.arange(h * w, dtype=np.float64), w)
    counts = np.bincount(flat, minlength=k).astype(np.float64)
    feats = (yy, xx, lab[..., 0].ravel(), lab[..., 1].ravel(), lab[..., 2].ravel())
    sums = np.stack([np.bincount(flat, weights=f, minlength=k) for f in feats], axis=1)
    ok = counts > 0
    centers[ok] = sums[ok] / counts[ok, None]


# ---------------------------------------------------------------------------
# 4-connected components of a label map
# ---------------------------------------------------------------------------


@njit
def _components_numba(labels):
    h, w = labels.shape
    comp = -np.ones((h, w), dtype=np.int64)
    stack = np.empty(h * w, dtype=np.int64)
    n = 0
    for sy in range(h):
        for sx in range(w):
            if comp[sy, sx] >= 0:
                continue
            lab = labels[sy, sx]
            comp[sy, sx] = n
            top = 0
            stack[top] = sy * w + sx
            top += 1
            while top > 0:
                top -= 1
                p = stack[top]
                y, x = p // w, p % w
                if y > 0 and comp[y - 1, x] < 0 and labels[y - 1, x] == lab:
                    comp[y - 1, x] = n
                    stack[top] = p - w
                    top += 1
                if y < h - 1 and comp[y + 1, x] < 0 and labels[y + 1, x] == lab:
                    comp[y + 1, x] = n
                    stack[top] = p + w
                    top += 1
                if x > 0 and comp[y, x - 1] < 0 and labels[y, x - 1] == lab:
                    comp[y, x - 1] = n
                    stack[top] = p - 1
                    top += 1
                if x < w - 1 and comp[y, x + 1] < 0 and labels[y, x + 1] == lab:
                    comp[y, x + 1] = n
                    stack[top] = p + 1
                    top += 1
            n += 1
    return comp, n


def _components_numpy(labels):
    comp = np.zeros(labels.shape, dtype=np.int64)
    offset = 0
    for value in np.unique(labels):
        cc, n = ndimage.label(labels == value)
        mask = cc > 0
        comp[mask] = cc[mask] + offset - 1
        offset += n
    # renumber by raster order of each component's first pixel
    _, first = np.unique(comp.ravel(), return_index=True)
    order = np.argsort(first, kind="stable")
    remap = np.empty(offset, dtype=np.int64)
    remap[order] = np.arange(offset)
    return remap[comp], offset


# ---------------------------------------------------------------------------
# contingency table of two compact label maps
# ---------------------------------------------------------------------------


@njit
def _contingency_numba(a, b, na, nb):
    table = np.zeros((na, nb), dtype=np.int64)
    for i in range(a.size):
        table[a[i], b[i]] += 1
    return table


def _contingency_numpy(a, b, na, nb):
    return np.bincount(a * nb + b, minlength=na * nb).reshape(na, nb).astype(np.int64)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    slic_assign = _slic_assign_numba
    slic_update = _slic_update_numba
    _components = _components_numba
    _contingency = _contingency_numba
else:
    slic_assign = _slic_assign_numpy
    slic_update = _slic_update_numpy
    _components = _components_numpy
    _contingency = _contingency_numpy


def connected_components(labels):
    """Label 4-connected components; ids follow raster order of first pixels."""
    comp, n = _components(np.ascontiguousarray(labels, dtype=np.int64))
    return comp, int(n)


def contingency(a, b, na, nb):
    """Overlap counts ``table[i, j] = #{pixels: a == i and b == j}``."""
    a = np.ascontiguousarray(a, dtype=np.int64).ravel()
    b = np.ascontiguousarray(b, dtype=np.int64).ravel()
    return _contingency(a, b, int(na), int(nb))
