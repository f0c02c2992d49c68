"""Seeded piecewise-constant test images with known ground truth."""
import numpy as np


def _distinct_colors(rng, n, min_dist=0.35, tries=1000):
    colors = []
    for _ in range(tries):
        c = rng.uniform(0.1, 0.9, size=3)
        if all(np.linalg.norm(c - o) >= min_dist for o in colors):
            colors.append(c)
            if len(colors) == n:
                return np.array(colors)
    raise RuntimeError(f"could not draw {n} colours {min_dist} apart")


def flat_regions(seed, size=48, n_regions=None, noise=0.05):
    """Voronoi partition into 3-5 flat colours plus Gaussian noise.

    Returns ``(image, ground_truth)``; the image is clipped to [0, 1].
    """
    rng = np.random.default_rng(seed)
    if n_regions is None:
        n_regions = int(rng.integers(3, 6))
    # keep seeds apart so no cell degenerates into a sliver
    while True:
        pts = rng.uniform(0.1 * size, 0.9 * size, size=(n_regions, 2))
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1) + np.eye(n_regions) * size
        if d.min() > size / (1.5 * np.sqrt(n_regions)):
            break
    yy, xx = np.mgrid[0:size, 0:size]
    dist = (yy[..., None] - pts[:, 0]) ** 2 + (xx[..., None] - pts[:, 1]) ** 2
    gt = np.argmin(dist, axis=-1).astype(np.int64)
    colors = _distinct_colors(rng, n_regions)
    image = colors[gt] + rng.normal(0.0, noise, size=(size, size, 3))
    return np.clip(image, 0.0, 1.0), gt


def suite(n_images=10, seed=0, size=48, noise=0.05):
    return [flat_regions([seed, i], size=size, noise=noise) for i in range(n_images)]
