"""Hyperparameters of the cut stage (plus the autoencoder's lambda)."""
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import StructuralError


@dataclass
class HyperParams:
    """``d`` and ``beta`` default to ``2*sqrt(N/M)`` and ``5/M**2`` per image."""

    k: int = 32
    sigma: float = 10.0
    d: float = None
    alpha: float = 1.0
    beta: float = None
    t: int = 128
    lr: float = 5e-2
    momentum: float = 0.9
    lam: float = 1.0
    # standardise each embedding channel over the image's pixels before softmax
    standardize: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if int(self.k) != self.k or self.k < 2:
            raise StructuralError(f"k must be an integer >= 2, got {self.k}")
        if int(self.t) != self.t or self.t < 1:
            raise StructuralError(f"t must be an integer >= 1, got {self.t}")
        checks = {
            "sigma": self.sigma > 0,
            "d": self.d is None or self.d > 0,
            "alpha": self.alpha >= 0,
            "beta": self.beta is None or self.beta >= 0,
            "lr": self.lr > 0,
            "momentum": 0 <= self.momentum < 1,
            "lam": self.lam >= 0,
        }
        for name, ok in checks.items():
            if not ok:
                raise StructuralError(f"{name}={getattr(self, name)} is out of range")
        self.k, self.t = int(self.k), int(self.t)
        if isinstance(self.standardize, str):
            self.standardize = self.standardize.strip().lower() in ("1", "true", "yes", "on")
        self.standardize = bool(self.standardize)

    def resolve(self, n_pixels, n_superpixels):
        """Return ``(d, beta)`` for an image with the given pixel and superpixel counts."""
        d = 2.0 * np.sqrt(n_pixels / n_superpixels) if self.d is None else float(self.d)
        beta = 5.0 / n_superpixels**2 if self.beta is None else float(self.beta)
        return d, beta

    def as_dict(self):
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]
