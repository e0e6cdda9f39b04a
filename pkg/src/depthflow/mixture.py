"""Synthetic Gaussian-mixture targets with exact samplers and densities.

The mixture doubles as the ground-truth scoring oracle: because the density
is known in closed form, distributional fidelity and sample quality can be
checked without any learned critic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


@dataclass(frozen=True)
class GaussianMixture:
    """Isotropic Gaussian mixture: component means, one shared scale, weights."""

    means: np.ndarray
    scale: float
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        if means.ndim != 2:
            raise ValueError("means must be [components, dim]")
        object.__setattr__(self, "means", means)
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        weights = self.weights
        if weights is None:
            weights = np.full(means.shape[0], 1.0 / means.shape[0])
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (means.shape[0],) or np.any(weights < 0):
            raise ValueError("weights must be a non-negative vector, one per component")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1 within 1e-9, got {weights.sum()!r}")
        object.__setattr__(self, "weights", weights)

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def sample(self, rng, n):
        """Draw n exact samples; returns (points [n, dim], component index [n])."""
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        x = self.means[comp] + self.scale * rng.standard_normal((n, self.dim))
        return x, comp

    def sample_component(self, rng, comp, n):
        comp = int(comp)
        if not 0 <= comp < self.n_components:
            raise ValueError(f"component {comp} outside [0, {self.n_components})")
        return self.means[comp] + self.scale * rng.standard_normal((n, self.dim))

    def log_density(self, x):
        """Exact log p(x) for points [n, dim] (or a single [dim] point)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise ValueError(f"points must have dim {self.dim}, got {x.shape}")
        d2 = ((x[:, None, :] - self.means[None, :, :]) ** 2).sum(axis=2)
        log_norm = -0.5 * self.dim * np.log(2.0 * np.pi * self.scale**2)
        comp_logpdf = log_norm - d2 / (2.0 * self.scale**2)
        return logsumexp(comp_logpdf + np.log(self.weights)[None, :], axis=1)


def ring_mixture(components=8, radius=1.5, scale=0.15, dim=2):
    """Equal-weight components spaced evenly on a circle (zero-padded above 2-D)."""
    if components < 1 or dim < 2:
        raise ValueError("need at least one component and dim >= 2")
    angles = 2.0 * np.pi * np.arange(components) / components
    means = np.zeros((components, dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return GaussianMixture(means=means, scale=scale)
