"""Synthetic embeddings: noisy samples around well-separated unit-sphere centroids."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clusterset import FeatureSet
from .qsim import ConfigurationError

MAX_ATTEMPTS = 100_000


class InfeasibleSpecError(ConfigurationError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 20
    samples_per_class: int = 50
    dim: int = 16
    sigma: float = 0.25
    min_separation: float = 0.6
    seed: int = 7

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigurationError("dim must be >= 2")
        if self.sigma < 0:
            raise ConfigurationError("sigma must be >= 0")
        if self.n_classes < 1 or self.samples_per_class < 1:
            raise ConfigurationError("need at least one class and one sample per class")


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def synth_blobs(spec: SynthSpec) -> FeatureSet:
    """Class-major samples; features are rounded to float32 so they survive a file round trip."""
    rng = np.random.default_rng(spec.seed)
    cos_max = np.cos(spec.min_separation)
    centroids = []
    attempts = 0
    while len(centroids) < spec.n_classes:
        attempts += 1
        if attempts > MAX_ATTEMPTS:
            raise InfeasibleSpecError(
                f"could not place {spec.n_classes} centroids {spec.min_separation} rad apart "
                f"in {spec.dim} dims within {MAX_ATTEMPTS} draws"
            )
        c = _unit(rng.normal(size=spec.dim))
        if all(float(c @ other) <= cos_max for other in centroids):
            centroids.append(c)
    centroids = np.array(centroids)

    feats = []
    for c in centroids:
        noise = rng.normal(scale=spec.sigma, size=(spec.samples_per_class, spec.dim))
        noise -= np.outer(noise @ c, c)
        feats.append(_unit(c[None, :] + noise))
    x = np.concatenate(feats).astype(np.float32).astype(np.float64)
    labels = np.repeat(np.arange(spec.n_classes, dtype=np.int64), spec.samples_per_class)
    return FeatureSet(x, labels)
