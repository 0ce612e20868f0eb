"""Sparse diffusion sources and the observations they produce."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph_model import FilterPair, _rng


@dataclass(frozen=True)
class GenerationConfig:
    k_sparsity: int = 2
    noise_power: float = 0.0
    value_dist: str = "standard_normal"
    seed: object = None

    def __post_init__(self):
        if self.k_sparsity < 1:
            raise ValueError(f"k_sparsity must be >= 1, got {self.k_sparsity}")
        if self.noise_power < 0:
            raise ValueError(f"noise_power must be >= 0, got {self.noise_power}")
        if self.value_dist != "standard_normal":
            raise ValueError(f"unsupported value distribution {self.value_dist!r}")


def generate_sources(n: int, m: int, cfg: GenerationConfig) -> np.ndarray:
    """N x M source matrix with exactly ``cfg.k_sparsity`` nonzeros per column.

    Supports are drawn uniformly without replacement, independently per
    column; nonzero values are i.i.d. standard normal.
    """
    k = cfg.k_sparsity
    if k > n:
        raise ValueError(f"k_sparsity={k} exceeds node count {n}")
    rng = _rng(cfg.seed)
    x = np.zeros((n, m))
    for j in range(m):
        support = rng.choice(n, size=k, replace=False)
        x[support, j] = rng.standard_normal(k)
    return x


def diffuse(filt: FilterPair | np.ndarray, x: np.ndarray, noise_power: float = 0.0, seed=None) -> np.ndarray:
    """Return ``Y = H X + W`` with ``E||W||^2 / ||HX||^2 == noise_power``."""
    h = filt.forward if isinstance(filt, FilterPair) else np.asarray(filt, dtype=float)
    x = np.asarray(x, dtype=float)
    if h.ndim != 2 or h.shape[1] != x.shape[0]:
        raise ValueError(f"filter {h.shape} does not conform with signals {x.shape}")
    if noise_power < 0:
        raise ValueError("noise_power must be >= 0")
    y = h @ x
    if noise_power > 0:
        sigma = np.sqrt(noise_power * np.sum(y**2) / y.size)
        y = y + sigma * _rng(seed).standard_normal(y.shape)
    return y
