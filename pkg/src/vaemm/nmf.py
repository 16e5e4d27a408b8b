"""Itakura-Saito NMF noise variance model with multiplicative updates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class NmfParams:
    W: np.ndarray  # (F, K) spectral power patterns
    H: np.ndarray  # (K, N) temporal activations

    def __post_init__(self):
        W = np.maximum(np.asarray(self.W, dtype=np.float64), FLOOR)
        H = np.maximum(np.asarray(self.H, dtype=np.float64), FLOOR)
        if W.ndim != 2 or H.ndim != 2 or W.shape[1] != H.shape[0]:
            raise ValueError(f"incompatible NMF factors W{W.shape}, H{H.shape}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "H", H)

    @property
    def rank(self) -> int:
        return self.W.shape[1]

    @classmethod
    def random(cls, F: int, N: int, K: int, rng: np.random.Generator) -> "NmfParams":
        if K * (F + N) >= F * N:
            warnings.warn(f"NMF rank K={K} is not small relative to F={F}, N={N}")
        W = rng.uniform(0.1, 1.1, size=(F, K))
        H = rng.uniform(0.1, 1.1, size=(K, N))
        return cls(W, H)


def noise_variance(params: NmfParams) -> np.ndarray:
    return params.W @ params.H


def _check(params, V):
    V = np.asarray(V, dtype=np.float64)
    if V.shape != (params.W.shape[0], params.H.shape[1]):
        raise ValueError(f"V has shape {V.shape}, model is {params.W.shape[0]}x{params.H.shape[1]}")
    return np.maximum(V, FLOOR)


def update_h(params: NmfParams, V: np.ndarray) -> NmfParams:
    V = _check(params, V)
    W = params.W
    WH = W @ params.H
    H = params.H * (W.T @ (V * WH ** -2)) / (W.T @ WH ** -1)
    return NmfParams(W, H)


def update_w(params: NmfParams, V: np.ndarray) -> NmfParams:
    V = _check(params, V)
    H = params.H
    WH = params.W @ H
    W = params.W * ((V * WH ** -2) @ H.T) / (WH ** -1 @ H.T)
    return NmfParams(W, H)


def is_divergence(V: np.ndarray, R: np.ndarray) -> float:
    """Itakura-Saito divergence sum(V/R - log(V/R) - 1)."""
    R = np.asarray(R, dtype=np.float64)
    if np.any(R <= 0):
        raise ValueError("model matrix R must be strictly positive")
    ratio = np.maximum(np.asarray(V, dtype=np.float64), FLOOR) / R
    return float(np.sum(ratio - np.log(ratio) - 1.0))
