"""Random-walk Metropolis-Hastings over R^L.

The batched core advances many independent chains in lock-step; each chain's
randomness is drawn up front from its own generator, so results do not depend
on how chains are grouped into batches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class MhConfig:
    n_iters: int = 40
    burn_in: int = 30
    epsilon: float = 0.01  # proposal variance per coordinate
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iters:
            raise ValueError("need 0 <= burn_in < n_iters")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def n_retained(self) -> int:
        return self.n_iters - self.burn_in


@dataclass(frozen=True, eq=False)
class MhResult:
    samples: np.ndarray  # (D, L) retained states, or (B, D, L) for a batch
    n_accepted: np.ndarray | int
    n_proposed: int
    last: np.ndarray
    last_log_target: np.ndarray | float


def draw_chain_noise(rng, n_iters: int, dim: int):
    """The per-chain random inputs: proposal increments and acceptance uniforms."""
    return rng.standard_normal((n_iters, dim)), rng.random(n_iters)


def mh_sample_batch(
    log_target: Callable[[np.ndarray], np.ndarray],
    init: np.ndarray,
    config: MhConfig,
    steps: np.ndarray,
    uniforms: np.ndarray,
    init_log_target: np.ndarray | None = None,
) -> MhResult:
    """Run B chains. ``log_target`` maps (B, L) -> (B,); ``steps`` is (B, T, L) standard normal."""
    z = np.array(init, dtype=np.float64)
    B, L = z.shape
    lp = log_target(z) if init_log_target is None else np.asarray(init_log_target, dtype=np.float64)
    if np.any(np.isnan(lp)) or np.any(lp == -np.inf):
        raise ValueError("log target is not finite at the initial state")
    scale = np.sqrt(config.epsilon)
    D = config.n_retained
    samples = np.empty((B, D, L))
    accepted = np.zeros(B, dtype=np.int64)
    for t in range(config.n_iters):
        proposal = z + scale * steps[:, t, :]
        with np.errstate(invalid="ignore", over="ignore"):
            lp_new = log_target(proposal)
            delta = lp_new - lp
            ok = np.isfinite(lp_new) & (uniforms[:, t] < np.exp(np.minimum(delta, 0.0)))
        z = np.where(ok[:, None], proposal, z)
        lp = np.where(ok, lp_new, lp)
        accepted += ok
        if t >= config.burn_in:
            samples[:, t - config.burn_in] = z
    return MhResult(samples, accepted, config.n_iters, z, lp)


def mh_sample(
    log_target: Callable[[np.ndarray], float],
    init,
    config: MhConfig = MhConfig(),
    rng=None,
) -> MhResult:
    """Sample one chain from an unnormalised log density over R^L."""
    init = np.atleast_1d(np.asarray(init, dtype=np.float64))
    if rng is None:
        rng = np.random.default_rng(config.seed)
    steps, u = draw_chain_noise(rng, config.n_iters, init.shape[0])

    def batched(zb):
        return np.array([log_target(row) for row in zb], dtype=np.float64)

    res = mh_sample_batch(batched, init[None], config, steps[None], u[None])
    return MhResult(res.samples[0], int(res.n_accepted[0]), res.n_proposed,
                    res.last[0], float(res.last_log_target[0]))


def acceptance_rate(result: MhResult) -> float | np.ndarray:
    rate = np.asarray(result.n_accepted) / result.n_proposed
    return float(rate) if rate.ndim == 0 else rate
