"""Synthetic enhancement experiments shared by the acceptance suite and scripts/."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics, synth, vem
from .mh import MhConfig
from .spectral import ComplexSpectrogram, StftParams, istft


@dataclass(frozen=True)
class SceneConfig:
    F: int = 16
    N: int = 300
    L: int = 2
    M: int = 2
    pi_true: float = 0.0
    corrupt_fraction: float = 1 / 3
    block_len: int = 20
    noise_level: float = 2.0
    noise_rank: int = 2
    # toy network shape; see synth.toy_bundle
    out_scale: float = 1.5
    prior_std: float = 0.3
    visual_coupling: float = 0.1
    # inference
    nmf_rank: int = 2
    n_vem_iters: int = 200
    mh: MhConfig = field(default_factory=MhConfig)

    def vem_config(self, mode: str, seed: int, **kw) -> vem.VemConfig:
        return vem.VemConfig(n_vem_iters=self.n_vem_iters, mh=self.mh, nmf_rank=self.nmf_rank,
                             seed=seed, mode=mode, **kw)


def make_scene(seed: int, cfg: SceneConfig = SceneConfig()) -> synth.SyntheticScene:
    bundle = synth.toy_bundle(L=cfg.L, M=cfg.M, F=cfg.F, seed=seed, out_scale=cfg.out_scale,
                              prior_std=cfg.prior_std, visual_coupling=cfg.visual_coupling)
    noise = synth.toy_noise(cfg.F, cfg.N, K=cfg.noise_rank, level=cfg.noise_level, seed=seed)
    return synth.generate_scene(bundle, noise, cfg.pi_true, cfg.N, seed,
                                corrupt_fraction=cfg.corrupt_fraction, block_len=cfg.block_len)


def spectrogram_sdr(S, E, params: StftParams) -> float:
    """SDR of an estimated spectrogram against the clean one, measured on waveforms."""
    return metrics.sdr(istft(ComplexSpectrogram(S, params)), istft(ComplexSpectrogram(E, params)))


@dataclass(eq=False)
class ModeOutcome:
    mode: str
    visuals: str  # "clean", "corrupt" or "none"
    sdr_in: float
    sdr_out: float
    pi_n: np.ndarray
    q: np.ndarray

    @property
    def delta(self) -> float:
        return self.sdr_out - self.sdr_in


def run_mode(scene: synth.SyntheticScene, mode: str, visuals: str, seed: int,
             cfg: SceneConfig = SceneConfig()) -> ModeOutcome:
    v = {"clean": scene.v_clean, "corrupt": scene.v_corrupt, "none": None}[visuals]
    res = vem.run(scene.X, v, scene.bundle, cfg.vem_config(mode, seed))
    sdr_in = spectrogram_sdr(scene.S, scene.X, scene.params)
    return ModeOutcome(res.state.config.mode, visuals, sdr_in,
                       spectrogram_sdr(scene.S, res.enhanced, scene.params), res.pi_n,
                       np.array([d["q"] for d in res.diagnostics]))


def balanced_accuracy(pi_n, mask, threshold: float = 0.5) -> float:
    """Mean of the hit rates on corrupted (pi_n > threshold) and clean frames."""
    pi_n, mask = np.asarray(pi_n), np.asarray(mask, dtype=bool)
    if mask.all() or not mask.any():
        raise ValueError("need both corrupted and clean frames")
    pred = pi_n > threshold
    return 0.5 * (pred[mask].mean() + (~pred[~mask]).mean())


def moving_average(x, window: int = 5) -> np.ndarray:
    return np.convolve(np.asarray(x, dtype=float), np.ones(window) / window, mode="valid")


def q_trend_holds(q, window: int = 5, first: int = 100) -> bool:
    """True if the moving average of the first ``first`` objective values never decreases."""
    ma = moving_average(np.asarray(q)[:first], window)
    return bool(np.all(np.diff(ma) >= 0))
