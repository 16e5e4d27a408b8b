"""Synthetic scenes drawn from the mixture generative model, plus test oracles."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from . import models
from .models import Layer, MlpSpec, ModelBundle
from .nmf import NmfParams, noise_variance
from .spectral import ComplexSpectrogram, StftParams, istft, write_wav


def _dense(rng, n_out, n_in, scale, activation, bias_scale=0.0):
    return Layer(scale * rng.standard_normal((n_out, n_in)),
                 bias_scale * rng.standard_normal(n_out), activation)


def toy_bundle(L: int = 2, M: int = 2, F: int = 16, seed: int = 0, hidden: int = 16,
               visual_coupling: float = 0.1, prior_std: float = 0.3,
               log_level: float = 0.0, out_scale: float = 1.5, with_encoders: bool = False) -> ModelBundle:
    """Small tanh MLP bundle for tests and synthetic experiments.

    The audio-visual decoder shares its z pathway and output layer with the
    audio-only decoder and adds a ``visual_coupling``-scaled v pathway. The
    visual prior has mean ``tanh``-features of v and a fixed standard deviation
    ``prior_std``, so clean embeddings pin z down tighter than N(0, I).
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    hz = _dense(rng, hidden, L, 1.0, "tanh", 0.5)
    out = _dense(rng, F, hidden, out_scale, "identity")
    out = Layer(out.weight, np.full(F, float(log_level)) + 0.3 * rng.standard_normal(F), "identity")
    wv = visual_coupling * rng.standard_normal((hidden, M))
    decoder_a = MlpSpec((hz, out))
    decoder_av = MlpSpec((Layer(np.hstack([hz.weight, wv]), hz.bias, "tanh"), out))

    hp = _dense(rng, hidden, M, 1.0, "tanh", 0.5)
    head_mean = rng.standard_normal((L, hidden))
    # scale so that prior means over v ~ N(0, I) have roughly unit spread
    probe = np.tanh(rng.standard_normal((4096, M)) @ hp.weight.T + hp.bias) @ head_mean.T
    head_mean /= probe.std(axis=0, keepdims=True).T
    head = Layer(np.vstack([head_mean, np.zeros((L, hidden))]),
                 np.concatenate([-probe.mean(axis=0) / probe.std(axis=0),
                                 np.full(L, 2 * np.log(prior_std))]), "identity")
    prior = MlpSpec((hp, head))

    enc_a = enc_av = None
    if with_encoders:
        enc_a = MlpSpec((_dense(rng, 2 * L, F, 0.05, "identity"),))
        enc_av = MlpSpec((_dense(rng, 2 * L, F + M, 0.05, "identity"),))
    return ModelBundle(L, M, F, decoder_a, decoder_av, prior, enc_a, enc_av,
                       meta={"toy": True, "seed": seed})


def toy_noise(F: int, N: int, K: int = 2, level: float = 1.0, seed: int = 0) -> NmfParams:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(8,)))
    W = rng.uniform(0.1, 1.1, (F, K))
    W *= level / W.mean()
    H = rng.gamma(4.0, 0.25, (K, N))
    return NmfParams(W, H)


@dataclass(eq=False)
class SyntheticScene:
    S: np.ndarray  # (F, N) complex clean speech
    B: np.ndarray  # (F, N) complex noise
    X: np.ndarray  # S + B
    alpha: np.ndarray  # (N,) int, 1 = audio-only branch
    z: np.ndarray  # (N, L)
    v_clean: np.ndarray  # (N, M)
    v_corrupt: np.ndarray  # (N, M)
    mask: np.ndarray  # (N,) bool, corrupted frames
    bundle: ModelBundle
    nmf: NmfParams
    params: StftParams | None = None

    @property
    def shape(self):
        return self.X.shape


def _complex_normal(rng, var):
    return np.sqrt(var / 2) * (rng.standard_normal(var.shape) + 1j * rng.standard_normal(var.shape))


def generate_scene(bundle: ModelBundle, nmf_true: NmfParams, pi_true: float, N: int, seed: int,
                   corrupt_fraction: float | None = 1 / 3, block_len: int = 20) -> SyntheticScene:
    """Draw alpha, z, v, s and b for N frames; optionally corrupt the visual stream."""
    if nmf_true.H.shape[1] != N or nmf_true.W.shape[0] != bundle.F:
        raise ValueError("noise model dimensions do not match the scene")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(9,)))
    alpha = (rng.random(N) < pi_true).astype(np.int64)
    v = rng.standard_normal((N, bundle.M))
    mean, var = models.prior_av(bundle, v)
    eps = rng.standard_normal((N, bundle.L))
    z = np.where(alpha[:, None] == 1, eps, mean + np.sqrt(var) * eps)
    sig = np.where(alpha[:, None] == 1, models.decode_a(bundle, z), models.decode_av(bundle, z, v))
    S = _complex_normal(rng, sig.T)
    B = _complex_normal(rng, noise_variance(nmf_true))
    if corrupt_fraction:
        v_bad, mask = corrupt_visuals(v, corrupt_fraction, block_len, seed)
    else:
        v_bad, mask = v.copy(), np.zeros(N, dtype=bool)
    return SyntheticScene(S, B, S + B, alpha, z, v, v_bad, mask, bundle, nmf_true,
                          StftParams.for_bins(bundle.F))


def corrupt_visuals(embeddings: np.ndarray, fraction: float = 1 / 3, block_len: int = 20,
                    seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Replace randomly placed, non-overlapping blocks of rows with standard-normal noise."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    emb = np.array(embeddings, dtype=np.float64)
    N = emb.shape[0]
    if N < block_len:
        raise ValueError(f"need at least {block_len} frames to corrupt a block, got {N}")
    n_blocks = max(1, int(round(fraction * N / block_len)))
    n_blocks = min(n_blocks, N // block_len)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(10,)))
    slack = N - n_blocks * block_len
    picks = np.sort(rng.choice(slack + n_blocks, size=n_blocks, replace=False))
    starts = picks + np.arange(n_blocks) * (block_len - 1)
    mask = np.zeros(N, dtype=bool)
    for s in starts:
        mask[s:s + block_len] = True
    emb[mask] = rng.standard_normal((int(mask.sum()), emb.shape[1]))
    return emb, mask


@dataclass(frozen=True, eq=False)
class GridPosterior:
    grid: np.ndarray
    density: np.ndarray
    mean: float
    var: float

    def cdf(self, x):
        """Piecewise-linear CDF of the normalised grid density."""
        c = np.concatenate([[0.0], np.cumsum(0.5 * (self.density[1:] + self.density[:-1])
                                              * np.diff(self.grid))])
        return np.interp(x, self.grid, c / c[-1])


def grid_posterior_oracle(log_density, lo: float = -10.0, hi: float = 10.0,
                          n: int = 2001, edge_tol: float = 1e-6) -> GridPosterior:
    """Normalise a 1-D log density on a uniform grid with the trapezoid rule."""
    grid = np.linspace(lo, hi, n)
    logp = np.array([float(log_density(np.array([g]))) for g in grid])
    logp -= np.max(logp)
    p = np.exp(logp)
    total = trapezoid(p, grid)
    dx = grid[1] - grid[0]
    if max(p[0], p[-1]) * dx > edge_tol * total:
        raise ValueError("density has non-negligible mass at the grid boundary")
    p /= total
    mean = trapezoid(grid * p, grid)
    var = trapezoid((grid - mean) ** 2 * p, grid)
    return GridPosterior(grid, p, float(mean), float(var))


# ---------------------------------------------------------------------------
# scene files


def write_spectrogram(path, values: np.ndarray) -> None:
    """(F, N) uint32 header then row-major little-endian doubles, re/im interleaved."""
    values = np.asarray(values, dtype=np.complex128)
    inter = np.empty(values.shape + (2,))
    inter[..., 0], inter[..., 1] = values.real, values.imag
    Path(path).write_bytes(struct.pack("<II", *values.shape) + inter.astype("<f8").tobytes())


def read_spectrogram(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated spectrogram file")
    F, N = struct.unpack("<II", raw[:8])
    data = np.frombuffer(raw[8:], dtype="<f8")
    if data.size != 2 * F * N:
        raise ValueError(f"{path}: header says {F}x{N}, found {data.size // 2} values")
    data = data.reshape(F, N, 2)
    return data[..., 0] + 1j * data[..., 1]


def _write_mask(path, mask):
    with open(path, "w", newline="") as f:
        csv.writer(f).writerows([[int(b)] for b in mask])


def read_mask(path) -> np.ndarray:
    with open(path, newline="") as f:
        return np.array([int(r[0]) for r in csv.reader(f) if r], dtype=bool)


def write_scene(scene: SyntheticScene, out_dir, sample_rate: int = 16000) -> dict:
    """Export spectrograms, waveforms, embeddings, mask, model and a meta document."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("X", "S", "B"):
        write_spectrogram(out / f"{name}.spec", getattr(scene, name))
    params = scene.params or StftParams.for_bins(scene.bundle.F)
    waves = {k: istft(ComplexSpectrogram(getattr(scene, k), params, sample_rate=sample_rate))
             for k in ("X", "S", "B")}
    peak = max(np.max(np.abs(waves["X"].samples)), 1e-12)
    gain = 0.9 / peak
    for key, fname in (("X", "mixture.wav"), ("S", "clean.wav"), ("B", "noise.wav")):
        w = waves[key]
        write_wav(out / fname, type(w)(w.samples * gain, sample_rate))
    models.write_embeddings(out / "embeddings_clean.csv", scene.v_clean)
    models.write_embeddings(out / "embeddings.csv", scene.v_corrupt)
    _write_mask(out / "mask.csv", scene.mask)
    models.save_model(scene.bundle, out / "model.vaemm.json")
    meta = {
        "F": int(scene.shape[0]), "N": int(scene.shape[1]),
        "fft_size": params.fft_size, "hop": params.hop, "window": params.window,
        "sample_rate": sample_rate, "wav_gain": float(gain),
        "alpha": scene.alpha.tolist(),
    }
    (out / "scene.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return meta


def read_scene_meta(scene_dir) -> dict:
    return json.loads((Path(scene_dir) / "scene.json").read_text())
