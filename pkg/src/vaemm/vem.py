"""Variational EM for the per-frame audio / audio-visual VAE mixture.

Conventions used throughout:

* ``pi_n`` is the posterior probability that frame n uses the audio-only
  decoder (alpha_n = 1); ``1 - pi_n`` weights the audio-visual branch.
* Decoder outputs are log-variances. ``P = |m|^2 + nu`` is the expected
  speech power under r(s).
* Per-frame quantities are laid out frame-major internally: (N, F), (N, D, L).
  Public spectrogram-shaped quantities (X, m, nu, gamma) are (F, N).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, xlogy

from . import models
from .mh import MhConfig, draw_chain_noise, mh_sample_batch
from .models import ModelBundle
from .nmf import NmfParams, noise_variance, update_h, update_w

log = logging.getLogger(__name__)

MODES = ("mix", "audio_only", "audio_visual")
MODE_ALIASES = {"a": "audio_only", "av": "audio_visual", "mix": "mix"}

PI_FLOOR = 1e-6
PI_N_FLOOR = 1e-12
LOGIT_CLIP = 500.0
_LOG_PI = math.log(math.pi)
_LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class VemConfig:
    n_vem_iters: int = 200
    mh: MhConfig = field(default_factory=MhConfig)
    nmf_rank: int = 8
    seed: int = 0
    mode: str = "mix"
    # mix mode only: hold pi and every pi_n at this value and skip the E-alpha step
    pin_pi: float | None = None
    stop_tol: float | None = None
    stop_window: int = 5
    threads: int = 1
    # fixed frame blocking; keeps results independent of the thread count
    chunk_size: int = 128

    def __post_init__(self):
        object.__setattr__(self, "mode", MODE_ALIASES.get(self.mode, self.mode))
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.n_vem_iters < 1 or self.nmf_rank < 1 or self.threads < 1 or self.chunk_size < 1:
            raise ValueError("iteration counts, NMF rank, threads and chunk size must be positive")
        if self.pin_pi is not None and not 0.0 <= self.pin_pi <= 1.0:
            raise ValueError("pin_pi must lie in [0, 1]")

    @property
    def fixed_pi(self) -> float | None:
        """The pinned mixture weight, or None when pi is estimated."""
        if self.mode == "audio_only":
            return 1.0
        if self.mode == "audio_visual":
            return 0.0
        return self.pin_pi

    @property
    def uses_audio(self) -> bool:
        return self.mode != "audio_visual"

    @property
    def uses_visual(self) -> bool:
        return self.mode != "audio_only"


@dataclass(frozen=True, eq=False)
class FramePosterior:
    m: np.ndarray
    nu: np.ndarray
    pi_n: float
    z_samples: np.ndarray | None
    gamma: np.ndarray | None


@dataclass(eq=False)
class VemState:
    X: np.ndarray  # (F, N) complex
    v: np.ndarray | None  # (N, M)
    bundle: ModelBundle
    config: VemConfig
    nmf: NmfParams
    pi: float
    pi_n: np.ndarray  # (N,)
    m: np.ndarray  # (F, N) complex
    nu: np.ndarray  # (F, N)
    z: np.ndarray  # (N, L) current chain state
    prior_mean: np.ndarray | None = None  # (N, L)
    prior_var: np.ndarray | None = None
    z_samples: np.ndarray | None = None  # (N, D, L)
    eta_a: np.ndarray | None = None  # (F, N)
    eta_av: np.ndarray | None = None
    accept_rate: np.ndarray | None = None  # (N,) last E-z step
    noise_var: np.ndarray | None = None  # W H, frozen during the E-steps
    rngs: list = field(default_factory=list)
    iteration: int = 0

    @property
    def shape(self):
        return self.X.shape

    @property
    def gamma(self) -> np.ndarray:
        return compute_gamma(self.eta_a, self.eta_av, self.pi_n)

    def frame(self, n: int) -> FramePosterior:
        return FramePosterior(
            self.m[:, n], self.nu[:, n], float(self.pi_n[n]),
            None if self.z_samples is None else self.z_samples[n],
            None if self.eta_a is None and self.eta_av is None else self.gamma[:, n],
        )


@dataclass(eq=False)
class RunResult:
    enhanced: np.ndarray  # (F, N) complex
    pi_n: np.ndarray
    diagnostics: list[dict]
    state: VemState


# ---------------------------------------------------------------------------
# per-frame math


def mixture_variance(bundle: ModelBundle, z, v, alpha: int) -> np.ndarray:
    """sigma^alpha: audio-only decoder for alpha=1, audio-visual for alpha=0."""
    if alpha == 1:
        return models.decode_a(bundle, z)
    if alpha == 0:
        return models.decode_av(bundle, z, v)
    raise ValueError("alpha must be 0 or 1")


def compute_eta(bundle: ModelBundle, z_samples, v, alpha: int) -> np.ndarray:
    """Monte-Carlo estimate of E[1 / sigma_f^alpha(z, v)] over the retained samples (D, L)."""
    z_samples = np.atleast_2d(z_samples)
    if z_samples.shape[0] < 1:
        raise ValueError("need at least one latent sample")
    return np.mean(1.0 / mixture_variance(bundle, z_samples, v, alpha), axis=0)


def _wsum(w1, a, w0, b):
    """w1*a + w0*b where a zero weight drops its term entirely (also if it is inf/nan)."""
    if b is None:
        return a
    if a is None:
        return b
    with np.errstate(invalid="ignore"):
        return np.where(w1 == 0, 0.0, w1 * a) + np.where(w0 == 0, 0.0, w0 * b)


def compute_gamma(eta_a, eta_av, pi_n) -> np.ndarray:
    """Effective speech variance: 1 / (pi_n * eta_a + (1 - pi_n) * eta_av).

    Either eta may be None when only one branch is active.
    """
    pi_n = np.asarray(pi_n, dtype=np.float64)
    return 1.0 / _wsum(pi_n, eta_a, 1.0 - pi_n, eta_av)


def e_step_s(x, gamma, noise_var):
    """Posterior mean and variance of s under the Wiener gain gamma / (gamma + noise_var)."""
    gain = gamma / (gamma + noise_var)
    return gain * x, gain * noise_var


def _gauss_loglik(logvar, P):
    """sum_f E_r(s)[log N_c(s; 0, sigma)] with sigma = exp(logvar); reduces the last axis."""
    with np.errstate(over="ignore"):
        return -np.sum(_LOG_PI + logvar + P * np.exp(-logvar), axis=-1)


def _std_normal_logpdf(z):
    return -0.5 * np.sum(_LOG_2PI + z ** 2, axis=-1)


def _normal_logpdf(z, mean, var):
    return -0.5 * np.sum(_LOG_2PI + np.log(var) + (z - mean) ** 2 / var, axis=-1)


@dataclass(eq=False)
class _FrameBlock:
    """Inputs for a block of B frames, frame-major."""

    P: np.ndarray  # (B, F)
    v: np.ndarray | None  # (B, M)
    prior_mean: np.ndarray | None  # (B, L)
    prior_var: np.ndarray | None
    pi_n: np.ndarray  # (B,)
    use_a: bool
    use_av: bool

    def log_target(self, bundle: ModelBundle, z: np.ndarray) -> np.ndarray:
        """Unnormalised log r(z) for z of shape (B, L) or (B, D, L)."""
        ll_a = ll_av = None
        if self.use_a:
            ll_a = _std_normal_logpdf(z) + _gauss_loglik(
                bundle.decoder_a.forward(z), _expand(self.P, z))
        if self.use_av:
            v = _expand(self.v, z)
            ll_av = _normal_logpdf(z, _expand(self.prior_mean, z), _expand(self.prior_var, z)) + \
                _gauss_loglik(bundle.decoder_av.forward(np.concatenate([z, v], axis=-1)),
                              _expand(self.P, z))
        w = _expand(self.pi_n, z[..., 0])
        return _wsum(w, ll_a, 1.0 - w, ll_av)


def _expand(a, like):
    """Broadcast a per-frame array (B, ...) against ``like`` of shape (B, D, ...) if needed."""
    if a.ndim < like.ndim:
        return np.broadcast_to(a[:, None], like.shape[:2] + a.shape[1:])
    return a


def log_rz_batch(bundle: ModelBundle, m, nu, v, pi_n, z) -> np.ndarray:
    """Unnormalised log r(z) for B independent frames.

    ``m``, ``nu`` are (B, F), ``v`` is (B, M) or None (audio-only), ``pi_n`` is
    (B,), and ``z`` is (B, L) or (B, D, L).
    """
    P = np.abs(np.asarray(m)) ** 2 + np.asarray(nu, dtype=np.float64)
    pi_n = np.asarray(pi_n, dtype=np.float64)
    if v is None:
        block = _FrameBlock(P, None, None, None, pi_n, True, False)
    else:
        v = np.asarray(v, dtype=np.float64)
        mean, var = models.prior_av(bundle, v)
        block = _FrameBlock(P, v, mean, var, pi_n, True, True)
    return block.log_target(bundle, np.asarray(z, dtype=np.float64))


def log_rz(bundle: ModelBundle, m_n, nu_n, v_n, pi_n: float, z) -> float:
    """Unnormalised log density of the variational latent posterior for one frame."""
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    v = None if v_n is None else np.asarray(v_n, dtype=np.float64)[None]
    return float(log_rz_batch(bundle, np.asarray(m_n)[None], np.asarray(nu_n)[None], v,
                              [float(pi_n)], z[None])[0])


def _alpha_log_odds(bundle, z, v, prior_mean, prior_var, P):
    """Per-sample log p(s,z | alpha=1) - log p(s,z | alpha=0); z is (B, D, L)."""
    la = bundle.decoder_a.forward(z)
    lav = bundle.decoder_av.forward(np.concatenate([z, _expand(v, z)], axis=-1))
    P = P[:, None, :]
    with np.errstate(over="ignore"):
        s_term = np.sum(lav - la + (np.exp(-lav) - np.exp(-la)) * P, axis=-1)
    mu, var = prior_mean[:, None, :], prior_var[:, None, :]
    z_term = np.sum(0.5 * np.log(var) + (z - mu) ** 2 / (2 * var) - z ** 2 / 2, axis=-1)
    return s_term + z_term


def _posterior_pi(mean_log_odds, pi):
    x = np.clip(mean_log_odds + math.log(pi / (1.0 - pi)), -LOGIT_CLIP, LOGIT_CLIP)
    return np.clip(expit(x), PI_N_FLOOR, 1.0 - PI_N_FLOOR)


def e_step_alpha(bundle: ModelBundle, z_samples, v_n, m_n, nu_n, pi: float) -> float:
    """Posterior probability that the frame follows the audio-only model."""
    if not 0.0 < pi < 1.0:
        raise ValueError("pi must lie strictly between 0 and 1")
    z = np.atleast_2d(np.asarray(z_samples, dtype=np.float64))[None]
    v = np.asarray(v_n, dtype=np.float64)[None]
    mean, var = models.prior_av(bundle, v)
    P = (np.abs(m_n) ** 2 + nu_n)[None]
    lo = _alpha_log_odds(bundle, z, v, mean, var, P)
    return float(_posterior_pi(lo.mean(axis=1), pi)[0])


# ---------------------------------------------------------------------------
# state


def _frame_rng(seed: int, n: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, n)))


def init_state(X, v, bundle: ModelBundle, config: VemConfig = VemConfig()) -> VemState:
    X = np.asarray(getattr(X, "values", X), dtype=np.complex128)
    if X.ndim != 2:
        raise ValueError("X must be an F x N matrix")
    F, N = X.shape
    if N == 0:
        raise ValueError("empty spectrogram")
    if F != bundle.F:
        raise ValueError(f"spectrogram has {F} bins, model expects {bundle.F}")
    if config.uses_visual:
        if v is None:
            raise ValueError("visual embeddings required")
        v = models.align_embeddings(v, N)
        if v.shape[1] != bundle.M:
            raise ValueError(f"embeddings have dimension {v.shape[1]}, model expects {bundle.M}")
    else:
        v = None

    pi0 = 0.5 if config.fixed_pi is None else config.fixed_pi
    nmf = NmfParams.random(F, N, config.nmf_rank,
                           np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0,))))

    prior_mean = prior_var = None
    if v is not None:
        prior_mean, prior_var = models.prior_av(bundle, v)

    # encoder means where available, else the prior means (0 and mu_bar(v))
    power = np.abs(X.T) ** 2
    enc_a, enc_av = models.encode_means(bundle, power, v)
    z_a = enc_a if enc_a is not None else np.zeros((N, bundle.L))
    z_av = None
    if v is not None:
        z_av = enc_av if enc_av is not None else prior_mean
    if not config.uses_audio:
        z = z_av
    elif z_av is None:
        z = z_a
    else:
        z = _wsum(pi0, z_a, 1.0 - pi0, z_av)

    return VemState(
        X=X, v=v, bundle=bundle, config=config, nmf=nmf,
        pi=pi0, pi_n=np.full(N, pi0),
        m=X.copy(), nu=np.zeros((F, N)),
        z=np.array(z, dtype=np.float64),
        prior_mean=prior_mean, prior_var=prior_var,
        rngs=[_frame_rng(config.seed, n) for n in range(N)],
    )


def _block(state: VemState, idx: np.ndarray) -> _FrameBlock:
    P = (np.abs(state.m[:, idx]) ** 2 + state.nu[:, idx]).T
    cfg = state.config
    take = (lambda a: None if a is None else a[idx])
    return _FrameBlock(P, take(state.v), take(state.prior_mean), take(state.prior_var),
                       state.pi_n[idx], cfg.uses_audio, cfg.uses_visual)


def _sample_block(state: VemState, idx: np.ndarray):
    cfg = state.config.mh
    L = state.bundle.L
    noise = [draw_chain_noise(state.rngs[n], cfg.n_iters, L) for n in idx]
    steps = np.stack([s for s, _ in noise])
    u = np.stack([u for _, u in noise])
    block = _block(state, idx)
    res = mh_sample_batch(lambda z: block.log_target(state.bundle, z), state.z[idx], cfg, steps, u)
    return res


def e_step_z(state: VemState, n: int) -> np.ndarray:
    """MH-sample r(z_n) for a single frame, warm-started from its last state. Returns (D, L)."""
    idx = np.array([n])
    _ensure_buffers(state)
    res = _sample_block(state, idx)
    _store_samples(state, idx, res)
    return res.samples[0]


def _ensure_buffers(state: VemState):
    # allocated before frame blocks are dispatched so worker threads only write slices
    F, N = state.shape
    if state.z_samples is None:
        state.z_samples = np.empty((N, state.config.mh.n_retained, state.bundle.L))
        state.accept_rate = np.zeros(N)
    if state.eta_a is None and state.config.uses_audio:
        state.eta_a = np.empty((F, N))
    if state.eta_av is None and state.config.uses_visual:
        state.eta_av = np.empty((F, N))


def _store_samples(state, idx, res):
    state.z_samples[idx] = res.samples
    state.z[idx] = res.last
    state.accept_rate[idx] = res.n_accepted / res.n_proposed


def _estep_block(state: VemState, idx: np.ndarray):
    """E-z, E-s and E-alpha for a block of frames (Theta held fixed)."""
    res = _sample_block(state, idx)
    _store_samples(state, idx, res)
    zs = res.samples  # (B, D, L)
    bundle, cfg = state.bundle, state.config
    eta_a = eta_av = None
    la = lav = None
    if cfg.uses_audio:
        la = bundle.decoder_a.forward(zs)
        eta_a = np.mean(np.exp(-la), axis=1).T
    if cfg.uses_visual:
        v = state.v[idx]
        lav = bundle.decoder_av.forward(np.concatenate([zs, _expand(v, zs)], axis=-1))
        eta_av = np.mean(np.exp(-lav), axis=1).T
    if eta_a is not None:
        state.eta_a[:, idx] = eta_a
    if eta_av is not None:
        state.eta_av[:, idx] = eta_av

    gamma = compute_gamma(eta_a, eta_av, state.pi_n[idx])
    m, nu = e_step_s(state.X[:, idx], gamma, state.noise_var[:, idx])
    state.m[:, idx] = m
    state.nu[:, idx] = nu

    if cfg.fixed_pi is None:
        P = (np.abs(m) ** 2 + nu).T
        lo = _alpha_log_odds(bundle, zs, state.v[idx], state.prior_mean[idx], state.prior_var[idx], P)
        state.pi_n[idx] = _posterior_pi(lo.mean(axis=1), state.pi)


def posterior_power(X, m, nu) -> np.ndarray:
    """V = |x - m|^2 + nu, the expected noise power under r(s)."""
    return np.abs(X - m) ** 2 + nu


def m_step(state: VemState) -> VemState:
    V = posterior_power(state.X, state.m, state.nu)
    nmf = update_h(state.nmf, V)
    state.nmf = update_w(nmf, V)
    if state.config.fixed_pi is None:
        state.pi = float(np.clip(np.mean(state.pi_n), PI_FLOOR, 1.0 - PI_FLOOR))
    return state


def q_value(state: VemState) -> float:
    """Expected complete-data log-likelihood under the current posteriors and parameters."""
    V = posterior_power(state.X, state.m, state.nu)
    R = noise_variance(state.nmf)
    noise = -np.sum(V / R + np.log(R))
    mix = np.sum(xlogy(state.pi_n, state.pi) + xlogy(1.0 - state.pi_n, 1.0 - state.pi))
    return float(noise + mix)


def enhance(state: VemState) -> np.ndarray:
    """Posterior-mean clean speech estimate, (F, N) complex."""
    if state.eta_a is None and state.eta_av is None:
        raise ValueError("no E-step has been run yet")
    gamma = state.gamma
    return gamma / (gamma + noise_variance(state.nmf)) * state.X


def _chunks(N, size):
    return [np.arange(i, min(i + size, N)) for i in range(0, N, size)]


def vem_iteration(state: VemState, pool: ThreadPoolExecutor | None = None) -> dict:
    state.noise_var = noise_variance(state.nmf)
    _ensure_buffers(state)
    blocks = _chunks(state.shape[1], state.config.chunk_size)
    if pool is None:
        for idx in blocks:
            _estep_block(state, idx)
    else:
        list(pool.map(lambda idx: _estep_block(state, idx), blocks))
    m_step(state)
    state.iteration += 1
    if not (np.all(np.isfinite(state.m)) and np.all(np.isfinite(state.nmf.W))
            and np.all(np.isfinite(state.nmf.H))):
        raise FloatingPointError(f"non-finite state after iteration {state.iteration}")
    return {
        "iteration": state.iteration,
        "q": q_value(state),
        "pi": state.pi,
        "acceptance": float(np.mean(state.accept_rate)),
    }


def _converged(qs, window, tol):
    if len(qs) <= window:
        return False
    recent = np.asarray(qs[-window - 1:])
    rel = np.abs(np.diff(recent)) / np.maximum(np.abs(recent[1:]), 1e-300)
    return bool(np.all(rel < tol))


def run(X, v, bundle: ModelBundle, config: VemConfig = VemConfig(), callback=None) -> RunResult:
    """Full VEM loop followed by posterior-mean enhancement."""
    state = init_state(X, v, bundle, config)
    diagnostics = []
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        for _ in range(config.n_vem_iters):
            diag = vem_iteration(state, pool)
            diagnostics.append(diag)
            log.debug("iter %(iteration)d  Q=%(q).6g  pi=%(pi).4f  acc=%(acceptance).3f", diag)
            if callback is not None:
                callback(state, diag)
            if config.stop_tol is not None and _converged(
                    [d["q"] for d in diagnostics], config.stop_window, config.stop_tol):
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return RunResult(enhance(state), state.pi_n.copy(), diagnostics, state)


def with_mode(config: VemConfig, mode: str, **kw) -> VemConfig:
    return replace(config, mode=mode, **kw)
