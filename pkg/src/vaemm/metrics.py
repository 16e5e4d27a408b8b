"""Single-source, projection-based signal-to-distortion ratio."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _samples(x):
    return np.asarray(getattr(x, "samples", x), dtype=np.float64).ravel()


def sdr(reference, estimate) -> float:
    """10 log10(|proj|^2 / |residual|^2), projecting the estimate onto the reference.

    Inputs are trimmed to the shorter length. Returns +inf for a zero residual
    and -inf for an all-zero estimate.
    """
    s, e = _samples(reference), _samples(estimate)
    n = min(len(s), len(e))
    s, e = s[:n], e[:n]
    ss = float(np.dot(s, s))
    if ss == 0.0:
        raise ValueError("reference signal is all zeros")
    if not np.any(e):
        return -math.inf
    proj = (np.dot(e, s) / ss) * s
    resid = e - proj
    num, den = float(np.dot(proj, proj)), float(np.dot(resid, resid))
    if den == 0.0:
        return math.inf
    if num == 0.0:
        return -math.inf
    return 10.0 * math.log10(num / den)


@dataclass(frozen=True)
class SdrReport:
    sdr_out: float
    sdr_in: float

    @property
    def delta(self) -> float:
        return self.sdr_out - self.sdr_in

    def as_row(self) -> dict:
        return {"sdr_in": self.sdr_in, "sdr_out": self.sdr_out, "delta": self.delta}

    def __str__(self):
        return f"SDR in {self.sdr_in:.2f} dB, out {self.sdr_out:.2f} dB, delta {self.delta:+.2f} dB"


def sdr_report(reference, noisy, enhanced) -> SdrReport:
    return SdrReport(sdr(reference, enhanced), sdr(reference, noisy))
