"""Effective channel and per-user SINDR / SIR / SDR.

All ratios are linear power ratios. Conversion to dB happens only when
results are serialized (see :func:`to_db`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pa_model import PAArray, apply_pa, bussgang_gain, crandn, distortion_covariance

__all__ = [
    "MetricsReport",
    "effective_channel",
    "link_terms",
    "sindr_per_user",
    "empirical_sindr",
    "to_db",
    "achievable_rate",
]

# imag(h^T C h*) may not exceed this fraction of the real part
_QUADFORM_IMAG_TOL = 1e-12


def effective_channel(H, W, pa: PAArray) -> np.ndarray:
    """Return ``H G(W) W``, the linear part of the Bussgang model."""
    G = bussgang_gain(W, pa)
    return np.asarray(H, dtype=complex) @ G @ np.asarray(W, dtype=complex)


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # +inf on an exactly zero denominator, 0 when the numerator is also 0
    out = np.empty_like(num, dtype=float)
    zero = den == 0
    out[~zero] = num[~zero] / den[~zero]
    out[zero] = np.where(num[zero] > 0, np.inf, 0.0)
    return out


@dataclass(frozen=True)
class MetricsReport:
    """Per-user link quality, linear units.

    ``signal``, ``interference`` and ``distortion`` are the received powers
    that make up the SINDR; ``sindr = signal / (interference + distortion
    + noise_power)``. ``degenerate`` flags users whose signal and whole
    denominator are both zero (reported SINDR is 0).
    """

    sindr: np.ndarray
    sir: np.ndarray
    sdr: np.ndarray
    gains: np.ndarray
    noise_power: float
    signal: np.ndarray
    interference: np.ndarray
    distortion: np.ndarray
    degenerate: np.ndarray

    def with_noise(self, noise_power: float) -> "MetricsReport":
        return _assemble(self.gains, self.signal, self.interference, self.distortion, noise_power)


def link_terms(H, W, pa: PAArray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Gains, signal, interference and distortion powers per user."""
    E = effective_channel(H, W, pa)
    H = np.asarray(H, dtype=complex)
    W = np.asarray(W, dtype=complex)
    gains = np.diag(E).copy()
    power = E.real**2 + E.imag**2
    signal = np.diag(power).copy()
    np.fill_diagonal(power, 0.0)
    interference = power.sum(axis=1)

    C = distortion_covariance(W, pa)
    q = np.einsum("km,mn,kn->k", H, C, H.conj())
    # rounding floor for forms that cancel to ~0
    floor = 1e-14 * np.abs(C).sum() * np.sum(np.abs(H) ** 2, axis=1)
    if np.any(np.abs(q.imag) > np.maximum(_QUADFORM_IMAG_TOL * np.abs(q.real), floor)):
        raise ArithmeticError(f"distortion quadratic form is not real: {q}")
    distortion = np.maximum(q.real, 0.0)
    return gains, signal, interference, distortion


def _assemble(gains, signal, interference, distortion, noise_power) -> MetricsReport:
    if noise_power < 0:
        raise ValueError("noise power must be >= 0")
    den = interference + distortion + noise_power
    return MetricsReport(
        sindr=_ratio(signal, den),
        sir=_ratio(signal, interference),
        sdr=_ratio(signal, distortion),
        gains=gains,
        noise_power=float(noise_power),
        signal=signal,
        interference=interference,
        distortion=distortion,
        degenerate=(signal == 0) & (den == 0),
    )


def sindr_per_user(H, W, pa: PAArray, noise_power: float) -> MetricsReport:
    """Analytic SINDR, SIR and SDR for every user.

    Parameters
    ----------
    H : ndarray, shape (K, M)
    W : ndarray, shape (M, K)
    pa : PAArray
    noise_power : float
        Receiver noise variance ``N0``.
    """
    return _assemble(*link_terms(H, W, pa), noise_power)


def empirical_sindr(
    H,
    W,
    pa: PAArray,
    noise_power: float,
    n_samples: int,
    seed: int,
    cap: float = 1e30,
    chunk: int = 200_000,
) -> np.ndarray:
    """End-to-end Monte Carlo SINDR through the actual PA non-linearity.

    Simulates ``y = H f(W s) + n``, estimates each user's useful gain as
    the least-squares coefficient of ``y_k`` on ``s_k`` and treats the rest
    of ``y_k`` as impairment. Values are clipped to ``cap``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    H = np.asarray(H, dtype=complex)
    W = np.asarray(W, dtype=complex)
    K = H.shape[0]
    n_chunks = -(-n_samples // chunk)
    children = np.random.SeedSequence(seed).spawn(n_chunks)

    def batches():
        done = 0
        for ss in children:
            n = min(chunk, n_samples - done)
            rng = np.random.default_rng(ss)
            s = crandn(rng, (K, n))
            noise = np.sqrt(noise_power) * crandn(rng, (K, n))
            yield s, H @ apply_pa(W @ s, pa) + noise
            done += n

    ys = np.zeros(K, dtype=complex)
    ss2 = np.zeros(K)
    for s, y in batches():
        ys += np.sum(y * s.conj(), axis=1)
        ss2 += np.sum(s.real**2 + s.imag**2, axis=1)
    coef = ys / ss2

    resid = np.zeros(K)
    for s, y in batches():
        e = y - coef[:, None] * s
        resid += np.sum(e.real**2 + e.imag**2, axis=1)

    sig = np.abs(coef) ** 2 * ss2
    with np.errstate(divide="ignore"):
        out = np.where(resid > 0, sig / np.where(resid > 0, resid, 1.0), np.inf)
    return np.minimum(out, cap)


def to_db(x, cap_db: float = 300.0):
    """10 log10 of a linear power ratio, clipped to ``[-cap_db, cap_db]``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(x)
    return np.clip(db, -cap_db, cap_db)


def achievable_rate(sindr) -> np.ndarray:
    """``log2(1 + SINDR)`` in bit/s/Hz."""
    return np.log2(1.0 + np.asarray(sindr, dtype=float))
