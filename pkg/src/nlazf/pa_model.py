"""Third-order memoryless PA model and its Bussgang decomposition.

Each Tx-chain ``m`` applies

.. math::

    f_m(x) = a_{1,m} x + a_{3,m} |x|^2 x

to its input. For a Gaussian input ``x = W s`` with ``s ~ CN(0, I)`` the
output splits into ``G(W) x + eta``, with the diagonal gain

.. math::

    G(W) = \\mathrm{diag}(\\alpha_m + \\beta_m \\lVert w_m^T \\rVert^2),
    \\quad \\alpha_m = a_{1,m},\\ \\beta_m = 2 a_{3,m}

and a distortion ``eta`` that is uncorrelated with ``s``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "PACoefficients",
    "PAArray",
    "BussgangModel",
    "DEFAULT_PA",
    "crandn",
    "pa_response",
    "apply_pa",
    "row_powers",
    "bussgang_gain",
    "distortion_covariance",
    "bussgang",
    "EmpiricalDistortion",
    "empirical_distortion_stats",
    "empirical_distortion_covariance",
]


@dataclass(frozen=True)
class PACoefficients:
    """Coefficients of one third-order memoryless amplifier.

    Attributes
    ----------
    a1 : complex
        Linear gain. Must be non-zero.
    a3 : complex
        Third-order coefficient, per unit input power. Negative real part
        means gain compression.
    """

    a1: complex
    a3: complex = 0j

    def __post_init__(self):
        object.__setattr__(self, "a1", complex(self.a1))
        object.__setattr__(self, "a3", complex(self.a3))
        if self.a1 == 0:
            raise ValueError("a1 must be non-zero (dead PA)")

    @property
    def alpha(self) -> complex:
        return self.a1

    @property
    def beta(self) -> complex:
        return 2 * self.a3

    def __call__(self, x):
        return pa_response(x, self)


# Illustrative weak-coupling amplifier: |a3| * E_s = 0.05 |a1| for E_s = 1.
# Not a fit of any measured device.
DEFAULT_PA = PACoefficients(a1=1.0, a3=-0.05)


@dataclass(frozen=True)
class PAArray:
    """Per-antenna amplifier coefficients, one entry per Tx-chain."""

    coefficients: tuple[PACoefficients, ...]

    def __post_init__(self):
        coeffs = tuple(self.coefficients)
        if not coeffs:
            raise ValueError("PAArray needs at least one amplifier")
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def uniform(cls, coeff: PACoefficients, M: int) -> "PAArray":
        return cls((coeff,) * M)

    @classmethod
    def from_arrays(cls, a1: Iterable[complex], a3: Iterable[complex]) -> "PAArray":
        a1 = list(a1)
        a3 = list(a3)
        if len(a1) != len(a3):
            raise ValueError(f"a1 and a3 lengths differ ({len(a1)} != {len(a3)})")
        return cls(tuple(PACoefficients(x, y) for x, y in zip(a1, a3)))

    def __len__(self) -> int:
        return len(self.coefficients)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return PAArray(self.coefficients[idx])
        return self.coefficients[idx]

    @property
    def a1(self) -> np.ndarray:
        return np.array([c.a1 for c in self.coefficients], dtype=complex)

    @property
    def a3(self) -> np.ndarray:
        return np.array([c.a3 for c in self.coefficients], dtype=complex)

    @property
    def alpha(self) -> np.ndarray:
        return self.a1

    @property
    def beta(self) -> np.ndarray:
        return 2 * self.a3


@dataclass(frozen=True)
class BussgangModel:
    """Linear gain and distortion covariance for a given precoder.

    Attributes
    ----------
    gain : ndarray, shape (M, M)
        Diagonal Bussgang gain matrix ``G(W)``.
    covariance : ndarray, shape (M, M)
        Hermitian PSD covariance of the distortion term.
    """

    gain: np.ndarray
    covariance: np.ndarray


def crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Draw CN(0, 1) samples: real and imaginary parts each of variance 1/2."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def pa_response(x, c: PACoefficients):
    """Evaluate ``a1 x + a3 |x|^2 x`` (scalar or array input)."""
    return c.a1 * x + c.a3 * (np.abs(x) ** 2) * x


def _check_rows(n_rows: int, pa: PAArray, what: str):
    if n_rows != len(pa):
        raise ValueError(f"{what} has {n_rows} rows but the PA array has {len(pa)} amplifiers")


def apply_pa(x, pa: PAArray) -> np.ndarray:
    """Apply the component-wise PA response.

    ``x`` has shape (M,) or (M, n); row ``m`` goes through amplifier ``m``.
    """
    x = np.asarray(x, dtype=complex)
    _check_rows(x.shape[0], pa, "input")
    a1 = pa.a1
    a3 = pa.a3
    if x.ndim == 2:
        a1 = a1[:, None]
        a3 = a3[:, None]
    return a1 * x + a3 * (x.real**2 + x.imag**2) * x


def row_powers(W) -> np.ndarray:
    """Squared row norms of ``W``.

    Objects exposing ``amplitudes`` (see :class:`nlazf.precoder.Precoder`)
    contribute those magnitudes directly, so column phase rotations leave
    the result bit-identical.
    """
    amps = getattr(W, "amplitudes", None)
    if amps is None:
        amps = np.abs(np.atleast_2d(np.asarray(W, dtype=complex)))
    return np.sum(np.atleast_2d(amps) ** 2, axis=1)


def bussgang_gain(W, pa: PAArray) -> np.ndarray:
    rho = row_powers(W)
    _check_rows(rho.shape[0], pa, "W")
    return np.diag(pa.alpha + pa.beta * rho)


def distortion_covariance(W, pa: PAArray) -> np.ndarray:
    """Covariance of the Bussgang distortion for Gaussian symbols.

    ``C = 1/2 B [(W W^H) o (W* W^T) o (W W^H)] B^H`` with ``B = diag(beta)``.
    """
    W = np.atleast_2d(np.asarray(W, dtype=complex))
    _check_rows(W.shape[0], pa, "W")
    R = W @ W.conj().T
    core = R * R.conj() * R
    beta = pa.beta
    C = 0.5 * beta[:, None] * core * beta.conj()[None, :]
    # symmetrize away rounding so C == C^H holds exactly
    return 0.5 * (C + C.conj().T)


def bussgang(W, pa: PAArray) -> BussgangModel:
    return BussgangModel(gain=bussgang_gain(W, pa), covariance=distortion_covariance(W, pa))


@dataclass(frozen=True)
class EmpiricalDistortion:
    """Sample moments of the distortion term with their standard errors."""

    covariance: np.ndarray
    covariance_stderr: np.ndarray
    cross: np.ndarray
    cross_stderr: np.ndarray
    n_samples: int


def empirical_distortion_stats(
    W, pa: PAArray, n_samples: int, seed: int, chunk: int = 200_000
) -> EmpiricalDistortion:
    """Monte Carlo estimate of ``E{eta eta^H}`` and ``E{eta s^H}``.

    Standard errors are per entry, ``sqrt((E|z|^2 - |E z|^2) / n)`` for the
    complex per-sample product ``z``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    W = np.atleast_2d(np.asarray(W, dtype=complex))
    _check_rows(W.shape[0], pa, "W")
    M, K = W.shape
    G = np.diag(bussgang_gain(W, pa))
    rng = np.random.default_rng(seed)

    s_cc = np.zeros((M, M), dtype=complex)
    s_cc2 = np.zeros((M, M))
    s_cs = np.zeros((M, K), dtype=complex)
    s_cs2 = np.zeros((M, K))
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        s = crandn(rng, (K, n))
        x = W @ s
        eta = apply_pa(x, pa) - G[:, None] * x
        e2 = eta.real**2 + eta.imag**2
        ss2 = s.real**2 + s.imag**2
        s_cc += eta @ eta.conj().T
        s_cc2 += e2 @ e2.T
        s_cs += eta @ s.conj().T
        s_cs2 += e2 @ ss2.T
        done += n

    cov = s_cc / n_samples
    cross = s_cs / n_samples
    cov_se = np.sqrt(np.maximum(s_cc2 / n_samples - np.abs(cov) ** 2, 0.0) / n_samples)
    cross_se = np.sqrt(np.maximum(s_cs2 / n_samples - np.abs(cross) ** 2, 0.0) / n_samples)
    return EmpiricalDistortion(cov, cov_se, cross, cross_se, n_samples)


def empirical_distortion_covariance(
    W, pa: PAArray, n_samples: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Sample averages of ``eta eta^H`` and ``eta s^H`` (deterministic per seed)."""
    stats = empirical_distortion_stats(W, pa, n_samples, seed)
    return stats.covariance, stats.cross


def as_pa_array(pa, M: int | None = None) -> PAArray:
    """Coerce a PAArray, a single PACoefficients, or a sequence of them."""
    if isinstance(pa, PAArray):
        out = pa
    elif isinstance(pa, PACoefficients):
        if M is None:
            raise ValueError("antenna count needed to broadcast a single PA")
        out = PAArray.uniform(pa, M)
    elif isinstance(pa, Sequence):
        out = PAArray(tuple(pa))
    else:
        raise TypeError(f"cannot interpret {type(pa).__name__} as a PA array")
    if M is not None and len(out) != M:
        raise ValueError(f"PA array has {len(out)} amplifiers, expected {M}")
    return out
