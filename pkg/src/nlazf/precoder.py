"""Naive ZF and non-linearity-aware ZF (NLA-ZF) precoding for two users.

The NLA-ZF solvers work on the 2x2 problem ``H G(W) W = diag(gamma)``.
Interference cancellation splits into an amplitude part (the ratios
``r_1, r_2`` must equal one) and a phase part that is then solved in
closed form. Larger even arrays are handled as independent 2x2 antenna
pairs whose effective gains are rotated to add in phase.

Amplitude iterates are kept as squared magnitudes ``p[m, k] = |w_mk|^2``
so that the column power constraint is an exact sum.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import effective_channel
from .pa_model import PAArray, as_pa_array, bussgang_gain

__all__ = [
    "PowerAllocation",
    "Precoder",
    "SolverReport",
    "PrecoderError",
    "DegenerateChannelError",
    "ConvergenceError",
    "check_channel",
    "naive_zf",
    "ratio_r",
    "coupling_g",
    "nla_zf_alg1",
    "nla_zf_alg2",
    "solve_phases",
    "rotate_columns",
    "effective_gains",
    "align_gains",
    "nla_zf_block",
]

log = logging.getLogger(__name__)

# |h_km| below this fraction of ||H|| is treated as zero
DEGENERATE_REL = 1e-10


class PrecoderError(Exception):
    """Base class for precoder failures."""


class DegenerateChannelError(PrecoderError):
    """A channel entry or amplitude needed by the ratio equations vanishes."""

    def __init__(self, message: str, entry: tuple[int, int] | None = None, block: int | None = None):
        super().__init__(message)
        self.entry = entry  # 0-based (user, antenna) of the offending h_km
        self.block = block

    @property
    def entry_name(self) -> str | None:
        return None if self.entry is None else _entry_name(self.entry)


class ConvergenceError(PrecoderError):
    """An iterative solver stopped without meeting its tolerance.

    ``report`` holds the last iterate (a valid, power-feasible precoder).
    """

    def __init__(self, message: str, report: "SolverReport", block: int | None = None):
        super().__init__(message)
        self.report = report
        self.block = block


@dataclass(frozen=True)
class PowerAllocation:
    """Per-user symbol energies ``E_{s,k}``; their sum is ``E_s``."""

    per_user: tuple[float, ...]

    def __post_init__(self):
        per_user = tuple(float(e) for e in self.per_user)
        if not per_user or any(not e > 0 for e in per_user):
            raise ValueError(f"per-user energies must be positive, got {per_user}")
        object.__setattr__(self, "per_user", per_user)

    @classmethod
    def equal(cls, total: float, K: int = 2) -> "PowerAllocation":
        return cls((total / K,) * K)

    @property
    def total(self) -> float:
        return sum(self.per_user)

    @property
    def K(self) -> int:
        return len(self.per_user)

    def scaled(self, factor: float) -> "PowerAllocation":
        return PowerAllocation(tuple(e * factor for e in self.per_user))


class Precoder:
    """M x K precoding matrix that keeps its entry magnitudes alongside.

    The magnitudes feed the Bussgang gain. Phase-only operations such as
    :meth:`rotated` reuse them unchanged, so ``G(W)`` stays bit-identical
    under column rotation. ``np.asarray(precoder)`` gives the matrix.
    """

    def __init__(self, matrix, amplitudes=None):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=complex))
        self.amplitudes = np.abs(self.matrix) if amplitudes is None else np.asarray(amplitudes, dtype=float)
        if self.amplitudes.shape != self.matrix.shape:
            raise ValueError("amplitudes and matrix shapes differ")

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype, copy=False)

    def __repr__(self):
        return f"Precoder({self.matrix!r})"

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def phases(self) -> np.ndarray:
        return np.angle(self.matrix)

    @property
    def column_powers(self) -> np.ndarray:
        return np.sum(self.amplitudes**2, axis=0)

    def rotated(self, phases) -> "Precoder":
        rot = np.exp(1j * np.asarray(phases, dtype=float))
        return Precoder(self.matrix * rot[None, :], self.amplitudes)


@dataclass
class SolverReport:
    """Result of an NLA-ZF solve.

    Attributes
    ----------
    precoder : ndarray or Precoder, shape (M, 2)
    iterations : int
        Number of amplitude updates performed.
    final_ratios : ndarray, shape (2,)
        ``r_1, r_2`` at the returned amplitudes. For a block solve, the
        per-equation value furthest from one across blocks.
    converged : bool
    gammas : ndarray, shape (2,)
        Diagonal of ``H G(W) W``.
    residual_history : list of float
        ``max_i |r_i - 1|`` after every update.
    blocks : tuple of SolverReport
        Per antenna-pair reports (block solves only).
    """

    precoder: np.ndarray
    iterations: int
    final_ratios: np.ndarray
    converged: bool
    gammas: np.ndarray
    residual_history: list = field(default_factory=list)
    blocks: tuple = ()

    @property
    def amplitudes(self) -> np.ndarray:
        amps = getattr(self.precoder, "amplitudes", None)
        return np.abs(self.precoder) if amps is None else amps


def check_channel(H, K: int | None = None) -> np.ndarray:
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    if H.ndim != 2:
        raise ValueError("channel must be a K x M matrix")
    if K is not None and H.shape[0] != K:
        raise ValueError(f"expected {K} users, channel has {H.shape[0]} rows")
    if H.shape[1] < H.shape[0]:
        raise ValueError(f"need M >= K, got a {H.shape[0]}x{H.shape[1]} channel")
    if not np.all(np.isfinite(H)):
        raise ValueError("channel has non-finite entries")
    return H


def naive_zf(H, power: PowerAllocation, cond_max: float = 1e12) -> np.ndarray:
    """Right pseudo-inverse of ``H`` with columns scaled to ``E_{s,k}``.

    Raises
    ------
    DegenerateChannelError
        If ``H`` is rank deficient or its condition number exceeds
        ``cond_max``.
    """
    H = check_channel(H, power.K)
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > cond_max:
        raise DegenerateChannelError(f"channel condition number {cond:.3g} exceeds {cond_max:.3g}")
    HH = H @ H.conj().T
    W = H.conj().T @ np.linalg.inv(HH)
    norms = np.linalg.norm(W, axis=0)
    return W * (np.sqrt(power.per_user) / norms)[None, :]


# --- 2x2 amplitude equations -------------------------------------------------
#
# With 0-based indices, r_1 pairs h[1,1] (numerator) with h[1,0] and
# column 0 of W; r_2 pairs h[0,1] with h[0,0] and column 1 of W.
_RATIO_ENTRIES = {1: ((1, 1), (1, 0)), 2: ((0, 1), (0, 0))}


def _entry_name(idx) -> str:
    return f"h{idx[0] + 1}{idx[1] + 1}"


def _check_2x2(H, pa: PAArray):
    H = np.asarray(H, dtype=complex)
    if H.shape != (2, 2):
        raise ValueError(f"2x2 channel required, got shape {H.shape}")
    if len(pa) != 2:
        raise ValueError(f"2x2 problem needs 2 amplifiers, got {len(pa)}")
    thresh = DEGENERATE_REL * np.linalg.norm(H)
    for num, den in _RATIO_ENTRIES.values():
        for idx in (num, den):
            if not abs(H[idx]) > thresh:
                name = _entry_name(idx)
                raise DegenerateChannelError(f"degenerate channel: |{name}| = {abs(H[idx]):.3g}", entry=idx)
    return H


class _Problem2x2:
    """Scalar view of one 2x2 instance, tuned for tight Python loops."""

    def __init__(self, H, pa: PAArray, power: PowerAllocation):
        H = _check_2x2(H, pa)
        if power.K != 2:
            raise ValueError("two users required")
        self.H = H
        self.pa = pa
        self.power = power
        self.E = power.per_user
        self.habs = np.abs(H).tolist()
        self.alpha = [complex(a) for a in pa.alpha]
        self.beta = [complex(b) for b in pa.beta]

    def gains(self, p):
        return (
            self.alpha[0] + self.beta[0] * (p[0][0] + p[0][1]),
            self.alpha[1] + self.beta[1] * (p[1][0] + p[1][1]),
        )

    def coupling(self, p, i):
        g0, g1 = self.gains(p)
        den = abs(g0)
        if den == 0:
            raise DegenerateChannelError("Bussgang gain of antenna 1 vanishes")
        (nr, nc), (dr, dc) = _RATIO_ENTRIES[i]
        return self.habs[nr][nc] * abs(g1) / (self.habs[dr][dc] * den)

    def ratios(self, p):
        g1 = self.coupling(p, 1)
        g2 = self.coupling(p, 2)
        if p[0][0] <= 0 or p[0][1] <= 0:
            raise DegenerateChannelError("zero denominator amplitude in ratio equations")
        return (
            g1 * math.sqrt(p[1][0] / p[0][0]),
            g2 * math.sqrt(p[1][1] / p[0][1]),
        )

    def initial(self):
        # equal split per column, zero phases
        return [[self.E[0] / 2, self.E[1] / 2], [self.E[0] / 2, self.E[1] / 2]]

    def report(self, p, iterations, converged, history) -> SolverReport:
        amps = np.sqrt(np.array(p, dtype=float))
        W = _phased(amps, self.H, self.pa)
        r = np.array(self.ratios(p))
        gammas = np.diag(effective_channel(self.H, W, self.pa)).copy()
        return SolverReport(W, iterations, r, converged, gammas, history)


def _within(r, tol) -> bool:
    return abs(r[0] - 1.0) <= tol and abs(r[1] - 1.0) <= tol


def _as_squared(amps) -> list:
    a = np.asarray(amps, dtype=float)
    if a.shape != (2, 2):
        raise ValueError(f"amplitudes must be 2x2, got shape {a.shape}")
    if np.any(a < 0):
        raise ValueError("amplitudes must be non-negative")
    return (a**2).tolist()


def _problem(H, pa, amps=None):
    pa = as_pa_array(pa, 2)
    if amps is not None:
        p = _as_squared(amps)
        E = (p[0][0] + p[1][0], p[0][1] + p[1][1])
        power = PowerAllocation(tuple(e if e > 0 else 1.0 for e in E))
    else:
        power = PowerAllocation.equal(1.0)
    return _Problem2x2(H, pa, power)


def ratio_r(amps, H, pa: PAArray, i: int) -> float:
    """Magnitude ratio ``r_i`` of the 2x2 interference equations.

    ``amps[m, k] = |w_mk|``. ``r_1`` belongs to the interference from
    user 1's stream at user 2, ``r_2`` to user 2's stream at user 1.
    """
    if i not in (1, 2):
        raise ValueError("i must be 1 or 2")
    prob = _problem(H, pa, amps)
    return prob.ratios(_as_squared(amps))[i - 1]


def coupling_g(amps, H, pa: PAArray, i: int) -> float:
    """``g_i = r_i |w_1k| / |w_2k|``: the channel/gain part of ``r_i``."""
    if i not in (1, 2):
        raise ValueError("i must be 1 or 2")
    prob = _problem(H, pa, amps)
    return prob.coupling(_as_squared(amps), i)


def nla_zf_alg1(
    H,
    pa: PAArray,
    power: PowerAllocation,
    tol: float = 1e-3,
    eps: float | None = None,
    max_iter: int = 1_000_000,
) -> SolverReport:
    """Fixed-step power transfer solver for the 2x2 case.

    Each iteration moves ``eps`` of squared amplitude between the two
    entries of a column whose ratio lies outside ``[1 - tol, 1 + tol]``:
    away from the numerator entry when ``r_i > 1 + tol``, towards it when
    ``r_i < 1 - tol``. Column powers are preserved exactly.

    Raises
    ------
    ConvergenceError
        After ``max_iter`` iterations, or when a transfer would make a
        squared amplitude negative.
    DegenerateChannelError
    """
    prob = _Problem2x2(H, as_pa_array(pa, 2), power)
    if eps is None:
        eps = 1e-5 * power.total
    if not 0 < eps < min(power.per_user):
        raise ValueError(f"eps must lie in (0, min E_s,k), got {eps}")
    if tol <= 0:
        raise ValueError("tol must be positive")

    p = prob.initial()
    history = []
    n = 0
    lo, hi = 1.0 - tol, 1.0 + tol
    r = prob.ratios(p)
    while not _within(r, tol):
        if n >= max_iter:
            raise ConvergenceError(f"no convergence after {max_iter} iterations", prob.report(p, n, False, history))
        for k in (0, 1):
            rk = prob.ratios(p)[k]
            if rk < lo:
                step = -eps
            elif rk > hi:
                step = eps
            else:
                continue
            # k-th column: row 0 carries the denominator, row 1 the numerator
            new_den = p[0][k] + step
            new_num = p[1][k] - step
            if new_den <= 0 or new_num <= 0:
                raise ConvergenceError(
                    f"power transfer of {eps:g} would empty |w_{1 if new_den <= 0 else 2}{k + 1}|^2",
                    prob.report(p, n, False, history),
                )
            p[0][k] = new_den
            p[1][k] = power.per_user[k] - new_den
        n += 1
        r = prob.ratios(p)
        history.append(max(abs(r[0] - 1.0), abs(r[1] - 1.0)))
    return prob.report(p, n, True, history)


def nla_zf_alg2(
    H,
    pa: PAArray,
    power: PowerAllocation,
    tol: float = 1e-4,
    max_iter: int = 100,
) -> SolverReport:
    """Fixed-point solver for the 2x2 case.

    Each sweep freezes ``g_i`` and solves the column system
    ``|w_1k|^2 + |w_2k|^2 = E_{s,k}``, ``g_i^2 |w_2k|^2 = |w_1k|^2``,
    column 1 first and column 2 with the refreshed column-1 values. At
    least one sweep is always performed.

    Raises
    ------
    ConvergenceError
        If the ratios are still outside ``[1 - tol, 1 + tol]`` after
        ``max_iter`` sweeps.
    DegenerateChannelError
    """
    prob = _Problem2x2(H, as_pa_array(pa, 2), power)
    if tol <= 0:
        raise ValueError("tol must be positive")
    E = power.per_user
    p = prob.initial()
    history = []
    for n in range(1, max_iter + 1):
        for k in (0, 1):
            g = prob.coupling(p, k + 1)
            p[1][k] = E[k] / (1.0 + g * g)
            p[0][k] = E[k] - p[1][k]
        r = prob.ratios(p)
        history.append(max(abs(r[0] - 1.0), abs(r[1] - 1.0)))
        if _within(r, tol):
            _note_monotonicity(history)
            return prob.report(p, n, True, history)
    raise ConvergenceError(f"no convergence after {max_iter} iterations", prob.report(p, max_iter, False, history))


def _note_monotonicity(history):
    for a, b in zip(history, history[1:]):
        if b > a:
            log.info("non-monotone residual in fixed-point iteration: %s", history)
            return


def _phased(amps: np.ndarray, H: np.ndarray, pa: PAArray) -> np.ndarray:
    """Attach the cancelling phases to 2x2 amplitudes (row 2 is the reference)."""
    W = amps.astype(complex)
    G = np.diag(bussgang_gain(W, pa))
    # interference of stream 1 at user 2 and of stream 2 at user 1
    phi11 = np.pi + np.angle(H[1, 1] * G[1]) - np.angle(H[1, 0] * G[0])
    phi12 = np.pi + np.angle(H[0, 1] * G[1]) - np.angle(H[0, 0] * G[0])
    W[0, 0] *= np.exp(1j * phi11)
    W[0, 1] *= np.exp(1j * phi12)
    return W


def solve_phases(amps, H, pa: PAArray, power: PowerAllocation | None = None) -> np.ndarray:
    """Build the complex 2x2 precoder from solved amplitudes.

    Phases of row 2 are fixed to zero; row-1 phases are chosen so that
    each off-diagonal entry of ``H G(W) W`` is a difference of two terms
    with opposite phase, which vanishes when ``r_i = 1``.
    """
    pa = as_pa_array(pa, 2)
    H = _check_2x2(H, pa)
    amps = np.asarray(amps, dtype=float)
    if power is not None:
        col = np.sum(amps**2, axis=0)
        if not np.allclose(col, power.per_user, rtol=1e-10, atol=0):
            raise ValueError(f"amplitudes carry column powers {col}, expected {power.per_user}")
    return _phased(amps, H, pa)


def rotate_columns(W, phases) -> Precoder:
    """Return ``W diag(exp(j phi_1), ..., exp(j phi_K))`` as a :class:`Precoder`."""
    if not isinstance(W, Precoder):
        W = Precoder(W)
    return W.rotated(phases)


def effective_gains(H, W, pa: PAArray) -> np.ndarray:
    return np.diag(effective_channel(H, W, pa)).copy()


def align_gains(H, W, pa: PAArray) -> Precoder:
    """Rotate the columns of ``W`` so every effective gain is real positive."""
    return rotate_columns(W, -np.angle(effective_gains(H, W, pa)))


def _solve_pair(Hl, pal, power, algorithm, tol, eps, max_iter):
    if algorithm == 1:
        return nla_zf_alg1(Hl, pal, power, tol=tol, eps=eps, max_iter=max_iter)
    if algorithm == 2:
        return nla_zf_alg2(Hl, pal, power, tol=tol, max_iter=max_iter)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def nla_zf_block(
    H,
    pa: PAArray,
    power: PowerAllocation,
    tol: float = 1e-4,
    max_iter: int = 100,
    algorithm: int = 2,
    eps: float | None = None,
) -> SolverReport:
    """NLA-ZF for two users and an even number of antennas.

    Antennas are grouped in consecutive pairs. Each pair is solved as an
    independent 2x2 problem with energy ``E_{s,k} / L`` per user, and its
    columns are rotated so that the pair's effective gains are real and
    positive; the pair gains then add coherently.

    Raises
    ------
    DegenerateChannelError, ConvergenceError
        From the failing antenna pair; ``.block`` holds its index. A
        ``ConvergenceError`` carries the fully assembled (aligned)
        precoder in its report.
    """
    H = check_channel(H, 2)
    M = H.shape[1]
    if M % 2:
        raise ValueError(f"M must be even, got {M}")
    pa = as_pa_array(pa, M)
    L = M // 2
    block_power = power.scaled(1.0 / L)

    reports = []
    failed = None
    for ell in range(L):
        cols = slice(2 * ell, 2 * ell + 2)
        Hl, pal = H[:, cols], pa[cols]
        try:
            rep = _solve_pair(Hl, pal, block_power, algorithm, tol, eps, max_iter)
        except DegenerateChannelError as exc:
            if exc.entry is None:
                raise DegenerateChannelError(f"antenna pair {ell}: {exc}", block=ell) from exc
            k, m = exc.entry[0], exc.entry[1] + 2 * ell
            name = _entry_name((k, m))
            raise DegenerateChannelError(
                f"degenerate channel: |{name}| = {abs(H[k, m]):.3g} (antenna pair {ell})", entry=(k, m), block=ell
            ) from exc
        except ConvergenceError as exc:
            exc.block = ell
            rep = exc.report
            failed = failed or exc
        Wl = align_gains(Hl, rep.precoder, pal)
        reports.append(
            SolverReport(
                Wl,
                rep.iterations,
                rep.final_ratios,
                rep.converged,
                effective_gains(Hl, Wl, pal),
                rep.residual_history,
            )
        )

    W = Precoder(
        np.vstack([r.precoder.matrix for r in reports]),
        np.vstack([r.precoder.amplitudes for r in reports]),
    )
    ratios = np.array(
        [max((r.final_ratios[i] for r in reports), key=lambda v: abs(v - 1.0)) for i in range(2)]
    )
    report = SolverReport(
        precoder=W,
        iterations=max(r.iterations for r in reports),
        final_ratios=ratios,
        converged=all(r.converged for r in reports),
        gammas=effective_gains(H, W, pa),
        residual_history=reports[0].residual_history if L == 1 else [],
        blocks=tuple(reports),
    )
    if failed is not None:
        raise ConvergenceError(f"antenna pair {failed.block}: {failed}", report, block=failed.block)
    return report
