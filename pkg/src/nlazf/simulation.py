"""Seeded Monte Carlo sweeps comparing naive ZF with NLA-ZF.

SNR convention: ``SNR = E_s / N0`` where ``E_s`` is the total symbol
energy *before* back-off and channel entries have unit power. Back-off
lowers the transmitted energy but leaves ``N0`` untouched, so it trades
received SNR for PA linearity.

Every realization draws its channel and PA array from its own seed
stream derived from ``(seed, realization index)``; the same draws are
reused for every precoder, back-off and SNR cell.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .metrics import link_terms, to_db
from .pa_model import DEFAULT_PA, PAArray, PACoefficients, crandn
from .precoder import (
    ConvergenceError,
    DegenerateChannelError,
    PowerAllocation,
    naive_zf,
    nla_zf_block,
)

__all__ = [
    "ConfigError",
    "SimConfig",
    "SweepCell",
    "SweepResult",
    "PRECODERS",
    "draw_channel",
    "perturb_pa",
    "apply_backoff",
    "realization_rng",
    "run_sweep",
]

PRECODERS = ("naive_zf", "nla_zf")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending setting."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _complex_to_json(z: complex):
    return [z.real, z.imag]


@dataclass(frozen=True)
class SimConfig:
    M: int = 2
    K: int = 2
    n_realizations: int = 1000
    snr_grid_db: tuple[float, ...] = tuple(float(s) for s in range(0, 55, 5))
    backoff_db: tuple[float, ...] = (0.0, 7.0)
    pa_nominal: PACoefficients = DEFAULT_PA
    pa_tolerance_fraction: float = 0.1
    precoders: tuple[str, ...] = PRECODERS
    algorithm: int = 2
    tol: float = 1e-4
    eps: float | None = None
    max_iter: int = 100
    seed: int = 0
    E_s: float = 1.0
    threads: int = 1
    max_failure_fraction: float = 0.01
    cap_db: float = 300.0

    def __post_init__(self):
        def fix(name, value):
            object.__setattr__(self, name, value)

        fix("snr_grid_db", tuple(float(s) for s in self.snr_grid_db))
        fix("backoff_db", tuple(float(b) for b in self.backoff_db))
        fix("precoders", tuple(self.precoders))
        if not isinstance(self.pa_nominal, PACoefficients):
            raise ConfigError("pa_nominal", "must be PACoefficients")
        self.validate()

    def validate(self):
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(key, msg)

        for key in ("M", "K", "n_realizations", "algorithm", "max_iter", "seed", "threads"):
            val = getattr(self, key)
            need(isinstance(val, int) and not isinstance(val, bool), key, f"must be an integer, got {val!r}")
        need(self.K == 2, "K", "only K = 2 users are supported")
        need(self.M >= 2 and self.M % 2 == 0, "M", f"M must be even and >= 2, got {self.M}")
        need(self.n_realizations >= 1, "n_realizations", "must be >= 1")
        need(len(self.snr_grid_db) >= 1, "snr_grid_db", "needs at least one value")
        need(len(self.backoff_db) >= 1, "backoff_db", "needs at least one value")
        need(all(b >= 0 for b in self.backoff_db), "backoff_db", "back-off must be >= 0 dB")
        need(0 <= self.pa_tolerance_fraction < 1, "pa_tolerance_fraction", "must lie in [0, 1)")
        need(
            len(self.precoders) >= 1 and all(p in PRECODERS for p in self.precoders),
            "precoders",
            f"must be a non-empty subset of {PRECODERS}",
        )
        need(len(set(self.precoders)) == len(self.precoders), "precoders", "duplicate entries")
        need(self.algorithm in (1, 2), "algorithm", "must be 1 or 2")
        need(self.tol > 0, "tol", "must be positive")
        need(self.eps is None or self.eps > 0, "eps", "must be positive")
        need(self.max_iter >= 1, "max_iter", "must be >= 1")
        need(self.E_s > 0, "E_s", "must be positive")
        need(self.threads >= 1, "threads", "must be >= 1")
        need(0 <= self.max_failure_fraction <= 1, "max_failure_fraction", "must lie in [0, 1]")
        need(self.cap_db > 0, "cap_db", "must be positive")

    @property
    def L(self) -> int:
        return self.M // 2

    @property
    def power(self) -> PowerAllocation:
        return PowerAllocation.equal(self.E_s, self.K)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["pa_nominal"] = {
            "a1": _complex_to_json(self.pa_nominal.a1),
            "a3": _complex_to_json(self.pa_nominal.a3),
        }
        d["snr_grid_db"] = list(self.snr_grid_db)
        d["backoff_db"] = list(self.backoff_db)
        d["precoders"] = list(self.precoders)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        pa = d.get("pa_nominal")
        if isinstance(pa, dict):
            d["pa_nominal"] = PACoefficients(_as_complex(pa["a1"]), _as_complex(pa.get("a3", 0)))
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown setting")
        return cls(**d)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


def _as_complex(v) -> complex:
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ValueError(f"complex pair must have 2 entries, got {v!r}")
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, str):
        return complex(v.replace(" ", ""))
    return complex(v)


def realization_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for one realization, a pure function of both ints."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def draw_channel(K: int, M: int, rng: np.random.Generator) -> np.ndarray:
    """IID Rayleigh channel, entries CN(0, 1)."""
    return crandn(rng, (K, M))


def perturb_pa(nominal: PACoefficients, fraction: float, M: int, rng: np.random.Generator) -> PAArray:
    """Per-antenna PA coefficients with independent uniform relative errors.

    ``a1_m = a1 (1 + u_m)`` and ``a3_m = a3 (1 + v_m)`` with ``u_m, v_m``
    drawn from ``U(-fraction, fraction)``.
    """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    u = rng.uniform(-fraction, fraction, M)
    v = rng.uniform(-fraction, fraction, M)
    return PAArray.from_arrays(nominal.a1 * (1 + u), nominal.a3 * (1 + v))


def apply_backoff(power: PowerAllocation, backoff_db: float) -> PowerAllocation:
    if backoff_db < 0:
        raise ValueError("back-off must be >= 0 dB")
    return power.scaled(10.0 ** (-backoff_db / 10.0))


@dataclass
class _Realization:
    # arrays indexed [precoder, backoff, user] (and snr for sindr)
    sindr: np.ndarray
    sir: np.ndarray
    sdr: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    degenerate: np.ndarray


def _matched_filter(H, power: PowerAllocation) -> np.ndarray:
    W = H.conj().T
    return W * (np.sqrt(power.per_user) / np.linalg.norm(W, axis=0))[None, :]


def _build_precoder(cfg: SimConfig, name: str, H, pa, power):
    """Return (W, converged, iterations, degenerate)."""
    if name == "naive_zf":
        try:
            return naive_zf(H, power), True, 0, False
        except DegenerateChannelError:
            return _matched_filter(H, power), False, 0, True
    try:
        rep = nla_zf_block(H, pa, power, tol=cfg.tol, max_iter=cfg.max_iter, algorithm=cfg.algorithm, eps=cfg.eps)
        return rep.precoder, True, rep.iterations, False
    except ConvergenceError as exc:
        # last iterate is still power-feasible; counted as a failure
        return exc.report.precoder, False, exc.report.iterations, False
    except DegenerateChannelError:
        # measure-zero under Rayleigh fading; recorded as a failed solve
        return _matched_filter(H, power), False, 0, True


def _simulate(cfg: SimConfig, index: int) -> _Realization:
    rng = realization_rng(cfg.seed, index)
    H = draw_channel(cfg.K, cfg.M, rng)
    pa = perturb_pa(cfg.pa_nominal, cfg.pa_tolerance_fraction, cfg.M, rng)
    n0 = cfg.E_s / 10.0 ** (np.asarray(cfg.snr_grid_db) / 10.0)

    P, B, S, K = len(cfg.precoders), len(cfg.backoff_db), len(cfg.snr_grid_db), cfg.K
    out = _Realization(
        sindr=np.empty((P, B, S, K)),
        sir=np.empty((P, B, K)),
        sdr=np.empty((P, B, K)),
        converged=np.empty((P, B), dtype=bool),
        iterations=np.empty((P, B), dtype=int),
        degenerate=np.zeros((P, B), dtype=bool),
    )
    for b, bo in enumerate(cfg.backoff_db):
        power = apply_backoff(cfg.power, bo)
        for p, name in enumerate(cfg.precoders):
            W, ok, its, degen = _build_precoder(cfg, name, H, pa, power)
            _, signal, interference, distortion = link_terms(H, W, pa)
            with np.errstate(divide="ignore", invalid="ignore"):
                out.sindr[p, b] = signal[None, :] / (interference + distortion + n0[:, None])
                out.sir[p, b] = np.where(interference > 0, signal / interference, np.inf)
                out.sdr[p, b] = np.where(distortion > 0, signal / distortion, np.inf)
            out.converged[p, b] = ok
            out.iterations[p, b] = its
            out.degenerate[p, b] = degen
    return out


@dataclass(frozen=True)
class SweepCell:
    precoder: str
    backoff_db: float
    snr_db: float
    mean_sindr_db: float
    mean_sir_db: float
    mean_sdr_db: float
    mean_sindr_lin: float
    mean_sir_lin: float
    mean_sdr_lin: float
    convergence_rate: float
    mean_iterations: float
    n_realizations: int
    n_failed: int
    capped: bool


@dataclass
class SweepResult:
    """Aggregated sweep.

    dB means are taken over realizations and users of per-realization dB
    values (infinite SIR/SDR clipped to ``cap_db``); linear means are kept
    alongside for comparison.
    """

    config: SimConfig
    cells: list[SweepCell]
    per_realization: dict = field(default_factory=dict, repr=False)

    def cell(self, precoder: str, backoff_db: float, snr_db: float) -> SweepCell:
        for c in self.cells:
            if c.precoder == precoder and c.backoff_db == backoff_db and c.snr_db == snr_db:
                return c
        raise KeyError((precoder, backoff_db, snr_db))

    def curve(self, precoder: str, backoff_db: float, metric: str = "mean_sindr_db") -> np.ndarray:
        return np.array([getattr(self.cell(precoder, backoff_db, s), metric) for s in self.config.snr_grid_db])

    def failure_fraction(self) -> float:
        return max((c.n_failed / c.n_realizations for c in self.cells), default=0.0)

    def table(self) -> list[dict]:
        """SIR / SDR per (precoder, back-off), averaged over the SNR grid."""
        rows = []
        for name in self.config.precoders:
            for bo in self.config.backoff_db:
                cells = [self.cell(name, bo, s) for s in self.config.snr_grid_db]
                rows.append(
                    {
                        "precoder": name,
                        "backoff_db": bo,
                        "M": self.config.M,
                        "sir_db": float(np.mean([c.mean_sir_db for c in cells])),
                        "sdr_db": float(np.mean([c.mean_sdr_db for c in cells])),
                    }
                )
        return rows


def _hits_cap(x: np.ndarray, cap_db: float) -> bool:
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(x)
    return bool(np.any(~np.isfinite(db) | (np.abs(db) >= cap_db)))


def run_sweep(config: SimConfig, threads: int | None = None) -> SweepResult:
    """Run every realization and aggregate per (precoder, back-off, SNR) cell.

    The result depends only on ``config``; ``threads`` changes scheduling,
    never the numbers.
    """
    config.validate()
    threads = config.threads if threads is None else threads
    indices = range(config.n_realizations)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reals = list(pool.map(lambda r: _simulate(config, r), indices))
    else:
        reals = [_simulate(config, r) for r in indices]

    # stacked in realization-index order: [r, precoder, backoff, ...]
    sindr = np.stack([x.sindr for x in reals])
    sir = np.stack([x.sir for x in reals])
    sdr = np.stack([x.sdr for x in reals])
    conv = np.stack([x.converged for x in reals])
    iters = np.stack([x.iterations for x in reals])
    cap = config.cap_db

    cells = []
    n = config.n_realizations
    for p, name in enumerate(config.precoders):
        for b, bo in enumerate(config.backoff_db):
            sir_pb, sdr_pb = sir[:, p, b], sdr[:, p, b]
            sir_db = float(np.mean(to_db(sir_pb, cap)))
            sdr_db = float(np.mean(to_db(sdr_pb, cap)))
            sir_lin = float(np.mean(sir_pb))
            sdr_lin = float(np.mean(sdr_pb))
            n_ok = int(conv[:, p, b].sum())
            mean_it = float(iters[:, p, b].mean())
            for s, snr in enumerate(config.snr_grid_db):
                x = sindr[:, p, b, s]
                capped = _hits_cap(x, cap) or _hits_cap(sir_pb, cap) or _hits_cap(sdr_pb, cap)
                cells.append(
                    SweepCell(
                        precoder=name,
                        backoff_db=bo,
                        snr_db=snr,
                        mean_sindr_db=float(np.mean(to_db(x, cap))),
                        mean_sir_db=sir_db,
                        mean_sdr_db=sdr_db,
                        mean_sindr_lin=float(np.mean(x)),
                        mean_sir_lin=sir_lin,
                        mean_sdr_lin=sdr_lin,
                        convergence_rate=n_ok / n,
                        mean_iterations=mean_it,
                        n_realizations=n,
                        n_failed=n - n_ok,
                        capped=capped,
                    )
                )
    per_real = {"sindr": sindr, "sir": sir, "sdr": sdr, "converged": conv, "iterations": iters}
    return SweepResult(config=config, cells=cells, per_realization=per_real)
