"""Command-line front end: ``nlazf sweep`` and ``nlazf solve``.

Exit codes: 0 success, 2 configuration error, 3 I/O error,
4 numerical or solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .metrics import effective_channel
from .pa_model import PAArray, PACoefficients
from .precoder import (
    ConvergenceError,
    DegenerateChannelError,
    check_channel,
    nla_zf_block,
    ratio_r,
)
from .simulation import ConfigError, SimConfig, SweepResult, _as_complex, apply_backoff, run_sweep

log = logging.getLogger("nlazf")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

SWEEP_COLUMNS = [
    "precoder",
    "backoff_db",
    "snr_db",
    "mean_sindr_db",
    "mean_sir_db",
    "mean_sdr_db",
    "convergence_rate",
    "mean_iterations",
    "n_realizations",
    "capped",
]
LINEAR_COLUMNS = ["mean_sindr_lin", "mean_sir_lin", "mean_sdr_lin"]
TABLE_COLUMNS = ["precoder", "backoff_db", "M", "sir_db", "sdr_db"]

# config file layout: section -> {file key: SimConfig field}
SCHEMA = {
    None: {"seed": "seed"},
    "system": {"M": "M", "K": "K", "E_s": "E_s"},
    "pa": {"tolerance_fraction": "pa_tolerance_fraction"},  # a1/a3 handled separately
    "solver": {"algorithm": "algorithm", "tol": "tol", "eps": "eps", "max_iter": "max_iter"},
    "sweep": {
        "n_realizations": "n_realizations",
        "snr_db": "snr_grid_db",
        "backoff_db": "backoff_db",
        "precoders": "precoders",
        "threads": "threads",
        "max_failure_fraction": "max_failure_fraction",
        "cap_db": "cap_db",
    },
}
_FIELD_PATH = {f: (f"{sec}.{k}" if sec else k) for sec, keys in SCHEMA.items() for k, f in keys.items()}
_FIELD_PATH["pa_nominal"] = "pa"

PRECODER_FLAGS = {"zf": ("naive_zf",), "nlazf": ("nla_zf",), "both": ("naive_zf", "nla_zf")}


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _grid(value, path: str) -> list[float]:
    if isinstance(value, dict):
        try:
            start, stop, step = float(value["start"]), float(value["stop"]), float(value["step"])
        except KeyError as exc:
            raise ConfigError(path, f"range needs start/stop/step, missing {exc.args[0]}") from None
        if step <= 0 or stop < start:
            raise ConfigError(path, "range needs step > 0 and stop >= start")
        n = int(round((stop - start) / step))
        return [start + i * step for i in range(n + 1)]
    if isinstance(value, (int, float)):
        return [float(value)]
    if isinstance(value, list):
        return [float(v) for v in value]
    raise ConfigError(path, f"expected a list or a start/stop/step range, got {value!r}")


def config_from_mapping(doc: dict) -> SimConfig:
    """Build a SimConfig from the nested file layout (defaults fill gaps)."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a mapping")
    fields = {}
    for sec, keys in SCHEMA.items():
        body = doc if sec is None else doc.get(sec, {})
        if body is None:
            body = {}
        if not isinstance(body, dict):
            raise ConfigError(sec, "must be a mapping")
        allowed = set(keys) | ({"a1", "a3"} if sec == "pa" else set())
        if sec is None:
            allowed |= {s for s in SCHEMA if s}
        for k in body:
            if k not in allowed:
                raise ConfigError(f"{sec}.{k}" if sec else str(k), "unknown setting")
        for k, f in keys.items():
            if k in body:
                fields[f] = body[k]

    pa = doc.get("pa") or {}
    if "a1" in pa or "a3" in pa:
        try:
            a1 = _as_complex(pa.get("a1", 1.0))
            a3 = _as_complex(pa.get("a3", 0.0))
        except (TypeError, ValueError) as exc:
            raise ConfigError("pa", f"bad coefficient: {exc}") from None
        try:
            fields["pa_nominal"] = PACoefficients(a1, a3)
        except ValueError as exc:
            raise ConfigError("pa.a1", str(exc)) from None
    for f in ("snr_grid_db", "backoff_db"):
        if f in fields:
            fields[f] = _grid(fields[f], _FIELD_PATH[f])
    if "precoders" in fields and isinstance(fields["precoders"], str):
        fields["precoders"] = [fields["precoders"]]
    try:
        return SimConfig(**fields)
    except ConfigError as exc:
        path = _FIELD_PATH.get(exc.key, exc.key)
        msg = str(exc).split(": ", 1)[-1]
        raise ConfigError(path, msg) from None
    except TypeError as exc:
        raise ConfigError("<root>", str(exc)) from None


def _set_path(doc: dict, dotted: str, value):
    parts = dotted.split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "path crosses a non-mapping value")
    node[parts[-1]] = value


def parse_config(path: str | Path | None, overrides: dict | None = None) -> SimConfig:
    """Load a YAML config and apply overrides.

    ``overrides`` maps dotted file paths (``"system.M"``, ``"seed"``) to
    values; they take precedence over the file.

    Raises
    ------
    CLIError
        With code 2 for a missing file, unparsable YAML, unknown keys or
        invalid values; the message names the offending key.
    """
    doc: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise CLIError(f"config file not found: {path}", EXIT_CONFIG)
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise CLIError(f"config file {path} is not valid YAML: {exc}", EXIT_CONFIG) from None
        except OSError as exc:
            raise CLIError(f"cannot read config {path}: {exc}", EXIT_CONFIG) from None
    for key, value in (overrides or {}).items():
        _set_path(doc, key, value)
    try:
        return config_from_mapping(doc)
    except ConfigError as exc:
        raise CLIError(f"invalid config: {exc}", EXIT_CONFIG) from None


# --- serialization -----------------------------------------------------------


def _num(x) -> str:
    # repr of a Python float round-trips exactly
    return repr(float(x))


def _lin(x: float, cap_db: float) -> float:
    return min(x, 10.0 ** (cap_db / 10.0))


def sweep_csv(result: SweepResult, linear: bool = False) -> str:
    cap = result.config.cap_db
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS + (LINEAR_COLUMNS if linear else []))
    for c in result.cells:
        row = [
            c.precoder,
            _num(c.backoff_db),
            _num(c.snr_db),
            _num(c.mean_sindr_db),
            _num(c.mean_sir_db),
            _num(c.mean_sdr_db),
            _num(c.convergence_rate),
            _num(c.mean_iterations),
            str(c.n_realizations),
            str(int(c.capped)),
        ]
        if linear:
            row += [_num(_lin(v, cap)) for v in (c.mean_sindr_lin, c.mean_sir_lin, c.mean_sdr_lin)]
        w.writerow(row)
    return buf.getvalue()


def table_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in result.table():
        w.writerow([r["precoder"], _num(r["backoff_db"]), str(r["M"]), _num(r["sir_db"]), _num(r["sdr_db"])])
    return buf.getvalue()


def _cell_stats(result: SweepResult) -> list[dict]:
    seen = {}
    for c in result.cells:
        key = (c.precoder, c.backoff_db)
        if key not in seen:
            seen[key] = {
                "precoder": c.precoder,
                "backoff_db": c.backoff_db,
                "convergence_rate": c.convergence_rate,
                "mean_iterations": c.mean_iterations,
                "n_failed": c.n_failed,
                "n_realizations": c.n_realizations,
            }
    return list(seen.values())


def _write(path: Path, text: str):
    try:
        path.write_text(text)
    except OSError as exc:
        raise CLIError(f"cannot write {path}: {exc}", EXIT_IO) from None


def _prepare_out(out: Path) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CLIError(f"cannot create output directory {out}: {exc}", EXIT_IO) from None
    return out


def cmd_sweep(config: SimConfig, out: Path, linear: bool = False) -> int:
    out = _prepare_out(out)
    t0 = time.perf_counter()
    result = run_sweep(config)
    elapsed = time.perf_counter() - t0

    paths = {"sweep": out / "sweep.csv", "table": out / "table.csv", "manifest": out / "manifest.json"}
    _write(paths["sweep"], sweep_csv(result, linear))
    _write(paths["table"], table_csv(result))
    manifest = {
        "tool": "nlazf",
        "version": __version__,
        "command": "sweep",
        "config": config.to_dict(),
        "artifacts": {k: str(v) for k, v in paths.items()},
        "wall_clock_s": elapsed,
        "solver_stats": _cell_stats(result),
    }
    _write(paths["manifest"], json.dumps(manifest, indent=2) + "\n")

    worst = result.failure_fraction()
    if worst > config.max_failure_fraction:
        print(
            f"solver failure fraction {worst:.4f} exceeds threshold {config.max_failure_fraction}",
            file=sys.stderr,
        )
        return EXIT_NUMERIC
    print(f"wrote {len(result.cells)} cells to {paths['sweep']} in {elapsed:.2f} s")
    return EXIT_OK


# --- solve -------------------------------------------------------------------


def _parse_matrix(text: str) -> np.ndarray:
    rows = [r for r in text.split(";") if r.strip()]
    return np.array([[_as_complex(v.strip()) for v in r.split(",")] for r in rows], dtype=complex)


def _parse_pa_list(text: str) -> PAArray:
    coeffs = []
    for item in text.split(","):
        a1, _, a3 = item.partition(":")
        coeffs.append(PACoefficients(_as_complex(a1.strip()), _as_complex(a3.strip() or 0)))
    return PAArray(tuple(coeffs))


def load_instance(path: Path) -> tuple[np.ndarray, PAArray | None]:
    """Read ``{"H": [[...], ...], "pa": [{"a1": .., "a3": ..}, ...]}`` (JSON or YAML)."""
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise CLIError(f"cannot read instance {path}: {exc}", EXIT_CONFIG) from None
    except yaml.YAMLError as exc:
        raise CLIError(f"instance {path} is not valid JSON/YAML: {exc}", EXIT_CONFIG) from None
    if not isinstance(doc, dict) or "H" not in doc:
        raise CLIError(f"instance {path}: missing key 'H'", EXIT_CONFIG)
    try:
        H = np.array([[_as_complex(v) for v in row] for row in doc["H"]], dtype=complex)
        pa = None
        if doc.get("pa") is not None:
            pa = PAArray(tuple(PACoefficients(_as_complex(c["a1"]), _as_complex(c.get("a3", 0))) for c in doc["pa"]))
    except (TypeError, ValueError, KeyError) as exc:
        raise CLIError(f"instance {path}: {exc}", EXIT_CONFIG) from None
    return H, pa


def _fmt_c(z: complex) -> str:
    z = complex(z)
    return f"{z.real!r}{z.imag:+}j"


def solve_report(config: SimConfig, H: np.ndarray, pa: PAArray, backoff_db: float = 0.0) -> tuple[dict, int]:
    """Solve one instance; returns (report dict, exit code)."""
    power = apply_backoff(config.power, backoff_db)
    code = EXIT_OK
    try:
        rep = nla_zf_block(H, pa, power, tol=config.tol, max_iter=config.max_iter, algorithm=config.algorithm, eps=config.eps)
    except ConvergenceError as exc:
        rep = exc.report
        code = EXIT_NUMERIC
    E = effective_channel(H, rep.precoder, pa)
    W = np.asarray(rep.precoder)
    off = np.abs(E - np.diag(np.diag(E)))
    ratios = []
    for ell, b in enumerate(rep.blocks):
        cols = slice(2 * ell, 2 * ell + 2)
        ratios.append([ratio_r(np.abs(W[cols]), H[:, cols], pa[cols], i) for i in (1, 2)])
    report = {
        "converged": rep.converged,
        "algorithm": config.algorithm,
        "tol": config.tol,
        "iterations": rep.iterations,
        "ratios": ratios,
        "gammas": [_fmt_c(g) for g in rep.gammas],
        "residual_offdiag": [[float(v) for v in row] for row in off],
        "max_offdiag_over_min_gain": float(off.max() / np.abs(np.diag(E)).min()),
        "column_power": [float(v) for v in np.sum(np.abs(W) ** 2, axis=0)],
        "W": [[_fmt_c(z) for z in row] for row in W],
    }
    return report, code


def _print_solve(report: dict, stream):
    w = csv.writer(stream, lineterminator="\n")
    stream.write("# W (rows: antennas, columns: users)\n")
    w.writerow([f"w_{k + 1}" for k in range(len(report["W"][0]))])
    for row in report["W"]:
        w.writerow(row)
    stream.write("# solver\n")
    w.writerow(["converged", report["converged"]])
    w.writerow(["iterations", report["iterations"]])
    for ell, (r1, r2) in enumerate(report["ratios"]):
        w.writerow([f"r_1[{ell}]", repr(r1)])
        w.writerow([f"r_2[{ell}]", repr(r2)])
    for k, g in enumerate(report["gammas"]):
        w.writerow([f"gamma_{k + 1}", g])
    for k, row in enumerate(report["residual_offdiag"]):
        for i, v in enumerate(row):
            if i != k:
                w.writerow([f"offdiag_{k + 1}{i + 1}", repr(v)])
    w.writerow(["max_offdiag_over_min_gain", repr(report["max_offdiag_over_min_gain"])])


def cmd_solve(config: SimConfig, H, pa: PAArray | None, out: Path | None = None, backoff_db: float = 0.0) -> int:
    try:
        H = check_channel(H, 2)
    except ValueError as exc:
        raise CLIError(f"bad channel: {exc}", EXIT_CONFIG) from None
    M = H.shape[1]
    if M % 2:
        raise CLIError(f"M must be even, channel has {M} columns", EXIT_CONFIG)
    if pa is None:
        pa = PAArray.uniform(config.pa_nominal, M)
    if len(pa) != M:
        raise CLIError(f"PA array has {len(pa)} amplifiers, channel has {M} antennas", EXIT_CONFIG)
    try:
        report, code = solve_report(config, H, pa, backoff_db)
    except DegenerateChannelError as exc:
        name = exc.entry_name or "channel"
        print(f"DegenerateChannel: {exc} [entry {name}]", file=sys.stderr)
        return EXIT_NUMERIC
    _print_solve(report, sys.stdout)
    if out is not None:
        out = _prepare_out(out)
        _write(out / "solve.json", json.dumps(report, indent=2) + "\n")
    if code != EXIT_OK:
        print("solver did not converge", file=sys.stderr)
    return code


# --- argument parsing ----------------------------------------------------------


def _override_pairs(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise CLIError(f"--set expects KEY=VALUE, got {item!r}", EXIT_CONFIG)
        out[key.strip()] = yaml.safe_load(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads for realizations")
    common.add_argument("--precoder", choices=sorted(PRECODER_FLAGS), help="precoders to evaluate")
    common.add_argument("--algorithm", type=int, choices=(1, 2), help="NLA-ZF amplitude solver")
    common.add_argument("--tol", type=float, help="tolerance on the ratios r_i")
    common.add_argument("--eps", type=float, help="power step of algorithm 1")
    common.add_argument("-M", "--antennas", dest="M", type=int, help="number of BS antennas (even)")
    common.add_argument("--realizations", type=int, help="Monte Carlo realizations")
    common.add_argument("--linear-output", action="store_true", help="add linear-domain mean columns")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. system.E_s=2")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="nlazf", description="NLA-ZF precoding under PA non-linearity")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sweep", parents=[common], help="Monte Carlo SINDR/SIR/SDR sweep")
    solve = sub.add_parser("solve", parents=[common], help="solve a single channel instance")
    solve.add_argument("--instance", metavar="PATH", help="JSON/YAML file with H and optional pa list")
    solve.add_argument("--channel", help='inline H, rows separated by ";" e.g. "1,0.5j;0.3,1"')
    solve.add_argument("--pa", help='inline PA list "a1:a3,a1:a3,..."; default: nominal PA on every antenna')
    solve.add_argument("--backoff", type=float, default=0.0, help="back-off in dB")
    return parser


def _flag_overrides(args) -> dict:
    o = _override_pairs(args.set)
    flat = {
        "seed": args.seed,
        "sweep.threads": args.threads,
        "solver.algorithm": args.algorithm,
        "solver.tol": args.tol,
        "solver.eps": args.eps,
        "system.M": args.M,
        "sweep.n_realizations": args.realizations,
    }
    o.update({k: v for k, v in flat.items() if v is not None})
    if args.precoder:
        o["sweep.precoders"] = list(PRECODER_FLAGS[args.precoder])
    return o


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = parse_config(args.config, _flag_overrides(args))
        if args.command == "sweep":
            return cmd_sweep(config, Path(args.out or "."), linear=args.linear_output)
        if args.instance and args.channel:
            raise CLIError("give either --instance or --channel, not both", EXIT_CONFIG)
        if args.instance:
            H, pa = load_instance(Path(args.instance))
        elif args.channel:
            try:
                H = _parse_matrix(args.channel)
            except ValueError as exc:
                raise CLIError(f"--channel: {exc}", EXIT_CONFIG) from None
            pa = None
        else:
            raise CLIError("solve needs --instance or --channel", EXIT_CONFIG)
        if args.pa:
            try:
                pa = _parse_pa_list(args.pa)
            except ValueError as exc:
                raise CLIError(f"--pa: {exc}", EXIT_CONFIG) from None
        return cmd_solve(config, H, pa, Path(args.out) if args.out else None, backoff_db=args.backoff)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
