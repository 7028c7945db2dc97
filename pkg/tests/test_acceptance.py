"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also collected into a summary section at the end of the session.
"""

import dataclasses
import time

import numpy as np

from nlazf.cli import main
from nlazf.metrics import effective_channel, empirical_sindr, sindr_per_user, to_db
from nlazf.pa_model import (
    DEFAULT_PA,
    PACoefficients,
    bussgang_gain,
    crandn,
    distortion_covariance,
    empirical_distortion_stats,
)
from nlazf.precoder import (
    ConvergenceError,
    PowerAllocation,
    naive_zf,
    nla_zf_alg1,
    nla_zf_alg2,
    nla_zf_block,
    ratio_r,
    rotate_columns,
)
from nlazf.simulation import SimConfig, run_sweep

from .conftest import record_criterion, weak_pa

E_S = 1.0
EQ = PowerAllocation.equal(E_S)
SNR_GRID = tuple(float(s) for s in range(0, 55, 5))


def offdiag_over_gain(H, W, pa):
    E = effective_channel(H, W, pa)
    off = np.abs(E - np.diag(np.diag(E)))
    return off.max() / np.abs(np.diag(E)).min()


def test_criterion_1_bussgang_validation():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_cov = worst_cross = 0.0
    for j in range(20):
        M = 2 if j % 2 == 0 else 4
        W = crandn(rng, (M, 2))
        W *= np.sqrt(0.5) / np.linalg.norm(W, axis=0)
        pa = weak_pa(rng, M)
        stats = empirical_distortion_stats(W, pa, 1_000_000, seed=1000 + j)
        C = distortion_covariance(W, pa)
        worst_cov = max(worst_cov, np.max(np.abs(stats.covariance - C) / stats.covariance_stderr))
        worst_cross = max(worst_cross, np.max(np.abs(stats.cross) / stats.cross_stderr))
    elapsed = time.perf_counter() - t0
    passed = worst_cov <= 5 and worst_cross <= 5 and elapsed < 60
    record_criterion(
        1,
        passed,
        f"worst |C_emp - C|/SE = {worst_cov:.2f}, worst |E(eta s^H)|/SE = {worst_cross:.2f} "
        f"(limit 5), {elapsed:.1f} s",
    )
    assert passed


def test_criterion_2_solver_contract():
    rng = np.random.default_rng(202)
    n, converged, worst_iter, worst_r, worst_off = 1000, 0, 0, 0.0, 0.0
    ok = True
    for _ in range(n):
        H = crandn(rng, (2, 2))
        pa = weak_pa(rng, 2)
        try:
            rep = nla_zf_alg2(H, pa, EQ, tol=1e-4)
        except ConvergenceError:
            continue
        converged += 1
        worst_iter = max(worst_iter, rep.iterations)
        r_dev = max(abs(ratio_r(rep.amplitudes, H, pa, i) - 1) for i in (1, 2))
        off = offdiag_over_gain(H, rep.precoder, pa)
        worst_r, worst_off = max(worst_r, r_dev), max(worst_off, off)
        ok &= rep.iterations <= 10 and r_dev <= 1e-4 and off <= 1e-3
    passed = ok and converged >= 0.99 * n
    record_criterion(
        2,
        passed,
        f"{converged}/{n} converged, max {worst_iter} iterations, max |r-1| = {worst_r:.2e}, "
        f"max offdiag/min|gamma| = {worst_off:.2e}",
    )
    assert passed


def test_criterion_3_cross_algorithm_agreement():
    rng = np.random.default_rng(303)
    n, agree, alg1_failed = 100, 0, 0
    diffs = []
    for _ in range(n):
        H = crandn(rng, (2, 2))
        pa = weak_pa(rng, 2)
        ref = nla_zf_alg2(H, pa, EQ, tol=1e-4)
        try:
            rep = nla_zf_alg1(H, pa, EQ, tol=1e-3, eps=1e-5 * E_S)
        except ConvergenceError as exc:
            rep = exc.report
            alg1_failed += 1
        d = np.max(np.abs(rep.amplitudes**2 - ref.amplitudes**2))
        diffs.append(d)
        agree += d <= 1e-4 * E_S
    passed = agree == n
    record_criterion(
        3,
        passed,
        f"{agree}/{n} instances within 1e-4*E_s (median diff {np.median(diffs):.2e}, "
        f"max {np.max(diffs):.2e}, algorithm 1 non-converged on {alg1_failed})",
    )
    assert passed


def test_criterion_4_phase_invariance():
    rng = np.random.default_rng(404)
    bit_identical = 0
    for _ in range(100):
        M = int(rng.choice([2, 4, 6]))
        W = crandn(rng, (M, 2))
        pa = weak_pa(rng, M)
        phases = rng.uniform(-np.pi, np.pi, 2)
        bit_identical += np.array_equal(bussgang_gain(rotate_columns(W, phases), pa), bussgang_gain(W, pa))

    residual_ok = gains_ok = True
    worst_res_change = worst_imag = 0.0
    for _ in range(100):
        M = int(rng.choice([2, 4, 8]))
        H = crandn(rng, (2, M))
        pa = weak_pa(rng, M)
        rep = nla_zf_block(H, pa, EQ)
        before = offdiag_over_gain(H, rep.precoder, pa)
        after = offdiag_over_gain(H, rotate_columns(rep.precoder, rng.uniform(-np.pi, np.pi, 2)), pa)
        change = abs(after - before) / max(before, 1e-300)
        worst_res_change = max(worst_res_change, change)
        residual_ok &= change <= 1e-6 or abs(after - before) <= 1e-15
        for block in rep.blocks:
            g = block.gammas
            imag = np.max(np.abs(g.imag) / np.abs(g))
            worst_imag = max(worst_imag, imag)
            gains_ok &= bool(np.all(g.real > 0)) and imag <= 1e-10

    passed = bit_identical == 100 and residual_ok and gains_ok
    record_criterion(
        4,
        passed,
        f"gain bit-identical in {bit_identical}/100, max relative residual change {worst_res_change:.1e}, "
        f"max |Im gamma|/|gamma| = {worst_imag:.1e}",
    )
    assert passed


def test_criterion_5_linear_limit():
    linear = PACoefficients(1.0, 0.0)
    rng = np.random.default_rng(505)
    worst_itf = 0.0
    for _ in range(100):
        H = crandn(rng, (2, 2))
        pa_arr = weak_pa(rng, 2, a3=0.0, fraction=0.0)
        for W in (naive_zf(H, EQ), nla_zf_block(H, pa_arr, EQ).precoder):
            worst_itf = max(worst_itf, offdiag_over_gain(H, W, pa_arr))

    cfg = SimConfig(
        M=2,
        n_realizations=200,
        snr_grid_db=SNR_GRID,
        pa_nominal=linear,
        pa_tolerance_fraction=0.0,
        seed=55,
    )
    res = run_sweep(cfg)
    worst_db = max(
        float(np.max(np.abs(res.curve("nla_zf", bo) - res.curve("naive_zf", bo)))) for bo in cfg.backoff_db
    )
    passed = worst_itf <= 1e-12 and worst_db <= 1e-9
    record_criterion(
        5,
        passed,
        f"max offdiag/|gamma| = {worst_itf:.1e} (limit 1e-12), max SINDR curve gap = {worst_db:.1e} dB (limit 1e-9)",
    )
    assert passed


def _trend_config(M):
    return SimConfig(M=M, n_realizations=1000, snr_grid_db=SNR_GRID, backoff_db=(0.0, 7.0), pa_nominal=DEFAULT_PA, seed=6)


def test_criterion_6_trend_m2():
    t0 = time.perf_counter()
    res = run_sweep(_trend_config(2))
    elapsed = time.perf_counter() - t0
    top = SNR_GRID[-1]
    parts, passed = [], elapsed < 300
    for bo in (0.0, 7.0):
        nla = res.cell("nla_zf", bo, top).mean_sindr_db
        zf = res.cell("naive_zf", bo, top).mean_sindr_db
        passed &= nla > zf
        parts.append(f"b_off {bo:g} dB: NLA-ZF {nla:.2f} vs ZF {zf:.2f} dB")
    record_criterion(6, passed, f"at {top:g} dB SNR, " + "; ".join(parts) + f" ({elapsed:.1f} s)")
    assert passed


def test_criterion_7_trend_m8():
    res2 = run_sweep(_trend_config(2))
    res8 = run_sweep(_trend_config(8))
    bf_margin = min(
        float(np.min(res8.curve("nla_zf", bo) - res2.curve("nla_zf", bo))) for bo in (0.0, 7.0)
    )
    sir_gap = min(
        res.cell("nla_zf", bo, 0.0).mean_sir_db - res.cell("naive_zf", bo, 0.0).mean_sir_db
        for res in (res2, res8)
        for bo in (0.0, 7.0)
    )
    sdr_gain = min(
        res.cell(name, 7.0, 0.0).mean_sdr_db - res.cell(name, 0.0, 0.0).mean_sdr_db
        for res in (res2, res8)
        for name in ("naive_zf", "nla_zf")
    )
    passed = bf_margin > 0 and sir_gap >= 30 and sdr_gain > 0
    record_criterion(
        7,
        passed,
        f"min NLA-ZF SINDR(M=8) - SINDR(M=2) = {bf_margin:.2f} dB, min SIR gap = {sir_gap:.1f} dB (>= 30), "
        f"min SDR gain from 7 dB back-off = {sdr_gain:.2f} dB",
    )
    assert passed


def test_criterion_8_cli_determinism(tmp_path, capsys):
    base = ["sweep", "--seed", "8", "--realizations", "300", "-M", "4"]
    outs = []
    for tag, threads in (("a", 1), ("b", 1), ("c", 4)):
        out = tmp_path / tag
        assert main([*base, "--threads", str(threads), "--out", str(out)]) == 0
        outs.append((out / "sweep.csv").read_bytes())
    passed = outs[0] == outs[1] == outs[2]
    record_criterion(8, passed, "sweep.csv byte-identical across two 1-thread runs and a 4-thread run" if passed else "sweep.csv differs")
    assert passed


def test_criterion_9_metrics_oracle():
    rng = np.random.default_rng(909)
    worst = 0.0
    for j in range(20):
        M = 2 if j < 10 else 4
        H = crandn(rng, (2, M))
        pa = weak_pa(rng, M)
        W = naive_zf(H, EQ) if j % 2 == 0 else nla_zf_block(H, pa, EQ).precoder
        n0 = E_S / 10 ** (rng.uniform(10, 30) / 10)
        analytic = sindr_per_user(H, W, pa, n0).sindr
        emp = empirical_sindr(H, W, pa, n0, 1_000_000, seed=900 + j)
        worst = max(worst, float(np.max(np.abs(to_db(emp) - to_db(analytic)))))
    passed = worst <= 0.5
    record_criterion(9, passed, f"max |empirical - analytic| SINDR = {worst:.3f} dB over 20 instances (limit 0.5)")
    assert passed
