"""Acceptance checks, one per criterion, each printing a single PASS/FAIL line.

Run with pytest, or directly: ``python3 tests/test_acceptance.py``.
Criteria 8-10 share one desk-scale sweep (default configuration, 200
realizations), which takes a few minutes on one core.
"""
from __future__ import annotations

import functools
import sys
import time

import numpy as np
import pytest

from gaussdrift import cli
from gaussdrift.config import DEFAULTS
from gaussdrift.environment import (SYSTEM_ID, dof_count, drop_particle, inject_particle,
                                    particle_block)
from gaussdrift.experiment import TrajectorySettings, cat_component, run_ensemble, run_experiment
from gaussdrift.hamiltonians import ExperimentHamiltonian, HarmonicOscillator
from gaussdrift.phasespace import (GaussianOperator, centroid, eta_factor, hs_inner,
                                   wavepacket_covariance)
from gaussdrift.propagator import DynamicalState, integrate, rhs_diagonal, rhs_offdiagonal

PERIOD = 2 * np.pi
SMALL_DX = (2.0, 4.0, 6.0, 8.0)
SWEEP_DX = SMALL_DX + (10.0, 20.0, 30.0, 40.0)


@functools.lru_cache(maxsize=None)
def desk_sweep():
    """Default configuration, w = 25, 200 realizations."""
    cfg = DEFAULTS
    assert cfg.width == 25.0 and cfg.n_realizations == 200
    t0 = time.perf_counter()
    points = run_experiment(cfg, SWEEP_DX)
    return {p.delta_x: p for p in points}, time.perf_counter() - t0


LINES = {}


def report(number, title, ok, detail):
    line = f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    LINES[number] = line
    print(line, flush=True)
    return ok


def check(number, result, record_property):
    # the line is also repeated in the pytest terminal summary (see conftest.py)
    record_property("acceptance", LINES[number])
    assert result


# ---------------------------------------------------------------------------

def criterion_1():
    start = time.perf_counter()
    x0 = np.array([1.0, 0.0, 0.0, 2.0, -0.5, 0.3])
    g = GaussianOperator.coherent_pair(x0, x0)
    state, _ = integrate(HarmonicOscillator(3), DynamicalState.from_operator(g), PERIOD, tol=1e-12)
    out = state.to_operator()
    ds = np.max(np.abs(out.sigma - g.sigma))
    dc = np.max(np.abs(centroid(out) - centroid(g)))
    elapsed = time.perf_counter() - start
    ok = ds < 1e-8 and dc < 1e-8 and elapsed < 1.0
    return report(1, "coherent-state stationarity", ok,
                  f"|dSigma|={ds:.2e} |dx|={dc:.2e} time={elapsed:.3f}s")


def criterion_2():
    rng = np.random.default_rng(2)
    model = ExperimentHamiltonian(epsilon=3.0, width=4.0)
    worst = 0
    trials = 0
    for k in range(4):
        for _ in range(5):
            x = rng.normal(0, 3, 6 * (k + 1))
            a = rng.normal(size=(x.size, x.size))
            g = GaussianOperator(x, x, a @ a.T / x.size + 0.5 * np.eye(x.size),
                                 registry=tuple(range(k + 1)))
            s = DynamicalState.from_operator(g)
            worst += int(not np.array_equal(rhs_offdiagonal(model, s), rhs_diagonal(model, s)))
            trials += 1
    return report(2, "off-diagonal reduces to diagonal", worst == 0,
                  f"{trials - worst}/{trials} bitwise identical")


def criterion_3():
    rng = np.random.default_rng(3)
    e_eta = e_hs = 0.0
    for _ in range(100):
        d = rng.normal(0, 3, 6)
        g = GaussianOperator.coherent_pair(d / 2, -d / 2)
        e_eta = max(e_eta, abs(abs(np.exp(eta_factor(g.x_alpha, g.x_beta, g.sigma)))
                               - np.exp(-d @ d / 4)))
        a = GaussianOperator.coherent_pair(d / 2, d / 2)
        b = GaussianOperator.coherent_pair(-d / 2, -d / 2)
        e_hs = max(e_hs, abs(hs_inner(a, b) - np.exp(-d @ d / 2)))
    return report(3, "coherent-overlap oracle", e_eta < 1e-12 and e_hs < 1e-12,
                  f"max err |exp(eta)|={e_eta:.1e} hs={e_hs:.1e}")


def criterion_4():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        a = rng.normal(size=(12, 12))
        sigma = a @ a.T / 12 + 0.3 * np.eye(12)
        x = rng.normal(0, 2, 12)
        g = GaussianOperator(x, x, sigma, registry=(SYSTEM_ID, 1))
        r = drop_particle(g, 1)
        worst = max(worst, np.max(np.abs(centroid(r) - centroid(g)[:6])),
                    np.max(np.abs(r.sigma - g.sigma[:6, :6])))
    return report(4, "trace invariance of retained moments", worst < 1e-12,
                  f"max deviation {worst:.1e} over 100 states")


def criterion_5():
    model = ExperimentHamiltonian(epsilon=5.0, width=2.0)
    g = GaussianOperator.coherent_pair(np.r_[1.0, 0, 0, 0.5, 0, 0], np.r_[-1.0, 0, 0, 0, 0, 0])
    t = 3 * PERIOD
    bare, _ = integrate(model, DynamicalState.from_operator(g), t, tol=1e-11)
    far = inject_particle(g, 1, particle_block([30.0, 0, 0], [1.0, 0, 0]),
                          wavepacket_covariance(1.0, 3))
    both, _ = integrate(model, DynamicalState.from_operator(far), t, tol=1e-11)
    r = drop_particle(both.to_operator(), 1)
    b = bare.to_operator()
    dev = max(np.max(np.abs(centroid(r) - centroid(b))), np.max(np.abs(r.sigma - b.sigma)))
    return report(5, "add/drop round trip", dev < 1e-8, f"system-block deviation {dev:.1e}")


def criterion_6():
    lengths = []
    for k in range(4):
        g = GaussianOperator.coherent_pair(np.zeros(6), np.zeros(6))
        for i in range(k):
            g = inject_particle(g, i + 1, np.zeros(6), wavepacket_covariance(1.0, 3))
        lengths.append(DynamicalState.from_operator(g).y.size == dof_count(k))
    big = dof_count(1500)
    ok = dof_count(1) == 182 and round(big / 1e7) == 8 and abs(big - 8.1e7) / 8.1e7 < 0.01 and all(lengths)
    return report(6, "DOF economy", ok,
                  f"dof_count(1)={dof_count(1)} dof_count(1500)={big:,} live lengths ok={all(lengths)}")


def criterion_7():
    settings = TrajectorySettings(epsilon=0.0, bath=DEFAULTS.bath_params())
    worst = 0.0
    for dx in (0.0, 2.0, 10.0, 20.0, 40.0):
        for mode in ("averaged-operator", "mean-of-norms"):
            r = run_ensemble(cat_component(dx), settings, 10.0, 41, 8, 7, mode=mode)
            worst = max(worst, np.max(np.abs(r.series.values - 1.0)))
    return report(7, "isolated cat coherence", worst < 1e-8, f"max |coherence - 1| = {worst:.1e}")


def _slope(points, dxs):
    gam = np.array([points[d].fit.gamma for d in dxs])
    return np.polyfit(np.log(dxs), np.log(gam), 1)[0], gam


def criterion_8():
    points, elapsed = desk_sweep()
    if any(points[d].fit is None for d in SMALL_DX):
        return report(8, "quadratic scaling", False, "a small-separation fit failed")
    slope, gam = _slope(points, SMALL_DX)
    ok = abs(slope - 2.0) <= 0.3 and elapsed < 1800
    # diagnostic only: the same slope after removing an additive offset fitted as
    # gamma = a (dx^2 + c); not part of the pass/fail decision
    A = np.vstack([np.array(SMALL_DX) ** 2, np.ones(4)]).T
    a, b = np.linalg.lstsq(A, gam, rcond=None)[0]
    excess = np.polyfit(np.log(SMALL_DX), np.log(np.maximum(gam - b, 1e-300)), 1)[0]
    return report(8, "quadratic scaling", ok,
                  f"log-log slope {slope:.3f} (target 2.0 +- 0.3); gammas "
                  f"{', '.join(f'{g:.4g}' for g in gam)}; offset c={b / a:.2f}, "
                  f"offset-removed slope {excess:.3f}; sweep {elapsed:.0f}s")


def criterion_9():
    points, _ = desk_sweep()
    if points[30.0].fit is None or points[40.0].fit is None:
        return report(9, "saturation", False, "a large-separation fit failed")
    ratio = points[40.0].fit.gamma / points[30.0].fit.gamma
    return report(9, "saturation", ratio < (40 / 30) ** 2,
                  f"gamma(40)/gamma(30) = {ratio:.3f} (limit {(40 / 30) ** 2:.3f})")


def criterion_10():
    points, _ = desk_sweep()
    r2 = {d: (p.fit.r_squared if p.fit else float("nan")) for d, p in points.items()}
    ok = all(v >= 0.9 for v in r2.values())
    return report(10, "exponential form", ok,
                  "r^2 " + ", ".join(f"dx={d:g}:{v:.3f}" for d, v in sorted(r2.items())))


def criterion_11(tmp_path):
    cfg = tmp_path / "det.cfg"
    cfg.write_text("n_realizations = 16\nt_max = 4\nn_samples = 17\ndelta_x_list = 10, 40\n")
    outs = []
    for threads in (1, 2, 8):
        out = tmp_path / f"t{threads}"
        code = cli.main(["sweep", "--config", str(cfg), "--out", str(out), "--threads", str(threads)])
        outs.append((code, out))
    files = ("summary.csv", "series_dx10.csv", "series_dx40.csv")
    same = all((o / f).read_bytes() == (outs[0][1] / f).read_bytes() for _, o in outs for f in files)
    ok = same and all(code == 0 for code, _ in outs)
    return report(11, "determinism across thread counts", ok,
                  f"exit codes {[c for c, _ in outs]}; CSVs byte-identical={same}")


# ---------------------------------------------------------------------------

def test_criterion_01(record_property):
    check(1, criterion_1(), record_property)


def test_criterion_02(record_property):
    check(2, criterion_2(), record_property)


def test_criterion_03(record_property):
    check(3, criterion_3(), record_property)


def test_criterion_04(record_property):
    check(4, criterion_4(), record_property)


def test_criterion_05(record_property):
    check(5, criterion_5(), record_property)


def test_criterion_06(record_property):
    check(6, criterion_6(), record_property)


def test_criterion_07(record_property):
    check(7, criterion_7(), record_property)


@pytest.mark.slow
def test_criterion_08(record_property):
    check(8, criterion_8(), record_property)


@pytest.mark.slow
def test_criterion_09(record_property):
    check(9, criterion_9(), record_property)


@pytest.mark.slow
def test_criterion_10(record_property):
    check(10, criterion_10(), record_property)


def test_criterion_11(tmp_path, record_property):
    check(11, criterion_11(tmp_path), record_property)


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    results = [f() for f in (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                             criterion_6, criterion_7, criterion_8, criterion_9, criterion_10)]
    with tempfile.TemporaryDirectory() as d:
        results.append(criterion_11(Path(d)))
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)
