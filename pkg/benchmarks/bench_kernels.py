"""Compare the numba kernels with the pure-numpy path.

Run: python3 benchmarks/bench_kernels.py [--repeat N]

Each row times the same computation both ways and reports the largest
difference between the two results, so a speedup never hides a mismatch.
The numba timings exclude the one-off compilation (warmed up first).
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from gaussdrift import _kernels
from gaussdrift.environment import BathParams, inject_particle, particle_block
from gaussdrift.experiment import TrajectorySettings, cat_component, run_trajectory
from gaussdrift.hamiltonians import ExperimentHamiltonian
from gaussdrift.phasespace import HBAR, GaussianOperator, prepare_batch, wavepacket_covariance
from gaussdrift.propagator import DynamicalState, integrate, rhs_offdiagonal


def best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def with_bath(k, rng):
    g = cat_component(10.0)
    for j in range(k):
        pos = rng.normal(0.0, 20.0, 3)
        mom = rng.normal(0.0, 20.0, 3)
        g = inject_particle(g, j + 1, particle_block(pos, mom), wavepacket_covariance(5.0, 3))
    return g


def bench_rhs(k, repeat, rng):
    model = ExperimentHamiltonian(10.0, 25.0, 1.0)
    state = DynamicalState.from_operator(with_bath(k, rng))
    n = 200

    def numpy_path():
        for _ in range(n):
            out = rhs_offdiagonal(model, state)
        return out

    def numba_path():
        for _ in range(n):
            out = _kernels.experiment_rhs(state.y, state.dim, False, 10.0, 25.0, 1.0, HBAR)
        return out

    numba_path()
    tn, a = best_of(numpy_path, repeat)
    tj, b = best_of(numba_path, repeat)
    return f"rhs x{n} (k={k})", tn, tj, float(np.max(np.abs(a - b)))


def bench_integrate(k, repeat, rng):
    model = ExperimentHamiltonian(10.0, 25.0, 1.0)
    state = DynamicalState.from_operator(with_bath(k, rng))

    def run(use):
        return integrate(model, state, 2 * np.pi, tol=1e-8, max_step=0.5, use_kernel=use)[0].y

    run(True)
    tn, a = best_of(lambda: run(False), repeat)
    tj, b = best_of(lambda: run(True), repeat)
    return f"integrate 1 period (k={k})", tn, tj, float(np.max(np.abs(a - b)))


def bench_hs(m, repeat, rng):
    ops = []
    for _ in range(m):
        g = cat_component(10.0)
        ops.append(g.replace(x_alpha=g.x_alpha + rng.normal(0, 0.5, 6),
                             x_beta=g.x_beta + rng.normal(0, 0.5, 6),
                             phase=rng.uniform(0, 2 * np.pi)))
    args = prepare_batch(ops) + (3, HBAR)
    _kernels.hs_matrix(*args, use_numba=True)
    tn, a = best_of(lambda: _kernels.hs_matrix(*args, use_numba=False), repeat)
    tj, b = best_of(lambda: _kernels.hs_matrix(*args, use_numba=True), repeat)
    return f"pairwise HS matrix (M={m})", tn, tj, float(np.max(np.abs(a - b)))


def bench_trajectory(repeat):
    base = dict(epsilon=10.0, width=25.0, bath=BathParams())
    t = np.linspace(0.0, 10.0, 41) * 2 * np.pi

    def run(use):
        res = run_trajectory(cat_component(10.0), TrajectorySettings(use_kernel=use, **base), t,
                             np.random.default_rng(7))
        return np.array([r.x_alpha for r in res.reduced])

    run(True)
    tn, a = best_of(lambda: run(False), repeat)
    tj, b = best_of(lambda: run(True), repeat)
    return "bath trajectory, 10 periods", tn, tj, float(np.max(np.abs(a - b)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _kernels.NUMBA_ENABLED:
        raise SystemExit("numba is disabled (GAUSSDRIFT_DISABLE_NUMBA); nothing to compare")
    rng = np.random.default_rng(0)
    rows = [bench_rhs(1, args.repeat, rng), bench_rhs(3, args.repeat, rng),
            bench_integrate(1, args.repeat, rng), bench_hs(200, args.repeat, rng),
            bench_trajectory(args.repeat)]
    print(f"{'case':<32}{'numpy s':>12}{'numba s':>12}{'speedup':>10}{'max |diff|':>13}")
    for name, tn, tj, diff in rows:
        print(f"{name:<32}{tn:>12.4f}{tj:>12.4f}{tn / tj:>10.1f}{diff:>13.2e}")


if __name__ == "__main__":
    main()
