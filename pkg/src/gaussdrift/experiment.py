"""Coherence of a cat-state component under a thermal bath: trajectories,
ensemble averaging, decay fits and the separation sweep."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .environment import (SYSTEM_ID, BathParams, FluxSource, RosterSource, drop_particle,
                          inject_particle, maybe_inject, particle_block, reduce_to_system,
                          sample_ball, should_drop)
from .hamiltonians import ExperimentHamiltonian
from .phasespace import HBAR, GaussianOperator, InvalidDimensionError, prepare_batch, wavepacket_covariance
from .propagator import DynamicalState, StiffnessError, integrate

log = logging.getLogger(__name__)

PERIOD = 2 * math.pi
DROP_CHECK_INTERVAL = 0.5
NOISE_FLOOR = 0.5


class InsufficientDataError(ValueError):
    pass


@dataclass
class CoherenceSeries:
    times: np.ndarray  # oscillator periods
    values: np.ndarray
    stderr: np.ndarray
    n_realizations: int


@dataclass
class DecayFit:
    gamma: float  # per oscillator period
    gamma_stderr: float
    fit_window: tuple[float, float]
    r_squared: float
    n_points: int = 0


# ---------------------------------------------------------------------------
# coherence

def _hs_matrix(ops: Sequence[GaussianOperator]) -> np.ndarray:
    if not ops:
        raise ValueError("no operators to average")
    dims = {g.dim for g in ops}
    if len(dims) != 1:
        raise InvalidDimensionError(f"operators have mixed dimensions {sorted(dims)}")
    lam, lam_c, clc, log_pref = prepare_batch(ops)
    return _kernels.hs_matrix(lam, lam_c, clc, log_pref, ops[0].n_dof, HBAR)


def _averaged_norm(H: np.ndarray) -> tuple[float, float]:
    """sqrt(Tr rho_bar rho_bar^dag) from the pairwise matrix, with a jackknife error."""
    M = H.shape[0]
    Hr = H.real
    total = Hr.sum()
    value = math.sqrt(max(total, 0.0)) / M
    if M < 2:
        return value, 0.0
    rows = Hr.sum(axis=0) + Hr.sum(axis=1)
    loo = np.sqrt(np.maximum(total - rows + np.diag(Hr), 0.0)) / (M - 1)
    se = math.sqrt((M - 1) / M * ((loo - loo.mean()) ** 2).sum())
    return value, se


def coherence_norm(reduced_ops: Sequence[GaussianOperator], mode: str = "averaged-operator",
                   with_stderr: bool = False):
    """Hilbert-Schmidt magnitude of the realization-averaged operator, or the mean
    of per-realization magnitudes (``mode='mean-of-norms'``)."""
    if mode == "averaged-operator":
        value, se = _averaged_norm(_hs_matrix(reduced_ops))
    elif mode == "mean-of-norms":
        if not reduced_ops:
            raise ValueError("no operators to average")
        from .phasespace import hs_inner
        norms = np.array([math.sqrt(max(hs_inner(g, g).real, 0.0)) for g in reduced_ops])
        if len({g.dim for g in reduced_ops}) != 1:
            raise InvalidDimensionError("operators have mixed dimensions")
        value = float(norms.mean())
        se = float(norms.std(ddof=1) / math.sqrt(norms.size)) if norms.size > 1 else 0.0
    else:
        raise ValueError(f"unknown coherence mode {mode!r}")
    return (value, se) if with_stderr else value


# ---------------------------------------------------------------------------
# fitting

def fit_decay(series: CoherenceSeries, noise_floor: float = NOISE_FLOOR,
              min_points: int = 5) -> DecayFit:
    """Weighted least squares of log(coherence) against time."""
    t = np.asarray(series.times, dtype=float)
    v = np.asarray(series.values, dtype=float)
    se = np.asarray(series.stderr, dtype=float)
    ok = (v > 0) & np.isfinite(v)
    rel = np.full_like(v, np.inf)
    rel[ok] = se[ok] / v[ok]
    ok &= rel <= noise_floor
    if ok.sum() < min_points:
        raise InsufficientDataError(f"only {int(ok.sum())} usable points, need {min_points}")
    t, y, s = t[ok], np.log(v[ok]), rel[ok]
    pos = s[s > 0]
    if pos.size == 0:
        w = np.ones_like(y)
    else:
        w = 1.0 / np.maximum(s, pos.min()) ** 2
    W = w.sum()
    tm = (w * t).sum() / W
    ym = (w * y).sum() / W
    stt = (w * (t - tm) ** 2).sum()
    slope = (w * (t - tm) * (y - ym)).sum() / stt
    resid = y - ym - slope * (t - tm)
    ss_res = (w * resid**2).sum()
    ss_tot = (w * (y - ym) ** 2).sum()
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = t.size - 2
    if pos.size == 0:
        slope_se = math.sqrt(ss_res / dof / stt) if dof > 0 else 0.0
    else:
        # scale by the reduced chi^2 so correlated errors are not over-trusted
        slope_se = math.sqrt(max(ss_res / dof, 1.0) / stt) if dof > 0 else 0.0
    return DecayFit(gamma=max(0.0, -slope), gamma_stderr=slope_se,
                    fit_window=(float(t[0]), float(t[-1])), r_squared=float(r2), n_points=int(t.size))


# ---------------------------------------------------------------------------
# trajectories

@dataclass(frozen=True)
class TrajectorySettings:
    epsilon: float = 10.0
    width: float = 25.0
    bath: BathParams = field(default_factory=BathParams)
    rtol: float = 1e-8
    atol: float = 1e-8
    max_step: float = 0.5
    drop_check_interval: float = DROP_CHECK_INTERVAL
    use_kernel: bool | None = None

    @property
    def model(self) -> ExperimentHamiltonian:
        return ExperimentHamiltonian(self.epsilon, self.width, self.bath.m_env)


@dataclass
class TrajectoryResult:
    reduced: list  # system-only GaussianOperators at the sample times
    n_injected: int = 0
    n_blocked: int = 0
    n_dropped: int = 0
    max_state_length: int = 0


def cat_component(delta_x: float, axis: str = "position") -> GaussianOperator:
    """``|alpha><beta|`` for a 3D coherent-state pair centred on the origin and
    separated by ``delta_x`` along the x axis (position, momentum or both)."""
    sep = np.zeros(6)
    if axis == "position":
        sep[0] = delta_x
    elif axis == "momentum":
        sep[1] = delta_x
    elif axis == "mixed":
        sep[0] = sep[1] = delta_x / math.sqrt(2)
    else:
        raise ValueError(f"unknown separation axis {axis!r}")
    return GaussianOperator.coherent_pair(sep / 2, -sep / 2, registry=(SYSTEM_ID,))


def run_trajectory(g0: GaussianOperator, settings: TrajectorySettings, sample_times,
                   rng: np.random.Generator) -> TrajectoryResult:
    """Evolve one bath realization and return the reduced operator at each sample time.

    ``sample_times`` are in natural time units and must start at or after 0.
    """
    bath = settings.bath
    model = settings.model
    samples = list(np.asarray(sample_times, dtype=float))
    t_end = samples[-1]
    res = TrajectoryResult(reduced=[])
    next_id = 1
    g = g0

    if bath.mode == "roster":
        source = RosterSource(bath, rng, t_end)
        initial = [(particle_block(a.position, a.momentum), wavepacket_covariance(bath.env_width, 3))
                   for a in source.initial]
    else:
        r_sys = 0.5 * (g.x_alpha[0:6:2] + g.x_beta[0:6:2])
        initial = sample_ball(bath, rng, r_sys, bath.vicinity_radius)
        source = FluxSource(bath, rng)
    for block, cov in initial:
        if len(g.registry) - 1 < bath.max_active:
            g = inject_particle(g, next_id, block, cov)
            next_id += 1
            res.n_injected += 1
        else:
            res.n_blocked += 1

    t = 0.0
    h = 0.05
    si = 0
    state = DynamicalState.from_operator(g, t)
    while si < len(samples):
        t_next = min(samples[si], source.next_time(), t + settings.drop_check_interval)
        state, h = integrate(model, state, t_next, tol=settings.rtol, atol=settings.atol,
                             max_step=settings.max_step, first_step=h,
                             use_kernel=settings.use_kernel)
        res.max_state_length = max(res.max_state_length, state.y.size)
        t = t_next
        g = state.to_operator()
        changed = False
        for pid in g.registry[1:]:
            if should_drop(g, pid, bath.vicinity_radius, bath.m_env):
                g = drop_particle(g, pid)
                res.n_dropped += 1
                changed = True
        while source.next_time() <= t:
            g, ok = maybe_inject(g, source.pop(), bath, next_id)
            if ok:
                next_id += 1
                res.n_injected += 1
                changed = True
            else:
                res.n_blocked += 1
        if t >= samples[si]:
            res.reduced.append(reduce_to_system(g))
            si += 1
        if changed:
            state = DynamicalState.from_operator(g, t)
    return res


# ---------------------------------------------------------------------------
# ensembles

def realization_rng(master_seed: int, index: int) -> np.random.Generator:
    """Per-realization stream, shared across separations (common random numbers)."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


@dataclass
class EnsembleResult:
    series: CoherenceSeries
    n_used: int
    failures: list  # (realization index, message)
    stats: dict


def run_ensemble(g0: GaussianOperator, settings: TrajectorySettings, t_max_periods: float,
                 n_samples: int, n_realizations: int, master_seed: int, threads: int = 1,
                 mode: str = "averaged-operator") -> EnsembleResult:
    times = np.linspace(0.0, t_max_periods, n_samples)
    natural = times * PERIOD

    def task(i):
        try:
            return i, run_trajectory(g0, settings, natural, realization_rng(master_seed, i)), None
        except (StiffnessError, np.linalg.LinAlgError) as exc:
            return i, None, f"realization {i} (seed {master_seed}/{i}): {exc}"

    if threads <= 1:
        results = [task(i) for i in range(n_realizations)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, range(n_realizations)))
    results.sort(key=lambda r: r[0])
    good = [r for _, r, _ in results if r is not None]
    failures = [(i, msg) for i, r, msg in results if r is None]
    for _, msg in failures:
        log.warning("excluded %s", msg)
    if not good:
        raise RuntimeError("every realization failed")
    values = np.empty(n_samples)
    errs = np.empty(n_samples)
    for s in range(n_samples):
        values[s], errs[s] = coherence_norm([r.reduced[s] for r in good], mode, with_stderr=True)
    v0 = values[0]
    stats = {
        "injected": sum(r.n_injected for r in good),
        "blocked": sum(r.n_blocked for r in good),
        "dropped": sum(r.n_dropped for r in good),
        "max_state_length": max(r.max_state_length for r in good),
    }
    series = CoherenceSeries(times, values / v0, errs / v0, len(good))
    return EnsembleResult(series, len(good), failures, stats)


# ---------------------------------------------------------------------------
# sweep

@dataclass
class SweepPoint:
    delta_x: float
    ensemble: EnsembleResult | None
    fit: DecayFit | None
    error: str | None = None  # set when the series could not be produced or fitted


def run_experiment(config, delta_x_list=None, threads: int | None = None) -> list[SweepPoint]:
    """Run every separation in ``delta_x_list`` (default: the config's list).

    ``config`` is a :class:`gaussdrift.config.RunConfig`.  Each separation
    reuses the same per-realization random streams, so differences between
    separations are not blurred by independent bath noise.
    """
    settings = config.trajectory_settings()
    threads = config.resolved_threads() if threads is None else threads
    out = []
    for dx in (config.delta_x_list if delta_x_list is None else delta_x_list):
        g0 = cat_component(float(dx), config.separation_axis)
        try:
            ens = run_ensemble(g0, settings, config.t_max, config.n_samples, config.n_realizations,
                               config.master_seed, threads, config.coherence_mode)
        except RuntimeError as exc:
            out.append(SweepPoint(float(dx), None, None, f"integration: {exc}"))
            continue
        try:
            fit = fit_decay(ens.series, config.noise_floor)
        except InsufficientDataError as exc:
            out.append(SweepPoint(float(dx), ens, None, f"fit: {exc}"))
            continue
        out.append(SweepPoint(float(dx), ens, fit))
    return out
