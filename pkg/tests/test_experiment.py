import numpy as np
import pytest

from gaussdrift import experiment
from gaussdrift.config import RunConfig
from gaussdrift.environment import BathParams
from gaussdrift.experiment import (CoherenceSeries, InsufficientDataError, TrajectorySettings,
                                   cat_component, coherence_norm, fit_decay, realization_rng,
                                   run_ensemble, run_experiment, run_trajectory)
from gaussdrift.phasespace import GaussianOperator, InvalidDimensionError, hs_inner
from gaussdrift.propagator import StiffnessError


def series(t, v, se=None):
    t = np.asarray(t, float)
    v = np.asarray(v, float)
    return CoherenceSeries(t, v, np.zeros_like(v) if se is None else np.asarray(se, float), 1)


# --- coherence_norm ---------------------------------------------------------

@pytest.mark.parametrize("mode", ["averaged-operator", "mean-of-norms"])
def test_identical_copies_match_single(mode):
    g = cat_component(3.0).replace(log_amp=-0.3, phase=1.1)
    one = coherence_norm([g], mode)
    assert coherence_norm([g] * 7, mode) == pytest.approx(one, rel=1e-12)
    assert one == pytest.approx(np.exp(-0.3), rel=1e-12)
    value, se = coherence_norm([g] * 7, mode, with_stderr=True)
    assert se == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("phi", [0.0, 0.4, 1.3, np.pi / 2, 2.8])
def test_opposite_phases_average_to_cosine(phi):
    g = cat_component(2.0)
    pair = [g.replace(phase=phi), g.replace(phase=-phi)]
    single = coherence_norm([g], "averaged-operator")
    assert coherence_norm(pair, "averaged-operator") == pytest.approx(abs(np.cos(phi)) * single,
                                                                      abs=1e-12)
    assert coherence_norm(pair, "mean-of-norms") == pytest.approx(single, rel=1e-12)


def test_averaged_norm_matches_direct_pairwise_sum():
    rng = np.random.default_rng(0)
    ops = [cat_component(4.0).replace(x_alpha=cat_component(4.0).x_alpha + rng.normal(0, 0.3, 6),
                                      phase=rng.uniform(0, 6)) for _ in range(6)]
    total = sum(hs_inner(a, b) for a in ops for b in ops)
    assert coherence_norm(ops) == pytest.approx(np.sqrt(total.real) / len(ops), rel=1e-12)


def test_coherence_norm_errors():
    with pytest.raises(ValueError):
        coherence_norm([])
    with pytest.raises(ValueError):
        coherence_norm([], "mean-of-norms")
    a = cat_component(1.0)
    b = GaussianOperator.coherent_pair(np.zeros(2), np.zeros(2))
    for mode in ("averaged-operator", "mean-of-norms"):
        with pytest.raises(InvalidDimensionError):
            coherence_norm([a, b], mode)
    with pytest.raises(ValueError):
        coherence_norm([a], "median")


# --- fit_decay --------------------------------------------------------------

def test_fit_exact_exponential():
    t = np.linspace(0, 10, 41)
    fit = fit_decay(series(t, np.exp(-0.1 * t)))
    assert fit.gamma == pytest.approx(0.1, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.fit_window == (0.0, 10.0)


def test_fit_constant_series():
    fit = fit_decay(series(np.arange(10.0), np.ones(10)))
    assert fit.gamma == 0.0
    assert fit.r_squared == 1.0


def test_fit_noisy_exponential():
    rng = np.random.default_rng(1)
    hits = 0
    for _ in range(20):
        t = np.linspace(0, 20, 50)
        v = np.exp(-0.05 * t) * (1 + 0.01 * rng.normal(size=t.size))
        fit = fit_decay(series(t, v, 0.01 * v))
        hits += abs(fit.gamma - 0.05) < 0.005
        assert fit.gamma_stderr > 0
    assert hits == 20


def test_fit_excludes_points_below_noise_floor():
    t = np.linspace(0, 10, 11)
    v = np.exp(-0.2 * t)
    v_bad = v.copy()
    v_bad[t > 6] = 1.0  # junk beyond the floor must not matter
    se = np.where(t > 6, 0.9 * v_bad, 0.01 * v_bad)
    fit = fit_decay(series(t, v_bad, se))
    assert fit.gamma == pytest.approx(0.2, abs=1e-12)
    assert fit.fit_window == (0.0, 6.0)
    assert fit.n_points == 7


def test_fit_needs_five_points():
    t = np.arange(8.0)
    v = np.exp(-t)
    se = np.where(t < 4, 0.0, v)
    with pytest.raises(InsufficientDataError):
        fit_decay(series(t, v, se))
    with pytest.raises(InsufficientDataError):
        fit_decay(series(t[:4], v[:4]))


# --- trajectories -----------------------------------------------------------

def test_cat_component_axes():
    for axis, idx in (("position", [0]), ("momentum", [1]), ("mixed", [0, 1])):
        g = cat_component(6.0, axis)
        d = g.x_alpha - g.x_beta
        assert np.linalg.norm(d) == pytest.approx(6.0)
        assert set(np.flatnonzero(d)) == set(idx)
        assert hs_inner(g, g) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cat_component(1.0, "diagonal")


def test_realization_streams_are_reproducible_and_distinct():
    a = realization_rng(5, 0).random(4)
    assert np.array_equal(a, realization_rng(5, 0).random(4))
    assert not np.array_equal(a, realization_rng(5, 1).random(4))
    assert not np.array_equal(a, realization_rng(6, 0).random(4))


def test_trajectory_records_every_sample_and_returns_to_system_block():
    settings = TrajectorySettings(bath=BathParams(density=2e-6))
    t = np.linspace(0, 3 * 2 * np.pi, 7)
    res = run_trajectory(cat_component(5.0), settings, t, np.random.default_rng(3))
    assert len(res.reduced) == 7
    assert all(g.dim == 6 for g in res.reduced)
    assert res.n_injected > 0
    assert res.max_state_length >= 182


def test_isolated_cat_is_constant():
    settings = TrajectorySettings(epsilon=0.0)
    for dx in (0.0, 10.0, 40.0):
        for mode in ("averaged-operator", "mean-of-norms"):
            r = run_ensemble(cat_component(dx), settings, 10.0, 21, 4, 11, mode=mode)
            assert np.max(np.abs(r.series.values - 1.0)) < 1e-8


def test_ensemble_is_thread_count_independent():
    settings = TrajectorySettings()
    runs = [run_ensemble(cat_component(10.0), settings, 2.0, 9, 6, 3, threads=n) for n in (1, 3)]
    assert np.array_equal(runs[0].series.values, runs[1].series.values)
    assert np.array_equal(runs[0].series.stderr, runs[1].series.stderr)
    assert runs[0].series.values[0] == 1.0


def test_failed_realization_is_recorded_and_excluded(monkeypatch):
    real = experiment.run_trajectory

    def flaky(g0, settings, times, rng):
        if flaky.calls == 1:
            flaky.calls += 1
            raise StiffnessError("step underflow")
        flaky.calls += 1
        return real(g0, settings, times, rng)

    flaky.calls = 0
    monkeypatch.setattr(experiment, "run_trajectory", flaky)
    r = run_ensemble(cat_component(5.0), TrajectorySettings(), 1.0, 5, 4, 3)
    assert r.n_used == 3 and r.series.n_realizations == 3
    assert len(r.failures) == 1 and r.failures[0][0] == 1
    assert "seed 3/1" in r.failures[0][1]


def test_run_experiment_flags_unfittable_separation():
    cfg = RunConfig(n_realizations=2, t_max=2.0, n_samples=5, delta_x_list=(0.0, 5.0),
                    epsilon=0.0, noise_floor=1e-9)
    points = run_experiment(cfg, threads=1)
    assert [p.delta_x for p in points] == [0.0, 5.0]
    assert all(p.fit is not None and p.fit.gamma == pytest.approx(0, abs=1e-8) for p in points)
    strong = cfg.replace(epsilon=200.0, density=1e-5, n_samples=6, t_max=5.0, noise_floor=0.05)
    bad = run_experiment(strong, [40.0], threads=1)[0]
    assert bad.fit is None and bad.error.startswith("fit")
