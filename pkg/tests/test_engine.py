import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

import foodchain.engine as eng
import foodchain._kernel_py as kernel_py
from foodchain.engine import (
    EmptyTrajectory,
    HistogramGrid,
    InvalidConfig,
    SimConfig,
    Trajectory,
    ensemble,
    extinction_stats,
    occupation_measure,
    simulate,
    step_log_em,
)
from foodchain.model import per_capita_Ftilde, subchain, tilde_transform
from instances import spec2, spec2_extinct, spec3_persistent, tilde2


def test_config_validation():
    with pytest.raises(InvalidConfig):
        SimConfig(dt=0.0)
    with pytest.raises(InvalidConfig):
        SimConfig(horizon=1.0, burn_in=1.0)
    with pytest.raises(InvalidConfig):
        SimConfig(thin=0)
    with pytest.raises(InvalidConfig):
        SimConfig(cap=-1.0)
    cfg = SimConfig(dt=1e-3, horizon=10.0)
    assert cfg.effective_burn_in == 2.0
    assert cfg.n_steps == 10_000


def test_step_fixed_point_without_noise():
    t = tilde2()
    y = np.log([1.0, 2.0])  # log of the equilibrium
    out = step_log_em(t, y, 0.05, [0.0, 0.0])
    assert np.array_equal(out, y)


def test_step_canonical_value():
    t = tilde2()
    out = step_log_em(t, [0.0, 0.0], 0.1, [0.0, 0.0])
    assert np.allclose(out, [0.1, 0.0], rtol=0, atol=0)


def test_step_moments_match_drift_and_variance():
    t = tilde_transform(spec2(sigma=(0.5, 0.2)))
    y0 = np.log([0.8, 1.4])
    dt = 0.01
    rng = np.random.default_rng(123)
    draws = rng.standard_normal((100_000, 2))
    incs = np.array([step_log_em(t, y0, dt, xi) - y0 for xi in draws])
    f = per_capita_Ftilde(t, np.exp(y0))
    for i in range(2):
        se_mean = incs[:, i].std(ddof=1) / math.sqrt(len(incs))
        assert abs(incs[:, i].mean() - f[i] * dt) <= 4 * se_mean + 1e-12
        var = incs[:, i].var(ddof=1)
        se_var = var * math.sqrt(2.0 / (len(incs) - 1))
        assert abs(var - t.sigma[i] ** 2 * dt) <= 4 * se_var + 1e-15


def test_noise_free_first_order_convergence():
    spec = spec3_persistent(sigma=(0.0, 0.0, 0.0))
    t = tilde_transform(spec)
    x0 = np.array([0.5, 0.8, 0.6])
    horizon = 5.0

    ref = solve_ivp(
        lambda _t, z: per_capita_Ftilde(t, np.exp(z)),
        (0.0, horizon),
        np.log(x0),
        rtol=1e-12,
        atol=1e-14,
    )
    x_ref = np.exp(ref.y[:, -1])

    def terminal(dt):
        cfg = SimConfig(dt=dt, horizon=horizon, burn_in=0.0, thin=1, seed=0)
        traj = simulate(spec, x0, cfg)
        return traj.states[-1]

    err1 = np.linalg.norm(terminal(0.01) - x_ref)
    err2 = np.linalg.norm(terminal(0.005) - x_ref)
    assert 1.7 <= err1 / err2 <= 2.3


def test_boundary_coordinate_stays_zero_and_matches_subchain():
    spec = spec3_persistent(sigma=(0.0, 0.0, 0.0))
    cfg = SimConfig(dt=1e-3, horizon=3.0, burn_in=0.0, thin=10, seed=5)
    traj3 = simulate(spec, [0.7, 0.9, 0.0], cfg)
    assert np.all(traj3.states[:, 2] == 0.0)
    traj2 = simulate(subchain(spec, 2), [0.7, 0.9], cfg)
    assert np.array_equal(traj3.states[:, :2], traj2.states)


def test_boundary_zero_with_noise():
    spec = spec3_persistent(sigma=(0.3, 0.0, 0.2))
    cfg = SimConfig(dt=1e-3, horizon=2.0, burn_in=0.0, seed=9)
    traj = simulate(spec, [1.0, 1.0, 0.0], cfg)
    assert np.all(traj.states[:, 2] == 0.0)
    assert np.all(traj.states[:, :2] > 0.0)


def test_fixed_seed_reproducible():
    spec = spec3_persistent()
    cfg = SimConfig(dt=1e-3, horizon=2.0, seed=11)
    a = simulate(spec, [1.0, 1.0, 1.0], cfg)
    b = simulate(spec, [1.0, 1.0, 1.0], cfg)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.times, b.times)


def test_backend_parity_bitwise():
    spec = spec3_persistent(sigma=(0.4, 0.1, 0.0))
    cfg = SimConfig(dt=1e-3, horizon=1.5, burn_in=0.0, thin=3, seed=21)
    compiled = simulate(spec, [0.9, 1.1, 0.8], cfg)
    orig = eng.step_chunk
    eng.step_chunk = kernel_py.step_chunk
    try:
        pure = simulate(spec, [0.9, 1.1, 0.8], cfg)
    finally:
        eng.step_chunk = orig
    assert np.array_equal(compiled.states, pure.states)
    assert np.array_equal(compiled.times, pure.times)


def test_chunk_boundary_continuity():
    # crossing the noise-chunk boundary must not disturb recording
    spec = spec2()
    cfg = SimConfig(dt=1e-3, horizon=70.0, burn_in=0.0, thin=1000, seed=2)
    traj = simulate(spec, [1.0, 1.0], cfg)  # 70000 steps > CHUNK_STEPS
    assert traj.states.shape[0] == 71
    assert np.all(traj.states > 0)


def test_ensemble_replica0_equals_simulate():
    spec = spec3_persistent()
    cfg = SimConfig(dt=1e-3, horizon=2.0, seed=3)
    summary = ensemble(spec, [1.0, 1.0, 1.0], 3, cfg)
    direct = simulate(spec, [1.0, 1.0, 1.0], cfg)
    assert np.array_equal(summary.first.states, direct.states)


def test_ensemble_worker_invariance():
    spec = spec3_persistent(sigma=(0.3, 0.0, 0.1))
    cfg = SimConfig(dt=1e-3, horizon=2.0, seed=17)
    kw = dict(snapshot_times=[0.0, 1.0, 2.0], threshold=0.5)
    one = ensemble(spec, [1.0, 1.0, 1.0], 12, cfg, workers=1, **kw)
    four = ensemble(spec, [1.0, 1.0, 1.0], 12, cfg, workers=4, **kw)
    assert np.array_equal(one.snapshots, four.snapshots)
    assert np.array_equal(one.occupation.sum_x, four.occupation.sum_x)
    assert np.array_equal(one.occupation.counts, four.occupation.counts)
    assert np.array_equal(one.extinction.frac_below, four.extinction.frac_below)


def test_strong_positivity_of_records():
    spec = spec3_persistent(sigma=(0.5, 0.2, 0.1))
    cfg = SimConfig(dt=1e-3, horizon=5.0, burn_in=0.0, seed=8)
    traj = simulate(spec, [0.5, 0.5, 0.5], cfg)
    assert np.all(traj.states > 0.0)


def test_extinction_floor_pins_species_to_boundary():
    spec = spec2_extinct()
    cfg = SimConfig(dt=1e-3, horizon=300.0, burn_in=0.0, seed=3)
    traj = simulate(spec, [0.5, 0.5], cfg)
    assert not traj.exited
    assert 1 in traj.floor_times
    t_floor = traj.floor_times[1]
    after = traj.states[traj.times > t_floor, 1]
    assert after.size > 0 and np.all(after == 0.0)


def test_upper_cap_marks_exited():
    spec = spec2(sigma=(0.0, 0.0))
    cfg = SimConfig(dt=1e-3, horizon=1.0, burn_in=0.0, cap=1.0, seed=0)
    traj = simulate(spec, [math.exp(2.0), 0.5], cfg)  # |ln x1| = 2 > cap after a step
    assert traj.exited
    assert "species 1" in traj.exit_reason
    assert traj.exit_time is not None


def test_occupation_constant_trajectory():
    t = tilde2()
    pstar = np.array([1.0, 2.0])
    states = np.tile(pstar, (500, 1))
    traj = Trajectory(tilde=t, times=np.arange(500) * 0.01, states=states, dt=0.01, thin=1)
    occ = occupation_measure(traj)
    assert np.array_equal(occ.moment1, pstar)
    assert np.allclose(occ.momentF, 0.0, atol=1e-15)
    masses = occ.normalized()
    assert np.allclose(masses.sum(axis=1), 1.0)
    assert occ.duration == pytest.approx(5.0)


def test_occupation_pairs_marginals():
    spec = spec2()
    cfg = SimConfig(dt=1e-3, horizon=2.0, burn_in=0.0, seed=5)
    traj = simulate(spec, [1.0, 1.0], cfg)
    occ = occupation_measure(traj, pairs=True)
    assert (0, 1) in occ.pair_counts
    assert occ.pair_counts[(0, 1)].sum() == occ.count


def test_occupation_empty_rejected():
    t = tilde2()
    traj = Trajectory(tilde=t, times=np.empty(0), states=np.empty((0, 2)), dt=0.01, thin=1)
    with pytest.raises(EmptyTrajectory):
        occupation_measure(traj)


def test_extinction_stats_examples():
    t = tilde2()
    states = np.array([[1.0, 0.5], [2.0, 0.2], [1.5, 0.3]])
    traj = Trajectory(tilde=t, times=np.arange(3) * 0.1, states=states, dt=0.1, thin=1)
    stats = extinction_stats(traj, threshold=10.0)  # above the sup
    assert np.all(stats.frac_below == 1.0)
    stats2 = extinction_stats(traj, threshold=0.25)
    assert stats2.frac_below[0] == 0.0
    assert stats2.frac_below[1] == pytest.approx(1.0 / 3.0)
    with pytest.raises(ValueError):
        extinction_stats(traj, threshold=0.0)


def test_histogram_grid_binning():
    grid = HistogramGrid(log_lo=-2.0, log_hi=2.0, bins=4)
    vals = np.array([0.0, math.exp(-3.0), math.exp(-1.5), 1.0, math.exp(3.0)])
    idx = grid.index(vals)
    assert list(idx) == [0, 0, 1, 3, 5]
