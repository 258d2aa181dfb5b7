import math

import numpy as np
import pytest

from foodchain.engine import SimConfig
from foodchain.model import build_spec, tilde_transform
from foodchain.persistence import equilibrium
from foodchain.rates import (
    BinGrid,
    BinnedDistribution,
    GridMismatch,
    SubchainNotPersistent,
    TooFewPoints,
    batch_se,
    bin_distribution,
    bootstrap_noise_floor,
    boundary_invasion_rate,
    distance_fnorm,
    distance_tv,
    fit_decay,
    moment_identity_check,
    rate_fit,
    snapshot_distributions,
)
from instances import spec2, spec2_extinct, spec3_persistent


def _grid1(edges=(0.0, 1.0)):
    return BinGrid(log_edges=(np.asarray(edges, dtype=float),), kind="joint")


def test_distance_tv_examples():
    g = _grid1()
    a = BinnedDistribution(g, np.array([0.5, 0.5, 0.0]))
    b = BinnedDistribution(g, np.array([1.0, 0.0, 0.0]))
    c = BinnedDistribution(g, np.array([0.0, 0.0, 1.0]))
    assert distance_tv(a, a) == 0.0
    assert distance_tv(a, b) == 0.5
    assert distance_tv(b, c) == 1.0


def test_distance_tv_is_a_metric_on_random_histograms():
    rng = np.random.default_rng(31)
    g = _grid1((0.0, 0.5, 1.0, 1.5))
    for _ in range(100):
        m = rng.dirichlet(np.ones(5), size=3)
        h = [BinnedDistribution(g, row) for row in m]
        assert distance_tv(h[0], h[0]) == 0.0
        assert distance_tv(h[0], h[1]) == distance_tv(h[1], h[0])
        assert distance_tv(h[0], h[2]) <= distance_tv(h[0], h[1]) + distance_tv(h[1], h[2]) + 1e-15


def test_distance_tv_grid_mismatch():
    a = BinnedDistribution(_grid1((0.0, 1.0)), np.array([1.0, 0.0, 0.0]))
    b = BinnedDistribution(_grid1((0.0, 2.0)), np.array([1.0, 0.0, 0.0]))
    with pytest.raises(GridMismatch):
        distance_tv(a, b)


def test_distance_fnorm_reduces_to_tv_for_unit_weight():
    rng = np.random.default_rng(7)
    s1 = np.exp(rng.normal(0.0, 0.5, (400, 2)))
    s2 = np.exp(rng.normal(0.3, 0.5, (400, 2)))
    from foodchain.rates import _make_grid

    got = distance_fnorm(s1, s2, lambda pts: np.ones(pts.shape[0]), bins=24)
    grid = _make_grid(np.concatenate([s1, s2]), "joint", 24)
    expect = distance_tv(bin_distribution(s1, grid), bin_distribution(s2, grid))
    assert got == pytest.approx(expect, rel=1e-12)
    assert distance_fnorm(s1, s1, lambda pts: np.ones(pts.shape[0])) == 0.0


def test_distance_fnorm_weighted():
    rng = np.random.default_rng(8)
    s1 = np.exp(rng.normal(0.0, 0.4, (500, 1)))
    s2 = np.exp(rng.normal(0.0, 0.4, (500, 1)) + 1.0)
    w = distance_fnorm(s1, s2, lambda pts: 1.0 + pts[:, 0])
    plain = distance_fnorm(s1, s2, lambda pts: np.ones(pts.shape[0]))
    assert w > plain  # mass sits at larger values under the shifted law


def test_fit_decay_recovers_exponential_law():
    times = np.geomspace(1.0, 100.0, 10)
    fit = fit_decay(times, 2.0 * np.exp(-0.8 * times))
    assert fit.verdict == "Exponential"
    assert fit.exp_rate == pytest.approx(0.8, rel=0.05)


def test_fit_decay_recovers_polynomial_law():
    times = np.geomspace(1.0, 100.0, 10)
    fit = fit_decay(times, 3.0 * times**-1.0)
    assert fit.verdict == "Polynomial"
    assert fit.poly_exponent == pytest.approx(1.0, rel=0.10)


def test_fit_decay_inconclusive_below_floor():
    times = np.geomspace(1.0, 100.0, 10)
    fit = fit_decay(times, np.full(10, 0.01), noise_floor=0.05)
    assert fit.verdict == "Inconclusive"
    assert fit.n_used == 0


def test_rate_fit_needs_five_times():
    class Dummy:
        times = (1.0, 2.0, 3.0)

    with pytest.raises(TooFewPoints):
        rate_fit(Dummy())


def test_snapshot_t0_is_point_mass():
    spec = spec2()
    cfg = SimConfig(dt=1e-3, horizon=1.0, burn_in=0.0, seed=4)
    snaps = snapshot_distributions(spec, [1.0, 1.5], [0.0, 0.5, 1.0], 64, cfg)
    h0 = snaps.histograms[0].masses
    assert np.isclose(h0.max(), 1.0)
    assert np.count_nonzero(h0) == 1


def test_snapshot_self_distance_sits_at_noise_floor():
    # two independent seed halves at the same time: distance ~ MC noise
    spec = spec2(sigma=(0.6, 0.0))
    cfg_a = SimConfig(dt=1e-3, horizon=20.0, burn_in=0.0, seed=100)
    cfg_b = SimConfig(dt=1e-3, horizon=20.0, burn_in=0.0, seed=200)
    t = [10.0, 20.0]
    sa = snapshot_distributions(spec, [0.8, 0.8], t, 800, cfg_a, bins=24)
    sb = snapshot_distributions(spec, [0.8, 0.8], t, 800, cfg_b, bins=24)
    from foodchain.rates import _make_grid

    pooled = np.concatenate([sa.samples[-1], sb.samples[-1]])
    grid = _make_grid(pooled, "joint", 24)
    d = distance_tv(bin_distribution(sa.samples[-1], grid), bin_distribution(sb.samples[-1], grid))
    floor = bootstrap_noise_floor(pooled, grid, seed=1)
    assert d <= 1.2 * floor


def test_stationary_snapshots_close_at_T_and_2T():
    spec = spec2(sigma=(0.6, 0.0))
    cfg = SimConfig(dt=1e-3, horizon=60.0, burn_in=0.0, seed=12)
    snaps = snapshot_distributions(spec, [0.8, 0.8], [30.0, 60.0], 800, cfg, bins=24)
    d = distance_tv(snaps.histograms[0], snaps.histograms[1])
    floor = bootstrap_noise_floor(snaps.samples[-1], snaps.histograms[-1].grid, seed=9)
    assert d <= floor


def test_batch_se_on_iid_series():
    rng = np.random.default_rng(44)
    series = rng.normal(0.0, 2.0, 100_000)
    se = batch_se(series, n_batches=100)
    assert se == pytest.approx(2.0 / math.sqrt(100_000), rel=0.3)


def test_invasion_rate_argument_checks():
    spec = spec2()
    with pytest.raises(ValueError):
        boundary_invasion_rate(spec, 2, SimConfig())  # j = n
    with pytest.raises(SubchainNotPersistent):
        # sub-chain noise support inadmissible: only sigma_2 > 0
        boundary_invasion_rate(spec2(sigma=(0.0, 0.3)), 1, SimConfig())
    dying = build_spec(a0=(0.1, 1.0), aii=(1.0, 0.0), lo=(0.0, 1.0), hi=(1.0, 0.0),
                       sigma=(1.0, 0.0))  # corrected growth negative
    with pytest.raises(SubchainNotPersistent):
        boundary_invasion_rate(dying, 1, SimConfig())


def test_invasion_rate_sign_agreement():
    cfg = SimConfig(dt=1e-3, horizon=400.0, burn_in=20.0, seed=6)
    est_pos = boundary_invasion_rate(spec2(), 1, cfg)
    assert est_pos.estimate > 3 * est_pos.std_error
    est_neg = boundary_invasion_rate(spec2_extinct(), 1, cfg)
    assert est_neg.estimate < -3 * est_neg.std_error


def test_invasion_rate_se_shrinks_with_horizon_doubling():
    ses = []
    for horizon in (1_000.0, 2_000.0, 4_000.0):
        cfg = SimConfig(dt=1e-3, horizon=horizon, burn_in=50.0, seed=88)
        ses.append(boundary_invasion_rate(spec2(), 1, cfg).std_error)
    for a, b in zip(ses, ses[1:]):
        assert 1.3 <= a / b <= 1.6  # ~sqrt(2) per doubling


def test_moment_identity_residual_zero_at_equilibrium():
    spec = spec3_persistent()
    tilde = tilde_transform(spec)
    pstar = np.asarray(equilibrium(tilde))

    class FakeOcc:
        moment1 = pstar

    res = moment_identity_check(spec, FakeOcc())
    assert np.allclose(res, 0.0, atol=1e-12)


def test_moment_identity_flags_unconverged_short_run():
    from foodchain.engine import occupation_measure, simulate

    spec = spec3_persistent()
    start = [0.05, 0.05, 0.05]  # far from the stationary mean
    short = occupation_measure(simulate(spec, start, SimConfig(dt=1e-3, horizon=2.0, burn_in=0.0, seed=2)))
    residual = moment_identity_check(spec, short)
    se = np.array([batch_se(simulate(spec, start, SimConfig(dt=1e-3, horizon=2.0, burn_in=0.0, seed=2)).states[:, i], 20)
                   for i in range(3)])
    assert np.any(np.abs(residual) > 3 * (se + 1e-6))
