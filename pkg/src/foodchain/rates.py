"""Empirical convergence-rate diagnosis and boundary invasion rates.

Distributional convergence is probed by comparing binned terminal-state
distributions at increasing times against the latest snapshot (the proxy for
the stationary law), with a bootstrap noise floor separating signal from
Monte-Carlo fuzz.  The decay of distances is then fit against both an
exponential and a power law; the verdict goes to the clearly better fit or
to Inconclusive when the data cannot tell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .model import ChainSpec, per_capita_Ftilde, subchain, tilde_transform
from .persistence import delta_tilde, equilibrium
from .engine import SimConfig, OccupationAccumulator, ensemble, occupation_measure, simulate

__all__ = [
    "BinnedDistribution",
    "SnapshotSet",
    "RateFit",
    "InvasionEstimate",
    "GridMismatch",
    "TooFewPoints",
    "SubchainNotPersistent",
    "snapshot_distributions",
    "distance_tv",
    "distance_fnorm",
    "fit_decay",
    "rate_fit",
    "bootstrap_noise_floor",
    "boundary_invasion_rate",
    "moment_identity_check",
    "batch_se",
]

# joint binning resolution per species count; pairwise marginals above 3
_JOINT_BINS = {1: 256, 2: 48, 3: 16}
_PAIR_BINS = 48


class GridMismatch(ValueError):
    pass


class TooFewPoints(ValueError):
    pass


class SubchainNotPersistent(ValueError):
    pass


@dataclass(frozen=True)
class BinGrid:
    """Shared per-species log-spaced edges; values at or below the lowest
    edge (including exact zeros) fall into the underflow cell."""

    log_edges: tuple  # one increasing edge array per species
    kind: str  # "joint" | "pairs"

    def key(self) -> tuple:
        return (self.kind,) + tuple(e.tobytes() for e in self.log_edges)

    def axis_index(self, values: np.ndarray, axis: int) -> np.ndarray:
        with np.errstate(divide="ignore"):
            logs = np.log(values)
        return np.searchsorted(self.log_edges[axis], logs, side="right")

    def axis_cells(self, axis: int) -> int:
        return len(self.log_edges[axis]) + 1


def _make_grid(samples: np.ndarray, kind: str, bins: int) -> BinGrid:
    """Edges that cover the pooled positive samples with 5% log padding."""
    n = samples.shape[-1]
    flat = samples.reshape(-1, n)
    edges = []
    for i in range(n):
        pos = flat[:, i][flat[:, i] > 0]
        if pos.size == 0:
            edges.append(np.linspace(-1.0, 1.0, bins + 1))
            continue
        lo, hi = math.log(pos.min()), math.log(pos.max())
        pad = 0.05 * max(hi - lo, 1e-6)
        edges.append(np.linspace(lo - pad, hi + pad, bins + 1))
    return BinGrid(log_edges=tuple(edges), kind=kind)


def _bin_samples(samples: np.ndarray, grid: BinGrid):
    """Normalized masses of one sample set on the shared grid."""
    n = samples.shape[1]
    if grid.kind == "joint":
        flat = np.zeros(samples.shape[0], dtype=np.int64)
        for i in range(n):
            flat = flat * grid.axis_cells(i) + grid.axis_index(samples[:, i], i)
        total = int(np.prod([grid.axis_cells(i) for i in range(n)]))
        masses = np.bincount(flat, minlength=total).astype(float)
        return masses / max(samples.shape[0], 1)
    masses = {}
    for i in range(n):
        for j in range(i + 1, n):
            flat = grid.axis_index(samples[:, i], i) * grid.axis_cells(j) + grid.axis_index(samples[:, j], j)
            counts = np.bincount(flat, minlength=grid.axis_cells(i) * grid.axis_cells(j)).astype(float)
            masses[(i, j)] = counts / max(samples.shape[0], 1)
    return masses


@dataclass(frozen=True)
class BinnedDistribution:
    grid: BinGrid
    masses: object  # ndarray for joint, dict for pairs


def bin_distribution(samples: np.ndarray, grid: BinGrid) -> BinnedDistribution:
    return BinnedDistribution(grid=grid, masses=_bin_samples(samples, grid))


def distance_tv(h1: BinnedDistribution, h2: BinnedDistribution) -> float:
    """Half the L1 distance between normalized bin masses, in [0, 1].

    For pairwise-marginal histograms this is the largest pairwise value,
    a lower bound on the joint distance.
    """
    if h1.grid.key() != h2.grid.key():
        raise GridMismatch("histograms live on different grids")
    if h1.grid.kind == "joint":
        return 0.5 * float(np.abs(h1.masses - h2.masses).sum())
    return max(0.5 * float(np.abs(h1.masses[k] - h2.masses[k]).sum()) for k in h1.masses)


@dataclass(frozen=True)
class SnapshotSet:
    """Terminal-state samples and their binned distributions at each time."""

    times: tuple[float, ...]
    samples: np.ndarray  # (len(times), replicas, n)
    histograms: tuple[BinnedDistribution, ...]
    replica_count: int
    seed: int


def snapshot_distributions(spec: ChainSpec, x0, times: Sequence[float], replicas: int,
                           config: SimConfig, workers: int = 1,
                           bins: Optional[int] = None) -> SnapshotSet:
    """Sample the time-t laws: one ensemble, terminal states kept at each t.

    All snapshots share one grid (derived from the pooled samples) so that
    their distances are comparable.
    """
    times = [float(t) for t in times]
    if any(b > a for a, b in zip(times[1:], times)):
        raise ValueError("snapshot times must be increasing")
    cfg = SimConfig(dt=config.dt, horizon=max(times[-1], config.dt), burn_in=0.0,
                    thin=config.thin, seed=config.seed, cap=config.cap)
    summary = ensemble(spec, x0, replicas, cfg, snapshot_times=times,
                       workers=workers, collect_occupation=False)
    samples = summary.snapshots
    n = spec.n
    kind = "joint" if n <= 3 else "pairs"
    if bins is None:
        bins = _JOINT_BINS.get(n, _PAIR_BINS)
    grid = _make_grid(samples, kind, bins)
    hists = tuple(bin_distribution(samples[i], grid) for i in range(len(times)))
    return SnapshotSet(times=tuple(times), samples=samples, histograms=hists,
                       replica_count=replicas, seed=config.seed)


def bootstrap_noise_floor(samples: np.ndarray, grid: BinGrid, seed: int,
                          n_boot: int = 200, percentile: float = 95.0) -> float:
    """95th percentile of split-half self-distances of one sample set."""
    rng = np.random.default_rng(seed)
    r = samples.shape[0]
    half = r // 2
    dists = np.empty(n_boot)
    for b in range(n_boot):
        perm = rng.permutation(r)
        h1 = bin_distribution(samples[perm[:half]], grid)
        h2 = bin_distribution(samples[perm[half:2 * half]], grid)
        dists[b] = distance_tv(h1, h2)
    return float(np.percentile(dists, percentile))


@dataclass(frozen=True)
class RateFit:
    exp_rate: float
    exp_r2: float
    poly_exponent: float
    poly_r2: float
    verdict: str  # Exponential | Polynomial | Inconclusive
    noise_floor: float
    distances: tuple[tuple[float, float], ...]
    n_used: int
    reference_converged: bool

    def to_dict(self) -> dict:
        return {
            "distances": [{"t": t, "d": d} for t, d in self.distances],
            "exp": {"rate": self.exp_rate, "r2": self.exp_r2},
            "poly": {"exponent": self.poly_exponent, "r2": self.poly_r2},
            "verdict": self.verdict,
            "noise_floor": self.noise_floor,
        }


def _r2(y: np.ndarray, fitted: np.ndarray) -> float:
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def fit_decay(times: Sequence[float], distances: Sequence[float],
              noise_floor: float = 0.0, fit_cut: Optional[float] = None,
              reference_converged: bool = True,
              min_points: int = 4, margin: float = 0.1,
              saturation: float = 0.9) -> RateFit:
    """Regress log-distance on t (exponential law) and on log t (power law).

    Only informative distances enter the fits: above `fit_cut` (defaults to
    the noise floor; estimates within a small multiple of the floor are
    noise-inflated and flatten the tail), at strictly positive times, and
    below `saturation` (total variation pegged near its ceiling of 1
    measures support separation, not decay).  With fewer than `min_points`
    such distances, or without a converged reference, the verdict is
    Inconclusive.  Otherwise the model whose R^2 leads by `margin` wins.
    """
    cut = noise_floor if fit_cut is None else fit_cut
    pairs = tuple((float(t), float(d)) for t, d in zip(times, distances))
    usable = [(t, d) for t, d in pairs if cut < d <= saturation and t > 0]
    if len(usable) < min_points:
        return RateFit(math.nan, 0.0, math.nan, 0.0, "Inconclusive", noise_floor,
                       pairs, len(usable), reference_converged)
    t = np.array([p[0] for p in usable])
    logd = np.log([p[1] for p in usable])
    exp_coef = np.polyfit(t, logd, 1)
    exp_r2 = _r2(logd, np.polyval(exp_coef, t))
    logt = np.log(t)
    poly_coef = np.polyfit(logt, logd, 1)
    poly_r2 = _r2(logd, np.polyval(poly_coef, logt))
    verdict = "Inconclusive"
    if reference_converged:
        if exp_r2 - poly_r2 >= margin:
            verdict = "Exponential"
        elif poly_r2 - exp_r2 >= margin:
            verdict = "Polynomial"
    return RateFit(
        exp_rate=float(-exp_coef[0]),
        exp_r2=exp_r2,
        poly_exponent=float(-poly_coef[0]),
        poly_r2=poly_r2,
        verdict=verdict,
        noise_floor=noise_floor,
        distances=pairs,
        n_used=len(usable),
        reference_converged=reference_converged,
    )


def rate_fit(snapshots: SnapshotSet, n_boot: int = 200) -> RateFit:
    """Fit the decay of TV distances to the final snapshot.

    The final snapshot proxies the stationary law; the fit is trusted only
    when the last inter-snapshot distance sits at the bootstrap noise floor
    (within a factor 2), otherwise the verdict is Inconclusive.
    """
    if len(snapshots.times) < 5:
        raise TooFewPoints("need at least 5 snapshot times")
    ref = snapshots.histograms[-1]
    times = snapshots.times[:-1]
    dists = [distance_tv(h, ref) for h in snapshots.histograms[:-1]]
    floor = bootstrap_noise_floor(snapshots.samples[-1], ref.grid, seed=snapshots.seed + 1,
                                  n_boot=n_boot)
    converged = dists[-1] <= 2.0 * floor
    return fit_decay(times, dists, noise_floor=floor, fit_cut=2.0 * floor,
                     reference_converged=converged)


def distance_fnorm(samples1: np.ndarray, samples2: np.ndarray,
                   f: Callable[[np.ndarray], np.ndarray],
                   bins: Optional[int] = None) -> float:
    """f-weighted half-L1 distance between binned sample sets.

    Estimates a lower bound of sup{|mu g - nu g| : |g| <= f}: the samples are
    binned on a shared grid and f is frozen at cell centers, so mass moved
    within a cell is invisible.  With f == 1 this is exactly `distance_tv`
    of the two histograms.
    """
    samples1 = np.asarray(samples1, dtype=float)
    samples2 = np.asarray(samples2, dtype=float)
    n = samples1.shape[1]
    if samples2.shape[1] != n:
        raise GridMismatch("sample sets have different dimensions")
    if bins is None:
        bins = _JOINT_BINS.get(n, 12)
    grid = _make_grid(np.concatenate([samples1, samples2], axis=0), "joint", bins)
    h1 = bin_distribution(samples1, grid)
    h2 = bin_distribution(samples2, grid)
    centers = _cell_centers(grid)
    weights = np.asarray(f(centers), dtype=float)
    return 0.5 * float(np.sum(weights * np.abs(h1.masses - h2.masses)))


def _cell_centers(grid: BinGrid) -> np.ndarray:
    """Representative point of every joint cell (row-major cell order).

    Under/overflow cells take the nearest edge as their representative.
    """
    axes = []
    for e in grid.log_edges:
        mids = 0.5 * (e[:-1] + e[1:])
        axes.append(np.exp(np.concatenate(([e[0]], mids, [e[-1]]))))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def batch_se(series: np.ndarray, n_batches: int = 100) -> float:
    """Standard error of the mean of a correlated series via batch means."""
    series = np.asarray(series, dtype=float)
    m = series.size // n_batches
    if m < 1:
        raise ValueError("series too short for the requested batch count")
    trimmed = series[: m * n_batches].reshape(n_batches, m)
    means = trimmed.mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


@dataclass(frozen=True)
class InvasionEstimate:
    """Time-average estimate of the per-capita growth of the next species."""

    j: int
    estimate: float
    std_error: float
    subchain_mean: np.ndarray
    horizon: float

    def to_dict(self) -> dict:
        return {
            "j": self.j,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "subchain_mean": self.subchain_mean.tolist(),
            "horizon": self.horizon,
        }


def boundary_invasion_rate(spec: ChainSpec, j: int, config: SimConfig) -> InvasionEstimate:
    """Estimate the invasion rate of species j+1 against the persistent law
    of the sub-chain on species 1..j.

    Simulates the j-species sub-chain from its equilibrium and averages
    F~_{j+1} = -a~_{j+1,0} + a~_{j+1,j} x_j along the path; the standard
    error comes from batch means of x_j.
    """
    if not 1 <= j < spec.n:
        raise ValueError(f"j must be in 1..{spec.n - 1}, got {j}")
    sub = subchain(spec, j)
    sub_tilde = tilde_transform(sub)
    if delta_tilde(sub_tilde, j) <= 0:
        raise SubchainNotPersistent(f"delta({j}) <= 0: sub-chain cannot persist")
    if not (sub.sigma[0] > 0 or sub.sigma[j - 1] > 0):
        raise SubchainNotPersistent(
            "sub-chain noise support inadmissible: need sigma_1 > 0 or sigma_j > 0")
    x0 = np.asarray(equilibrium(sub_tilde), dtype=float)
    traj = simulate(sub, x0, config)
    occ = occupation_measure(traj)
    tilde = tilde_transform(spec)
    gain = tilde.lo[j]  # a~_{j+1,j}
    death = tilde.a0[j]  # a~_{j+1,0}
    estimate = -death + gain * float(occ.moment1[j - 1])
    se = gain * batch_se(traj.states[:, j - 1])
    return InvasionEstimate(j=j, estimate=estimate, std_error=se,
                            subchain_mean=occ.moment1, horizon=config.horizon)


def moment_identity_check(spec: ChainSpec, occupation: OccupationAccumulator) -> np.ndarray:
    """Residuals of the stationary moment identities.

    For a persistent chain the stationary mean m satisfies F~(m) = 0
    componentwise (the rates are affine, so the time-average of F~ equals F~
    of the time-average); the residual vector is F~(moment1), which should
    sit at statistical noise for a converged run.
    """
    tilde = tilde_transform(spec)
    return per_capita_Ftilde(tilde, occupation.moment1)
