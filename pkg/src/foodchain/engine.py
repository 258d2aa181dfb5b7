"""Positivity-preserving simulation of the food-chain SDE.

Integration runs on log-densities: the corrected per-capita rates are the
exact drift of ln X_i and the noise term is exact there, so positive
coordinates stay positive bit-for-bit and zero coordinates stay on the
(invariant) boundary.  Noise is drawn from counter-mode Philox streams keyed
by (seed, replica, chunk), making every trajectory a pure function of
(spec, x0, config, replica) regardless of how work is scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._backend import BACKEND, step_chunk
from .model import ChainSpec, TildeSpec, tilde_transform

__all__ = [
    "BACKEND",
    "CHUNK_STEPS",
    "SimConfig",
    "Trajectory",
    "HistogramGrid",
    "OccupationAccumulator",
    "ExtinctionStats",
    "EnsembleSummary",
    "InvalidConfig",
    "EmptyTrajectory",
    "step_log_em",
    "simulate",
    "ensemble",
    "occupation_measure",
    "extinction_stats",
]

# Noise chunk granularity; fixed so that draws depend only on (seed, replica, step).
CHUNK_STEPS = 1 << 16
MAX_RECORDS = 1_000_000


class InvalidConfig(ValueError):
    pass


class EmptyTrajectory(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Integration plan: step size, horizon, recording and the RNG seed.

    `burn_in` defaults to 20% of the horizon; `thin` defaults to the smallest
    stride that keeps at most one million records.  `cap` bounds |ln X_i|:
    overflow above aborts a trajectory, underflow below declares the species
    extinct and pins it to the boundary.
    """

    dt: float = 1e-3
    horizon: float = 100.0
    burn_in: Optional[float] = None
    thin: Optional[int] = None
    seed: int = 0
    cap: float = 60.0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InvalidConfig(f"dt must be positive and finite, got {self.dt}")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise InvalidConfig(f"horizon must be positive and finite, got {self.horizon}")
        if self.effective_burn_in >= self.horizon or self.effective_burn_in < 0:
            raise InvalidConfig(f"burn_in must be in [0, horizon), got {self.burn_in}")
        if self.thin is not None and self.thin < 1:
            raise InvalidConfig(f"thin must be >= 1, got {self.thin}")
        if not self.cap > 0:
            raise InvalidConfig(f"cap must be positive, got {self.cap}")

    @property
    def effective_burn_in(self) -> float:
        return 0.2 * self.horizon if self.burn_in is None else self.burn_in

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    @property
    def first_record_step(self) -> int:
        return int(math.ceil(self.effective_burn_in / self.dt - 1e-9))

    @property
    def effective_thin(self) -> int:
        if self.thin is not None:
            return self.thin
        potential = self.n_steps - self.first_record_step + 1
        return max(1, -(-potential // MAX_RECORDS))


@dataclass(frozen=True)
class Trajectory:
    """Recorded (thinned) sample path, strictly positive where alive."""

    tilde: TildeSpec
    times: np.ndarray
    states: np.ndarray
    dt: float
    thin: int
    exited: bool = False
    exit_reason: Optional[str] = None
    exit_time: Optional[float] = None
    floor_times: dict = field(default_factory=dict)  # species index -> time of extinction pinning


@dataclass(frozen=True)
class HistogramGrid:
    """Per-species log-spaced bins on [exp(log_lo), exp(log_hi)] plus
    underflow/overflow bins (indices 0 and bins+1)."""

    log_lo: float = -20.0
    log_hi: float = 20.0
    bins: int = 256

    def index(self, values: np.ndarray) -> np.ndarray:
        width = (self.log_hi - self.log_lo) / self.bins
        idx = np.zeros(values.shape, dtype=np.int64)  # zeros land in underflow
        pos = values > 0
        shifted = np.floor((np.log(values[pos]) - self.log_lo) / width).astype(np.int64) + 1
        idx[pos] = np.clip(shifted, 0, self.bins + 1)
        return idx


@dataclass
class OccupationAccumulator:
    """Running time-average statistics of a trajectory.

    Each record stands for thin*dt units of time; `moment1` estimates the
    stationary mean of X, `momentF` the stationary mean of the corrected
    per-capita rates (zero when converged, for a persistent chain).
    """

    grid: HistogramGrid
    weight: float  # time carried by one record
    count: int = 0
    sum_x: np.ndarray = None
    sum_f: np.ndarray = None
    counts: np.ndarray = None  # (n, bins + 2)
    pair_counts: Optional[dict] = None

    @property
    def duration(self) -> float:
        return self.count * self.weight

    @property
    def moment1(self) -> np.ndarray:
        if self.count == 0:
            raise EmptyTrajectory("no records accumulated")
        return self.sum_x / self.count

    @property
    def momentF(self) -> np.ndarray:
        if self.count == 0:
            raise EmptyTrajectory("no records accumulated")
        return self.sum_f / self.count

    def normalized(self) -> np.ndarray:
        """Per-species histogram masses summing to one."""
        total = self.counts.sum(axis=1, keepdims=True)
        return self.counts / np.maximum(total, 1)

    def merge(self, other: "OccupationAccumulator") -> "OccupationAccumulator":
        if other.grid != self.grid or other.weight != self.weight:
            raise ValueError("cannot merge accumulators with different grids or weights")
        merged = OccupationAccumulator(self.grid, self.weight, self.count + other.count,
                                       self.sum_x + other.sum_x, self.sum_f + other.sum_f,
                                       self.counts + other.counts)
        if self.pair_counts is not None and other.pair_counts is not None:
            merged.pair_counts = {k: self.pair_counts[k] + other.pair_counts[k] for k in self.pair_counts}
        return merged


@dataclass(frozen=True)
class ExtinctionStats:
    threshold: float
    mean: np.ndarray
    frac_below: np.ndarray


@dataclass(frozen=True)
class EnsembleSummary:
    replicas: int
    snapshot_times: tuple
    snapshots: np.ndarray  # (len(times), replicas, n)
    occupation: Optional[OccupationAccumulator]
    extinction: Optional[ExtinctionStats]
    exited_replicas: int
    floor_events: int
    first: Optional[Trajectory]


def _tilde_arrays(tilde: TildeSpec, dt: float):
    a0s = np.array(tilde.signed_a0(), dtype=np.float64)
    lo = np.array(tilde.lo, dtype=np.float64)
    aii = np.array(tilde.aii, dtype=np.float64)
    hi = np.array(tilde.hi, dtype=np.float64)
    sig_sqdt = np.array([s * math.sqrt(dt) for s in tilde.sigma], dtype=np.float64)
    return a0s, lo, aii, hi, sig_sqdt


def _noise_block(seed: int, replica: int, chunk: int, rows: int, n: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(replica, chunk))
    return np.random.Generator(np.random.Philox(ss)).standard_normal((rows, n))


def step_log_em(tilde: TildeSpec, y, dt: float, xi) -> np.ndarray:
    """One log-space Euler-Maruyama step with caller-supplied normal draws:
    y'_i = y_i + F~_i(exp y) dt + sigma_i sqrt(dt) xi_i."""
    y = np.array(y, dtype=np.float64)
    n = y.shape[0]
    xi = np.asarray(xi, dtype=np.float64).reshape(1, n).copy()
    a0s, lo, aii, hi, sig_sqdt = _tilde_arrays(tilde, dt)
    active = np.ones(n, dtype=np.uint8)
    out = np.empty((0, n))
    floor_step = np.full(n, -1, dtype=np.int64)
    done, _, code = step_chunk(a0s, lo, aii, hi, sig_sqdt, active, y, np.empty(n), xi,
                               float(dt), math.inf, 0, 1, 0, out, 0, floor_step)
    if done != 1 or code != 0:
        raise ArithmeticError("single step overflowed")
    return y


def _integrate(arrs, x0: np.ndarray, config: SimConfig, replica: int,
               record: bool, snapshot_steps: Sequence[int]):
    """Advance one trajectory; returns records, snapshots and exit details.

    Noise chunk boundaries sit on fixed multiples of CHUNK_STEPS regardless
    of snapshot cuts, so the draws seen by step k never depend on what is
    being recorded.
    """
    a0s, lo, aii, hi, sig_sqdt = arrs
    n = x0.shape[0]
    dt = config.dt
    n_steps = config.n_steps
    thin = config.effective_thin if record else 0
    k_first = config.first_record_step

    active = (x0 > 0).astype(np.uint8)
    y = np.zeros(n)
    pos = x0 > 0
    y[pos] = np.log(x0[pos])

    n_rec = 0
    out = np.empty((0, n))
    if record and k_first <= n_steps:
        n_rec = (n_steps - k_first) // thin + 1
        out = np.empty((n_rec, n))
    rec_filled = 0
    if record and k_first == 0:
        out[0] = x0
        rec_filled = 1

    snaps = {}
    targets = [int(s) for s in snapshot_steps]
    if 0 in targets:
        snaps[0] = x0.copy()
    pending = sorted(set(t for t in targets if t > 0))

    xwork = np.empty(n)
    floor_step = np.full(n, -1, dtype=np.int64)
    g = 0
    exit_code = 0
    ti = 0
    while g < n_steps and exit_code == 0:
        chunk = g // CHUNK_STEPS
        c_start = chunk * CHUNK_STEPS
        c_rows = min(CHUNK_STEPS, n_steps - c_start)
        xi = _noise_block(config.seed, replica, chunk, c_rows, n)
        local = g - c_start
        while local < c_rows and exit_code == 0:
            seg_end = c_start + c_rows
            if ti < len(pending):
                seg_end = min(seg_end, pending[ti])
            rows = seg_end - g
            done, rec, exit_code = step_chunk(
                a0s, lo, aii, hi, sig_sqdt, active, y, xwork,
                xi[local:local + rows], dt, config.cap,
                g, k_first if record else n_steps + 1, thin,
                out, rec_filled, floor_step)
            g += done
            local += done
            rec_filled += rec
            if exit_code:
                break
            if ti < len(pending) and g == pending[ti]:
                snaps[g] = np.where(active.astype(bool), np.exp(y), 0.0)
                ti += 1

    return {
        "out": out[:rec_filled],
        "ks": (k_first + thin * np.arange(rec_filled)) if record and n_rec else np.arange(0),
        "snaps": snaps,
        "active": active,
        "floor_step": floor_step,
        "exit_code": exit_code,
        "steps_done": g,
    }


def simulate(spec: ChainSpec, x0, config: SimConfig, replica: int = 0) -> Trajectory:
    """Integrate one trajectory and record every `thin` steps after burn-in.

    Coordinates of x0 that are exactly zero are held on the boundary; the
    rest evolve in log space and stay strictly positive.
    """
    tilde = tilde_transform(spec)
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (spec.n,):
        raise InvalidConfig(f"x0 must have shape ({spec.n},)")
    if not np.all(np.isfinite(x0)) or np.any(x0 < 0):
        raise InvalidConfig("x0 must be finite and componentwise >= 0")
    res = _integrate(_tilde_arrays(tilde, config.dt), x0, config, replica,
                     record=True, snapshot_steps=())
    return _trajectory_from(res, tilde, config)


def _trajectory_from(res, tilde: TildeSpec, config: SimConfig) -> Trajectory:
    ks = res["ks"]
    states = res["out"]
    times = ks * config.dt
    code = res["exit_code"]
    floor_times = {
        int(i): float(res["floor_step"][i] * config.dt)
        for i in range(tilde.n)
        if res["floor_step"][i] >= 0
    }
    return Trajectory(
        tilde=tilde,
        times=times,
        states=states,
        dt=config.dt,
        thin=config.effective_thin,
        exited=bool(code),
        exit_reason=f"log-density overflow in species {code}" if code else None,
        exit_time=res["steps_done"] * config.dt if code else None,
        floor_times=floor_times,
    )


def _fold_occupation(acc: OccupationAccumulator, tilde: TildeSpec, states: np.ndarray,
                     pairs: bool = False) -> None:
    """Accumulate records into `acc` in place."""
    if states.shape[0] == 0:
        return
    acc.count += states.shape[0]
    acc.sum_x += states.sum(axis=0)
    fvals = _per_capita_batch(tilde, states)
    acc.sum_f += fvals.sum(axis=0)
    n = states.shape[1]
    idx = acc.grid.index(states)
    for i in range(n):
        acc.counts[i] += np.bincount(idx[:, i], minlength=acc.grid.bins + 2)
    if pairs and n > 1:
        if acc.pair_counts is None:
            acc.pair_counts = {}
        b = acc.grid.bins + 2
        for i in range(n):
            for j in range(i + 1, n):
                flat = idx[:, i] * b + idx[:, j]
                add = np.bincount(flat, minlength=b * b).reshape(b, b)
                if (i, j) in acc.pair_counts:
                    acc.pair_counts[(i, j)] += add
                else:
                    acc.pair_counts[(i, j)] = add


def _per_capita_batch(tilde: TildeSpec, states: np.ndarray) -> np.ndarray:
    a0s = np.array(tilde.signed_a0())
    f = a0s[None, :] - np.array(tilde.aii)[None, :] * states
    if tilde.n > 1:
        f[:, 1:] += np.array(tilde.lo[1:])[None, :] * states[:, :-1]
        f[:, :-1] -= np.array(tilde.hi[:-1])[None, :] * states[:, 1:]
    return f


def _empty_accumulator(n: int, grid: HistogramGrid, weight: float) -> OccupationAccumulator:
    return OccupationAccumulator(grid=grid, weight=weight, count=0,
                                 sum_x=np.zeros(n), sum_f=np.zeros(n),
                                 counts=np.zeros((n, grid.bins + 2), dtype=np.int64))


def occupation_measure(traj: Trajectory, grid: Optional[HistogramGrid] = None,
                       pairs: bool = False) -> OccupationAccumulator:
    """Time-weighted occupation statistics of a recorded trajectory."""
    if traj.states.shape[0] == 0:
        raise EmptyTrajectory("trajectory has no recorded states")
    grid = grid or HistogramGrid()
    acc = _empty_accumulator(traj.tilde.n, grid, traj.thin * traj.dt)
    _fold_occupation(acc, traj.tilde, traj.states, pairs=pairs)
    return acc


def extinction_stats(traj: Trajectory, threshold: float) -> ExtinctionStats:
    """Per-species time averages and sub-threshold occupancy."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    if traj.states.shape[0] == 0:
        raise EmptyTrajectory("trajectory has no recorded states")
    mean = traj.states.mean(axis=0)
    frac = (traj.states < threshold).mean(axis=0)
    return ExtinctionStats(threshold=threshold, mean=mean, frac_below=frac)


def ensemble(spec: ChainSpec, x0, replicas: int, config: SimConfig,
             snapshot_times: Sequence[float] = (), workers: int = 1,
             threshold: float = 1e-4, grid: Optional[HistogramGrid] = None,
             collect_occupation: bool = True) -> EnsembleSummary:
    """Independent replicas with per-replica noise streams.

    Snapshot times are rounded to step boundaries; terminal states for each
    requested time land in `snapshots[s, r]`.  `x0` is either one state
    shared by every replica or a (replicas, n) array of per-replica starts
    (an empirical initial law).  Occupation and extinction statistics pool
    the post-burn-in records of all replicas; pooling order is fixed by
    replica index, so results do not depend on `workers`.
    """
    if replicas < 1:
        raise InvalidConfig(f"replicas must be >= 1, got {replicas}")
    tilde = tilde_transform(spec)
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape not in ((spec.n,), (replicas, spec.n)):
        raise InvalidConfig(f"x0 must have shape ({spec.n},) or ({replicas}, {spec.n})")
    if not np.all(np.isfinite(x0)) or np.any(x0 < 0):
        raise InvalidConfig("x0 must be finite and componentwise >= 0")
    x0_for = (lambda r: x0) if x0.ndim == 1 else (lambda r: x0[r])
    grid = grid or HistogramGrid()
    arrs = _tilde_arrays(tilde, config.dt)
    snap_steps = [int(round(t / config.dt)) for t in snapshot_times]
    if any(s < 0 or s > config.n_steps for s in snap_steps):
        raise InvalidConfig("snapshot times must lie within [0, horizon]")

    n = spec.n
    results: list = [None] * replicas

    def run(r: int):
        res = _integrate(arrs, x0_for(r), config, r, record=collect_occupation,
                         snapshot_steps=snap_steps)
        states = res["out"]
        if collect_occupation:
            part = _empty_accumulator(n, grid, config.effective_thin * config.dt)
            _fold_occupation(part, tilde, states)
            below = (states < threshold).sum(axis=0)
        else:
            part, below = None, None
        keep = _trajectory_from(res, tilde, config) if r == 0 and collect_occupation else None
        results[r] = (res["snaps"], part, below, res["exit_code"],
                      int((res["floor_step"] >= 0).sum()), keep)

    if workers <= 1 or replicas == 1:
        for r in range(replicas):
            run(r)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(replicas)))

    snapshots = np.empty((len(snap_steps), replicas, n))
    exited = 0
    floor_events = 0
    pooled = _empty_accumulator(n, grid, config.effective_thin * config.dt) if collect_occupation else None
    below_total = np.zeros(n, dtype=np.int64)
    first = None
    for r in range(replicas):
        snaps, part, below, code, floors, keep = results[r]
        for si, s in enumerate(snap_steps):
            snapshots[si, r] = snaps.get(s, np.full(n, np.nan))
        if part is not None:
            pooled = pooled.merge(part)
            below_total += below
        exited += 1 if code else 0
        floor_events += floors
        if r == 0:
            first = keep

    ext = None
    if collect_occupation and pooled.count > 0:
        ext = ExtinctionStats(threshold=threshold, mean=pooled.moment1,
                              frac_below=below_total / pooled.count)
    return EnsembleSummary(
        replicas=replicas,
        snapshot_times=tuple(float(t) for t in snapshot_times),
        snapshots=snapshots,
        occupation=pooled,
        extinction=ext,
        exited_replicas=exited,
        floor_events=floor_events,
        first=first,
    )
