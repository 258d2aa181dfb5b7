"""Command-line frontend: analyze / verify / simulate / rates.

Machine-readable outputs only: JSON for reports, CSV for time series.  Every
run that writes to --out leaves exactly one manifest.json recording the spec
hash and the fully resolved parameter set, so the run can be reproduced from
the manifest alone.  FOODCHAIN_SEED, when set, overrides --seed everywhere.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .hormander import (
    EquilibriumAbsent,
    ZeroNoiseAtAnchor,
    accessibility_probe,
    rank_at,
)
from .lyapunov import CertInputs, ScanPlan, SingleSpecies, verify_drift_inequalities
from .model import ChainSpec, SpecError, tilde_transform, validate
from .persistence import Infeasible, classify, equilibrium
from .rates import rate_fit, snapshot_distributions
from .engine import InvalidConfig, SimConfig, ensemble
from .rates import moment_identity_check

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_EXTINCT = 10
EXIT_BOUNDARY = 11
EXIT_UNSUPPORTED = 12
EXIT_CERT_FAILED = 1
EXIT_ZERO_NOISE_ANCHOR = 20
EXIT_SINGLE_SPECIES = 21


@dataclass
class RunManifest:
    tool: str
    version: str
    subcommand: str
    spec_path: str
    spec_sha256: str
    parameters: dict
    seed: Optional[int]
    started: str
    finished: str


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def _load_spec(path: str) -> tuple[ChainSpec, str]:
    raw = Path(path).read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    return validate(json.loads(raw)), digest


def _resolve_seed(args) -> Optional[int]:
    env = os.environ.get("FOODCHAIN_SEED")
    if env is not None:
        return int(env)
    return getattr(args, "seed", None)


def _dump_json(obj, path: Optional[Path]) -> None:
    text = json.dumps(obj, indent=2)
    if path is None:
        sys.stdout.write(text + "\n")
    else:
        path.write_text(text + "\n")


def _write_manifest(out: Path, manifest: RunManifest) -> None:
    (out / "manifest.json").write_text(json.dumps(asdict(manifest), indent=2) + "\n")


def _parse_csv_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def cmd_analyze(args) -> int:
    try:
        spec, digest = _load_spec(args.spec)
    except SpecError as exc:
        for v in exc.violations:
            print(f"spec error at {v.path}: {v.message}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read spec: {exc}", file=sys.stderr)
        return EXIT_USAGE
    started = _utcnow()
    report = classify(spec)
    doc = report.to_dict()
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        _dump_json(doc, out / "analysis.json")
        _write_manifest(out, RunManifest("foodchain", __version__, "analyze", args.spec,
                                         digest, {}, None, started, _utcnow()))
    else:
        _dump_json(doc, None)
    return {
        "Persistent": EXIT_OK,
        "ExtinctAbove": EXIT_EXTINCT,
        "Boundary": EXIT_BOUNDARY,
        "UnsupportedNoise": EXIT_UNSUPPORTED,
    }[report.classification]


def cmd_verify(args) -> int:
    try:
        spec, digest = _load_spec(args.spec)
    except SpecError as exc:
        for v in exc.violations:
            print(f"spec error at {v.path}: {v.message}", file=sys.stderr)
        return EXIT_USAGE
    started = _utcnow()
    seed = _resolve_seed(args)
    run_all = not (args.lyapunov or args.hormander or args.accessibility)
    doc = {"lyapunov": None, "hormander": None, "accessibility": None,
           "passed": True, "context": None}
    code = EXIT_OK

    tilde = tilde_transform(spec)
    rng = np.random.default_rng(seed)

    if args.lyapunov or run_all:
        try:
            cert = verify_drift_inequalities(
                spec, CertInputs(), ScanPlan(seed=seed if seed is not None else 12345))
            doc["lyapunov"] = cert.to_json_rows()
            if not cert.passed:
                doc["passed"] = False
        except SingleSpecies as exc:
            doc["passed"] = False
            doc["context"] = f"SingleSpecies: {exc}"
            _finish_verify(args, doc, digest, started, seed)
            return EXIT_SINGLE_SPECIES

    if args.hormander or run_all:
        points = []
        try:
            points.append(np.asarray(equilibrium(tilde), dtype=float))
        except Infeasible:
            pass
        for _ in range(args.points):
            points.append(np.exp(rng.uniform(np.log(0.1), np.log(10.0), spec.n)))
        try:
            reports = [rank_at(tilde, x, tolerance=args.tolerance) for x in points]
            doc["hormander"] = [r.to_dict() for r in reports]
            if not all(r.satisfied for r in reports):
                doc["passed"] = False
        except ZeroNoiseAtAnchor as exc:
            doc["passed"] = False
            doc["context"] = f"ZeroNoiseAtAnchor: {exc}"
            _finish_verify(args, doc, digest, started, seed)
            return EXIT_ZERO_NOISE_ANCHOR

    if args.accessibility or run_all:
        try:
            probes = []
            for _ in range(args.points):
                x0 = np.exp(rng.uniform(np.log(0.2), np.log(5.0), spec.n))
                probes.append(accessibility_probe(tilde, x0, horizon=args.horizon))
            doc["accessibility"] = [p.to_dict() for p in probes]
            if not all(p.converged for p in probes):
                doc["passed"] = False
        except EquilibriumAbsent as exc:
            doc["passed"] = False
            doc["context"] = f"EquilibriumAbsent: {exc}"

    _finish_verify(args, doc, digest, started, seed)
    if code == EXIT_OK and not doc["passed"]:
        code = EXIT_CERT_FAILED
    return code


def _finish_verify(args, doc, digest, started, seed) -> None:
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        _dump_json(doc, out / "certificates.json")
        params = {"points": args.points, "tolerance": args.tolerance, "horizon": args.horizon,
                  "lyapunov": args.lyapunov, "hormander": args.hormander,
                  "accessibility": args.accessibility}
        _write_manifest(out, RunManifest("foodchain", __version__, "verify", args.spec,
                                         digest, params, seed, started, _utcnow()))
    else:
        _dump_json(doc, None)


def _sim_config(args, seed: int) -> SimConfig:
    return SimConfig(dt=args.dt, horizon=args.horizon, burn_in=args.burn_in,
                     thin=args.thin, seed=seed, cap=args.cap)


def _write_trajectory_csv(path: Path, traj) -> None:
    n = traj.states.shape[1]
    header = "t," + ",".join(f"x{i + 1}" for i in range(n))
    lines = [header]
    for t, row in zip(traj.times, traj.states):
        lines.append(f"{float(t)!r}," + ",".join(f"{float(v)!r}" for v in row))
    path.write_text("\n".join(lines) + "\n")


def cmd_simulate(args) -> int:
    try:
        spec, digest = _load_spec(args.spec)
        if args.replicas < 1:
            raise InvalidConfig("--replicas must be >= 1")
        seed = _resolve_seed(args) or 0
        config = _sim_config(args, seed)
        x0 = np.array(_parse_csv_floats(args.x0))
        started = _utcnow()
        summary = ensemble(spec, x0, args.replicas, config, workers=args.workers,
                           threshold=args.threshold)
    except (SpecError, InvalidConfig, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    occ = summary.occupation
    residual = moment_identity_check(spec, occ) if occ.count else None
    occupation_doc = {
        "duration": occ.duration,
        "records": occ.count,
        "moment1": occ.moment1.tolist(),
        "momentF": occ.momentF.tolist(),
        "moment_residual": residual.tolist() if residual is not None else None,
        "histogram": {
            "log_lo": occ.grid.log_lo,
            "log_hi": occ.grid.log_hi,
            "bins": occ.grid.bins,
            "counts": occ.counts.tolist(),
        },
    }
    ext = summary.extinction
    extinction_doc = {
        "threshold": ext.threshold,
        "species": [
            {"mean": float(ext.mean[i]), "frac_below": float(ext.frac_below[i])}
            for i in range(spec.n)
        ],
        "exited_replicas": summary.exited_replicas,
        "floor_events": summary.floor_events,
    }
    params = {
        "x0": list(map(float, _parse_csv_floats(args.x0))),
        "dt": args.dt, "horizon": args.horizon, "burn_in": config.effective_burn_in,
        "thin": config.effective_thin, "replicas": args.replicas,
        "cap": args.cap, "workers": args.workers, "threshold": args.threshold,
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_trajectory_csv(out / "trajectory.csv", summary.first)
        _dump_json(occupation_doc, out / "occupation.json")
        _dump_json(extinction_doc, out / "extinction.json")
        _write_manifest(out, RunManifest("foodchain", __version__, "simulate", args.spec,
                                         digest, params, seed, started, _utcnow()))
    else:
        _dump_json({"occupation": occupation_doc, "extinction": extinction_doc}, None)
    return EXIT_OK


def cmd_rates(args) -> int:
    try:
        spec, digest = _load_spec(args.spec)
        if args.replicas < 1:
            raise InvalidConfig("--replicas must be >= 1")
        seed = _resolve_seed(args) or 0
        times = _parse_csv_floats(args.times)
        if len(times) < 5:
            raise InvalidConfig("need at least 5 snapshot times")
        x0 = np.array(_parse_csv_floats(args.x0))
        config = SimConfig(dt=args.dt, horizon=max(times), burn_in=0.0, seed=seed, cap=args.cap)
        started = _utcnow()
        snaps = snapshot_distributions(spec, x0, times, args.replicas, config,
                                       workers=args.workers, bins=args.bins)
    except (SpecError, InvalidConfig, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    fit = rate_fit(snaps)
    doc = fit.to_dict()
    params = {
        "x0": list(map(float, _parse_csv_floats(args.x0))),
        "times": times, "replicas": args.replicas, "dt": args.dt,
        "cap": args.cap, "workers": args.workers, "bins": args.bins,
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _dump_json(doc, out / "rates.json")
        lines = ["t,d"] + [f"{t!r},{d!r}" for t, d in fit.distances]
        (out / "distances.csv").write_text("\n".join(lines) + "\n")
        _write_manifest(out, RunManifest("foodchain", __version__, "rates", args.spec,
                                         digest, params, seed, started, _utcnow()))
    else:
        _dump_json(doc, None)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="foodchain",
        description="Analyze and simulate stochastic Lotka-Volterra food chains.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="classify persistence vs extinction from coefficients")
    p.add_argument("spec", help="chain spec JSON file")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("verify", help="certify drift, rank and accessibility hypotheses")
    p.add_argument("spec")
    p.add_argument("--lyapunov", action="store_true")
    p.add_argument("--hormander", action="store_true")
    p.add_argument("--accessibility", action="store_true")
    p.add_argument("--points", type=int, default=5, help="probe points per check")
    p.add_argument("--tolerance", type=float, default=1e-10, help="rank threshold")
    p.add_argument("--horizon", type=float, default=500.0, help="accessibility horizon")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="integrate trajectories and accumulate statistics")
    p.add_argument("--spec", required=True)
    p.add_argument("--x0", required=True, help="comma-separated initial densities")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--horizon", type=float, default=100.0)
    p.add_argument("--burn-in", dest="burn_in", type=float, default=None)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap", type=float, default=60.0)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--threshold", type=float, default=1e-4, help="extinction threshold")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("rates", help="snapshot distances and convergence-rate fit")
    p.add_argument("--spec", required=True)
    p.add_argument("--x0", required=True)
    p.add_argument("--times", required=True, help="comma-separated snapshot times")
    p.add_argument("--replicas", type=int, default=1000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap", type=float, default=60.0)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_rates)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
