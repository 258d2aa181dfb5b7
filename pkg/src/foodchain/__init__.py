"""Stochastic Lotka-Volterra food chains: persistence analysis, Lyapunov and
bracket-rank certificates, and reproducible Monte-Carlo simulation."""

__version__ = "0.1.0"

from .model import (
    ChainSpec,
    TildeSpec,
    SpecError,
    build_spec,
    validate,
    spec_to_dict,
    subchain,
    tilde_transform,
    per_capita_F,
    per_capita_Ftilde,
    drift_vector_A0,
    drift_jacobian,
)
from .persistence import (
    AdjacentMatching,
    RegimeReport,
    Infeasible,
    adjacent_matchings,
    delta_tilde,
    delta_tilde_all,
    equilibrium,
    classify,
)
from .lyapunov import LyapunovU, build_U, q_zero, verify_drift_inequalities
from .hormander import bracket_chain, lie_bracket, rank_at, accessibility_probe
from .engine import (
    SimConfig,
    Trajectory,
    OccupationAccumulator,
    simulate,
    ensemble,
    occupation_measure,
    extinction_stats,
    step_log_em,
)
from .rates import (
    SnapshotSet,
    RateFit,
    snapshot_distributions,
    distance_tv,
    distance_fnorm,
    rate_fit,
    boundary_invasion_rate,
    moment_identity_check,
)
