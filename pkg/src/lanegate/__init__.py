"""Maneuver-level highway decision making with layered safety recovery.

The planner works on a small maneuver lattice (lane index plus a
three-valued longitudinal mode), prices every feasible action sequence
against chance-constrained gap requirements built from a pruned scenario
tree of surrounding-vehicle behaviors, and recovers from infeasibility
through a fixed precedence of slack tiers ending in a rule fallback.  A
frozen-release hysteresis keeps corrective interventions from chattering.

Modules: ``hmdp`` (lattice and kinematics), ``safety`` (gap margins and
hysteresis), ``prediction`` (scenario tree), ``mpc`` (the planner),
``sim`` (closed-loop episodes), ``config`` (JSON configs), ``evaluation``
(randomized batches), ``report`` (tables and figures), ``cli``.
"""

from .config import (
    BatchConfig,
    ConfigError,
    Family,
    ScenarioConfig,
    default_family_grid,
    load_batch,
    load_scenario,
)
from .evaluation import BatchResult, Metrics, aggregate_metrics, run_batch, sample_scenario
from .hmdp import (
    KEEP,
    ONE_STEP_ACTIONS,
    Action,
    KinematicParams,
    KinematicState,
    LaneGeometry,
    ManeuverState,
    Selector,
    feasible_actions,
    integrate_clamped,
    make_selector,
    maneuver_transition,
)
from .mpc import (
    FALLBACK,
    NOMINAL,
    RELAXED,
    CandidatePlan,
    CostWeights,
    Decision,
    DecisionSnapshot,
    EngineParams,
    PlannerConfig,
    SvObservation,
    decide,
    enumerate_plans,
    minimal_slacks,
    plan_cost,
)
from .prediction import (
    BranchHypothesis,
    PredictionConfig,
    ScenarioTree,
    build_scenario_tree,
    prune_tree,
    sv_action_prior,
)
from .safety import (
    CorrectiveState,
    HysteresisState,
    IdmParams,
    RiskParams,
    bandwidth,
    hard_margin,
    idm_gap,
    thresholds,
    update_corrective,
)
from .sim import (
    EpisodeResult,
    EpisodeSummary,
    EpisodeTrace,
    SimConfig,
    VehicleInit,
    run_episode,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # lattice
    "Action",
    "KEEP",
    "ONE_STEP_ACTIONS",
    "ManeuverState",
    "Selector",
    "KinematicState",
    "KinematicParams",
    "LaneGeometry",
    "feasible_actions",
    "maneuver_transition",
    "make_selector",
    "integrate_clamped",
    # safety
    "IdmParams",
    "RiskParams",
    "CorrectiveState",
    "HysteresisState",
    "idm_gap",
    "hard_margin",
    "bandwidth",
    "thresholds",
    "update_corrective",
    # prediction
    "PredictionConfig",
    "BranchHypothesis",
    "ScenarioTree",
    "sv_action_prior",
    "build_scenario_tree",
    "prune_tree",
    # planner
    "CostWeights",
    "PlannerConfig",
    "EngineParams",
    "CandidatePlan",
    "SvObservation",
    "DecisionSnapshot",
    "Decision",
    "NOMINAL",
    "RELAXED",
    "FALLBACK",
    "enumerate_plans",
    "minimal_slacks",
    "plan_cost",
    "decide",
    # simulation
    "SimConfig",
    "VehicleInit",
    "EpisodeTrace",
    "EpisodeSummary",
    "EpisodeResult",
    "run_episode",
    # configuration and evaluation
    "ConfigError",
    "ScenarioConfig",
    "BatchConfig",
    "Family",
    "default_family_grid",
    "load_scenario",
    "load_batch",
    "Metrics",
    "BatchResult",
    "sample_scenario",
    "aggregate_metrics",
    "run_batch",
]
