"""Pump scheduling for lumped water networks: simulate, learn, retrieve, repair."""

__version__ = "0.1.0"

from .env import (
    AgentKind,
    EpisodeConfig,
    FrameSkipEnv,
    PumpSchedulingEnv,
    RewardConfig,
    reward_config_for,
    run_policy_episode,
    sample_episode,
    sample_operational_episode,
)
from .errors import (
    NumericError,
    PumpschedError,
    SchemaError,
    TrainingError,
    ValidationError,
)
from .history import (
    DEFAULT_IMPERFECTION,
    HistoryArchive,
    RuleBasedController,
    generate_history,
    load_history,
    margins_for,
    run_controlled_day,
    save_history,
)
from .hybrid import (
    HybridCase,
    InjectionPlan,
    StrategyReport,
    ViolationWindow,
    build_case_pool,
    detect_violations,
    evaluate_strategies,
    inject,
)
from .metrics import (
    PoolResult,
    area_outside_boundary,
    compare,
    episode_cost,
    mape,
    violation_count,
)
from .network import (
    DemandSet,
    DemandZoneSpec,
    NetworkTopology,
    PumpStationSpec,
    TankSpec,
    TariffSchedule,
    demands_from_rng,
    generate_demands,
    generate_synthetic_network,
    load_network,
    save_network,
    topology_from_dict,
    topology_to_dict,
)
from .policy import (
    PolicyParameters,
    init_policy,
    load_checkpoint,
    policy_forward,
    save_checkpoint,
)
from .query import QueryRecommender, build_index, load_index, recommend, save_index
from .simulate import (
    Trajectory,
    pump_flow,
    pump_power,
    shift_predict,
    shift_valid,
    simulate,
    step,
)
from .training import EnvSpec, TrainConfig, policy_act_fn, train

__all__ = [
    "AgentKind",
    "DemandSet",
    "DemandZoneSpec",
    "DEFAULT_IMPERFECTION",
    "EnvSpec",
    "EpisodeConfig",
    "FrameSkipEnv",
    "HistoryArchive",
    "HybridCase",
    "InjectionPlan",
    "NetworkTopology",
    "NumericError",
    "PolicyParameters",
    "PoolResult",
    "PumpSchedulingEnv",
    "PumpschedError",
    "PumpStationSpec",
    "QueryRecommender",
    "RewardConfig",
    "RuleBasedController",
    "SchemaError",
    "StrategyReport",
    "TankSpec",
    "TariffSchedule",
    "TrainConfig",
    "TrainingError",
    "Trajectory",
    "ValidationError",
    "ViolationWindow",
    "area_outside_boundary",
    "build_case_pool",
    "build_index",
    "compare",
    "demands_from_rng",
    "detect_violations",
    "episode_cost",
    "evaluate_strategies",
    "generate_demands",
    "generate_history",
    "generate_synthetic_network",
    "init_policy",
    "inject",
    "load_checkpoint",
    "load_history",
    "load_index",
    "load_network",
    "mape",
    "margins_for",
    "policy_act_fn",
    "policy_forward",
    "pump_flow",
    "pump_power",
    "recommend",
    "reward_config_for",
    "run_controlled_day",
    "run_policy_episode",
    "sample_episode",
    "sample_operational_episode",
    "save_checkpoint",
    "save_history",
    "save_index",
    "save_network",
    "shift_predict",
    "shift_valid",
    "simulate",
    "step",
    "topology_from_dict",
    "topology_to_dict",
    "train",
    "violation_count",
]
