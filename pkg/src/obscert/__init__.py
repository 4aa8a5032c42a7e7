"""Randomized certification of partial observability for moving-horizon estimators."""

__version__ = "0.1.0"

from .certify import (  # noqa: E402
    CertificationOutcome,
    CertParams,
    DesignGrid,
    build_design_grid,
    certify,
    constraint_g,
    failure_report,
    logspace_set,
    sample_count,
)
from .deadzone import (  # noqa: E402
    DeadZoneSpec,
    ScenarioStats,
    consistency_stat,
    cum_mean,
    deadzone_distance,
    prediction_error,
    scenario_stats,
    total_cost,
)
from .model import SystemModel, cstr_model, get_model, register_model, simulate_flow, step  # noqa: E402
from .sampling import SamplingConfig, Scenario, draw_scenario, draw_scenarios  # noqa: E402
