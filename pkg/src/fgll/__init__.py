"""Factor-graph state estimation and leak localization for water
distribution networks."""

from . import errors
from .benchmark import BenchmarkSettings, run_benchmark
from .factorgraph import Estimate, Factor, FactorGraph, VariableKey, marginal_prior
from .fgsi import Interpolator, build_interpolator
from .hydraulics import (
    HydraulicState,
    Scenario,
    head_demands,
    head_flows,
    sample_sensors,
    simulate_scenario,
    steady_state,
)
from .ingest import (
    MeasurementSet,
    NetworkSpec,
    RunConfig,
    load_config,
    parse_inp,
    parse_measurements,
    parse_network_json,
)
from .network import (
    Network,
    Node,
    Pipe,
    SensorLayout,
    StructMatrices,
    build_network,
    pipe_distances,
    resistance,
    sensor_layout,
    signed_incidence,
    struct_matrices,
)
from .pipeline import (
    EvaluationReport,
    LocalizationResult,
    estimate_leak_free,
    evaluate,
    lcsm,
    localization_metric,
    localize,
    rmse,
    select_candidates,
)

__version__ = "0.1.0"
