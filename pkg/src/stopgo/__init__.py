"""Stop-and-go wave simulation and smoothing with a single controlled AV."""

from .controller import (
    AccController,
    Command,
    ControllerError,
    ControllerParams,
    NotEngagedError,
    NotInitializedError,
    PlanProfile,
    SensorReading,
    command_accel,
    safe_accel,
    safe_speed,
    target_speed_local,
    target_speed_planning,
)
from .drivers import (
    CollisionError,
    HumanDriverParams,
    equilibrium_spacing,
    human_accel,
    optimal_velocity,
    string_unstable,
)
from .simulation import (
    CutInEvent,
    LeaderProfile,
    RunResult,
    Scenario,
    SensorSpec,
    SimConfig,
    Trajectory,
    TrajectorySet,
    open_scenario,
    retype_av_as_human,
    ring_scenario,
    run,
)
from .analysis import (
    BoxGrid,
    GridParams,
    VarianceGrid,
    VarianceReport,
    WaveBoundary,
    assign_boxes,
    percent_change,
    pooled_speed_variance,
    variance_grid,
    variance_report,
    wave_boundaries,
)
from .trajio import (
    ConfigError,
    RunConfig,
    TrajectoryFormatError,
    export_time_space_svg,
    parse_run_config,
    parse_trajectory_csv,
    serialize_trajectory_csv,
    variance_grid_csv,
    variance_grid_text,
)

__version__ = "0.1.0"
