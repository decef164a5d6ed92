"""racestack: head-to-head autonomous racing control stack and simulator."""

from racestack.vehicle import (
    ControlInput,
    DraftContext,
    IntegrationDivergedError,
    InvalidStateError,
    TireForces,
    VehicleParams,
    VehicleState,
    dynamics,
    effective_drag,
    integrate,
    linearize,
    load_vehicle_params,
    tire_forces,
)
from racestack.track import (
    OffTrackError,
    PathProgress,
    Track,
    TrackError,
    contouring_errors,
    load_track,
)
from racestack.mpcc import (
    MpccConfig,
    MpccSolution,
    MpccSolver,
    ObstacleSet,
    SolverFailure,
    collision_margin,
    solve,
    stage_cost,
)
from racestack.prediction import (
    OpponentObservation,
    PredictedTrajectory,
    filter_in_range,
    predict_ekf_baseline,
    predict_stackelberg,
)
from racestack.strategy import PlannerDecision, RaceMode, StrategyPlanner, select_mode
from racestack.sysid import (
    Configuration,
    Dataset,
    Episode,
    ParamSpace,
    evaluation_loss,
    get_hyperparameter_configuration,
    hyperband,
    hyperband_schedule,
    mutate_then_return_eval_loss,
    select_top_k_configuration,
)
from racestack.simulation import (
    RaceLog,
    Scenario,
    ScenarioError,
    WorldState,
    detect_collision,
    run_scenario,
    sense,
    step_world,
)

__version__ = "0.1.0"
