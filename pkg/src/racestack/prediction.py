"""Opponent trajectory prediction.

Two predictors with the same output type: a recursive two-player Stackelberg
scheme where vehicles are solved leader-first and each sees the already-solved
trajectories as obstacles, and a constant-acceleration / constant-heading
kinematic baseline (the shape of prediction an EKF with that motion model
produces).  All opponents are assumed to share the ego's dynamics and payoff.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from racestack.mpcc import MpccConfig, MpccSolver, ObstacleSet, SolverFailure
from racestack.track import Track
from racestack.vehicle import VehicleParams, VehicleState

RANGE_LIMIT = 100.0  # m, prediction range around the ego
_V_CAP_SLACK = 2.0   # m/s headroom over the observed pace in game rollouts


@dataclass(frozen=True)
class OpponentObservation:
    id: int
    x: float
    y: float
    heading: float
    speed: float
    acceleration: float
    timestamp: float


@dataclass
class PredictedTrajectory:
    id: int
    positions: np.ndarray   # (N+1, 2)
    progress: float         # m, predicted terminal theta (wrapped)
    sigma: float            # m, position uncertainty
    source: str = "game"    # "game" or "ekf" (fallback flag)


def filter_in_range(ego: VehicleState, observations, track: Track):
    """Keep observations within RANGE_LIMIT of the ego, leader first.

    Ordering is by track progress relative to the ego (descending), so the
    front-most opponent is solved first by the recursive game.
    """
    ego_theta = track.project(ego.X, ego.Y)
    kept = []
    for obs in observations:
        d = math.hypot(obs.x - ego.X, obs.y - ego.Y)
        if d > RANGE_LIMIT:
            continue
        theta = track.project(obs.x, obs.y)
        kept.append((track.progress_delta(theta, ego_theta), obs))
    kept.sort(key=lambda pair: -pair[0])
    return [obs for _, obs in kept]


def lift_observation(obs: OpponentObservation, track: Track):
    """Minimal dynamic state consistent with a radar-style observation."""
    state = VehicleState(X=obs.x, Y=obs.y, psi=obs.heading,
                         v_x=max(obs.speed, 0.0), v_y=0.0, r=0.0)
    theta = track.project(obs.x, obs.y)
    return state, theta


def predict_ekf_baseline(obs: OpponentObservation, N: int, dt: float,
                         v_max: float | None = None,
                         track: Track | None = None,
                         sigma: float = 1.5) -> PredictedTrajectory:
    """Constant-acceleration, constant-heading rollout of one observation.

    The speed profile speed(t) = speed + a t is clamped to [0, v_max] and the
    displacement integrated exactly, so e.g. speed 20 m/s with a = 2 m/s^2
    travels 21 m in the first second.
    """
    if N < 1 or dt <= 0:
        raise ValueError("predict_ekf_baseline needs N >= 1 and dt > 0")
    v0 = max(float(obs.speed), 0.0)
    a = float(obs.acceleration)
    hi = math.inf if v_max is None else float(v_max)
    v0 = min(v0, hi)

    def disp(t: float) -> float:
        if a == 0.0:
            return v0 * t
        # time until the clamped bound is reached (if ever)
        bound = 0.0 if a < 0.0 else hi
        t_hit = (bound - v0) / a
        if not math.isfinite(t_hit) or t_hit >= t:
            return v0 * t + 0.5 * a * t * t
        t_hit = max(t_hit, 0.0)
        d = v0 * t_hit + 0.5 * a * t_hit * t_hit
        return d + bound * (t - t_hit)

    dx = math.cos(obs.heading)
    dy = math.sin(obs.heading)
    pos = np.empty((N + 1, 2))
    for k in range(N + 1):
        d = disp(k * dt)
        pos[k, 0] = obs.x + dx * d
        pos[k, 1] = obs.y + dy * d
    progress = float("nan")
    if track is not None:
        try:
            progress = track.project(pos[-1, 0], pos[-1, 1])
        except Exception:
            progress = float("nan")
    return PredictedTrajectory(id=obs.id, positions=pos, progress=progress,
                               sigma=sigma, source="ekf")


def game_config(config: MpccConfig) -> MpccConfig:
    """Opponent-game solver tuning: half the ego's SQP iterations, and a
    nearly indifferent contouring weight.  The rollout knows the road, not
    the opponent's lane ambition, so it should hold the observed lateral
    station instead of reeling every prediction toward the ego's reference.
    """
    cfg = config.scaled(q_c_scale=0.1)
    return replace(cfg, max_sqp_iters=max(1, config.max_sqp_iters // 2))


def predict_stackelberg(observations, track: Track, config: MpccConfig,
                        params: VehicleParams, solvers: dict | None = None,
                        warm: dict | None = None):
    """Leader-first recursive game over range-filtered, progress-ordered
    observations.  Each vehicle's MPCC sees the already-predicted trajectories
    as obstacles; the leader sees none.  A failed solve falls back to the
    kinematic baseline and is flagged via source="ekf".
    """
    cfg = game_config(config)
    predictions: list[PredictedTrajectory] = []
    for obs in observations:
        state, theta = lift_observation(obs, track)
        solver = None
        if solvers is not None:
            solver = solvers.get(obs.id)
            if solver is None:
                solver = MpccSolver(track, cfg, params)
                solvers[obs.id] = solver
        else:
            solver = MpccSolver(track, cfg, params)
        obstacles = ObstacleSet.from_trajectories(predictions) if predictions else None
        warm_start = warm.get(obs.id) if warm is not None else None
        # The rollout is a racing policy, but its pace must stay anchored to
        # what was actually measured: an opponent cruising at 25 m/s must not
        # be predicted at full throttle, or a trailing ego will close on a
        # phantom gap. Observed speed plus observed acceleration over the
        # horizon bounds the believable pace.
        horizon = cfg.N * cfg.dt
        v_cap = (obs.speed + max(obs.acceleration, 0.0) * horizon
                 + _V_CAP_SLACK)
        try:
            sol = solver.solve(state, theta, obstacles, warm_start=warm_start,
                               v_cap=v_cap)
            traj = PredictedTrajectory(
                id=obs.id, positions=sol.positions,
                progress=float(sol.thetas[-1].theta), sigma=config.sigma,
                source="game")
            if warm is not None:
                warm[obs.id] = sol
        except SolverFailure:
            traj = predict_ekf_baseline(obs, config.N, config.dt,
                                        v_max=params.v_max, track=track)
            traj.sigma = config.sigma
            if warm is not None:
                warm.pop(obs.id, None)
        predictions.append(traj)
    return predictions
