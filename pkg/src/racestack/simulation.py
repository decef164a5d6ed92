"""Deterministic multi-vehicle race simulation.

The world loop is single-threaded and authoritative: every control period all
controllers see the same frozen snapshot and commit one input each, then every
vehicle is integrated through the physics substeps with drafting recomputed at
each substep.  All randomness (perception noise only) flows from the scenario's
master seed, so a rerun with the same scenario file is bit-identical.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from racestack.mpcc import MpccConfig, MpccSolver, ObstacleSet, SolverFailure
from racestack.prediction import (OpponentObservation, filter_in_range,
                                  predict_ekf_baseline, predict_stackelberg)
from racestack.strategy import OVERTAKING, StrategyPlanner
from racestack.track import Track, load_track
from racestack.vehicle import (ControlInput, VehicleParams, VehicleState,
                               integrate, load_vehicle_params,
                               nearest_leader_context)

TICK_COLUMNS = ("t", "vehicle", "X", "Y", "psi", "vx", "vy", "r", "theta",
                "mode", "status", "min_dist")
CONTROL_COLUMNS = ("t", "vehicle", "delta", "D")
CONTROLLER_KINDS = ("full-stack", "plain-mpcc", "constant-accel")
OVERTAKE_PERSISTENCE = 1.0      # s the inverted order must hold
PK_OPPONENT_QC_SCALE = 10.0     # plain-mpcc == position-keeping flavour
DEFAULT_DURATION_CAP = 600.0    # when only a lap target is given

_TOP_FIELDS = {"name", "track", "vehicles", "predictor", "planner", "noise",
               "duration", "lap_target", "control_dt", "physics_dt", "seed",
               "mpcc", "planner_options"}
_VEHICLE_FIELDS = {"id", "role", "controller", "start_progress", "start_speed",
                   "lateral_offset", "lane_offset", "params",
                   "params_overrides", "accel"}
_NOISE_FIELDS = {"pos_std", "speed_std"}
_PLANNER_OPT_FIELDS = {"threshold", "hysteresis_cycles", "pk_q_c_scale",
                       "ot_gamma_scale"}


class ScenarioError(ValueError):
    pass


def builtin_data_path(name: str) -> Path:
    """Path of a data file shipped inside the package."""
    p = Path(str(resources.files("racestack").joinpath("data", name)))
    if not p.exists():
        raise ScenarioError(f"no builtin data file named {name!r}")
    return p


def _resolve_path(spec: str, base_dir: Path) -> Path:
    if spec.startswith("builtin:"):
        return builtin_data_path(spec[len("builtin:"):])
    p = Path(spec)
    return p if p.is_absolute() else base_dir / p


@dataclass(frozen=True)
class VehicleSpec:
    id: str
    role: str                  # ego | opponent
    controller: str            # full-stack | plain-mpcc | constant-accel
    start_progress: float
    start_speed: float
    params: VehicleParams
    lateral_offset: float = 0.0   # m, positive = right of centerline
    lane_offset: float = 0.0      # m, plain-mpcc lane reference
    accel: float = 0.0            # constant-accel controller only


@dataclass
class Scenario:
    track: Track
    vehicles: list
    duration: float
    name: str = "scenario"
    predictor: str = "stackelberg"
    planner: bool = True
    pos_std: float = 0.0
    speed_std: float = 0.0
    lap_target: int | None = None
    control_dt: float = 0.05
    physics_dt: float = 0.01
    seed: int = 0
    mpcc: MpccConfig = field(default_factory=MpccConfig)
    planner_options: dict = field(default_factory=dict)
    raw: dict | None = None

    def __post_init__(self):
        if not self.vehicles:
            raise ScenarioError("vehicles: at least one vehicle is required")
        egos = [v for v in self.vehicles if v.role == "ego"]
        if len(egos) != 1:
            raise ScenarioError(f"vehicles: exactly one ego required, "
                                f"found {len(egos)}")
        ids = [v.id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ScenarioError("vehicles: ids must be unique")
        for v in self.vehicles:
            if v.role not in ("ego", "opponent"):
                raise ScenarioError(f"vehicle {v.id!r}: bad role {v.role!r}")
            if v.controller not in CONTROLLER_KINDS:
                raise ScenarioError(f"vehicle {v.id!r}: unknown controller "
                                    f"{v.controller!r}")
            if not (math.isfinite(v.start_progress)
                    and math.isfinite(v.start_speed) and v.start_speed >= 0):
                raise ScenarioError(f"vehicle {v.id!r}: bad start state")
            if v.lane_offset and v.controller != "plain-mpcc":
                raise ScenarioError(
                    f"vehicle {v.id!r}: lane_offset only applies to the "
                    f"plain-mpcc controller")
        starts = [self.track.wrap(v.start_progress) for v in self.vehicles]
        for i in range(len(starts)):
            for j in range(i + 1, len(starts)):
                if abs(self.track.progress_delta(starts[i], starts[j])) < 1e-9:
                    raise ScenarioError(
                        f"start_progress must be distinct: vehicles "
                        f"{ids[i]!r} and {ids[j]!r} coincide")
        if not (self.physics_dt > 0 and self.control_dt > 0):
            raise ScenarioError("control_dt and physics_dt must be positive")
        ratio = self.control_dt / self.physics_dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ScenarioError(
                f"physics_dt ({self.physics_dt}) must divide control_dt "
                f"({self.control_dt})")
        if abs(self.mpcc.dt - self.control_dt) > 1e-12:
            raise ScenarioError(
                f"mpcc.dt ({self.mpcc.dt}) must equal control_dt "
                f"({self.control_dt}) for receding-horizon consistency")
        if not (math.isfinite(self.duration) and self.duration >= 0):
            raise ScenarioError(f"duration must be >= 0, got {self.duration}")
        if self.lap_target is not None and self.lap_target < 1:
            raise ScenarioError(f"lap_target must be >= 1, got {self.lap_target}")
        if self.predictor not in ("stackelberg", "ekf"):
            raise ScenarioError(f"predictor must be stackelberg|ekf, "
                                f"got {self.predictor!r}")
        if self.pos_std < 0 or self.speed_std < 0:
            raise ScenarioError("noise stds must be non-negative")
        unknown = set(self.planner_options) - _PLANNER_OPT_FIELDS
        if unknown:
            raise ScenarioError(f"planner_options: unknown field(s) "
                                f"{', '.join(sorted(unknown))}")

    @property
    def ego_index(self) -> int:
        return next(i for i, v in enumerate(self.vehicles) if v.role == "ego")

    @property
    def substeps(self) -> int:
        return round(self.control_dt / self.physics_dt)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path,
                  seed_override: int | None = None) -> "Scenario":
        if not isinstance(raw, dict):
            raise ScenarioError("scenario must be a JSON object")
        unknown = set(raw) - _TOP_FIELDS
        if unknown:
            raise ScenarioError(f"unknown scenario field(s): "
                                f"{', '.join(sorted(unknown))}")
        for req in ("track", "vehicles"):
            if req not in raw:
                raise ScenarioError(f"scenario is missing required "
                                    f"field {req!r}")
        if "duration" not in raw and "lap_target" not in raw:
            raise ScenarioError("scenario needs 'duration' and/or 'lap_target'")

        track = load_track(_resolve_path(raw["track"], base_dir))
        noise = raw.get("noise", {})
        unknown = set(noise) - _NOISE_FIELDS
        if unknown:
            raise ScenarioError(f"noise: unknown field(s) "
                                f"{', '.join(sorted(unknown))}")
        planner_raw = raw.get("planner", "on")
        if planner_raw not in ("on", "off"):
            raise ScenarioError(f"planner must be 'on' or 'off', "
                                f"got {planner_raw!r}")
        try:
            mpcc = MpccConfig.from_dict(raw.get("mpcc", {}))
        except ValueError as exc:
            raise ScenarioError(f"mpcc: {exc}") from exc

        vehicles = []
        for i, vraw in enumerate(raw["vehicles"]):
            unknown = set(vraw) - _VEHICLE_FIELDS
            if unknown:
                raise ScenarioError(f"vehicles[{i}]: unknown field(s) "
                                    f"{', '.join(sorted(unknown))}")
            missing = {"id", "role", "controller", "start_progress",
                       "start_speed"} - set(vraw)
            if missing:
                raise ScenarioError(f"vehicles[{i}]: missing field(s) "
                                    f"{', '.join(sorted(missing))}")
            pspec = vraw.get("params")
            params = (load_vehicle_params(_resolve_path(pspec, base_dir))
                      if pspec else
                      load_vehicle_params(builtin_data_path("vehicle_params.json")))
            overrides = vraw.get("params_overrides", {})
            if overrides:
                try:
                    params = params.replace(**overrides)
                except (TypeError, ValueError) as exc:
                    raise ScenarioError(
                        f"vehicles[{i}].params_overrides: {exc}") from exc
            vehicles.append(VehicleSpec(
                id=str(vraw["id"]), role=vraw["role"],
                controller=vraw["controller"],
                start_progress=float(vraw["start_progress"]),
                start_speed=float(vraw["start_speed"]),
                params=params,
                lateral_offset=float(vraw.get("lateral_offset", 0.0)),
                lane_offset=float(vraw.get("lane_offset", 0.0)),
                accel=float(vraw.get("accel", 0.0))))

        seed = int(seed_override if seed_override is not None
                   else raw.get("seed", 0))
        duration = float(raw.get("duration", DEFAULT_DURATION_CAP))
        echo = dict(raw)
        echo["seed"] = seed
        return cls(track=track, vehicles=vehicles, duration=duration,
                   name=str(raw.get("name", "scenario")),
                   predictor=raw.get("predictor", "stackelberg"),
                   planner=planner_raw == "on",
                   pos_std=float(noise.get("pos_std", 0.0)),
                   speed_std=float(noise.get("speed_std", 0.0)),
                   lap_target=raw.get("lap_target"),
                   control_dt=float(raw.get("control_dt", 0.05)),
                   physics_dt=float(raw.get("physics_dt", 0.01)),
                   seed=seed, mpcc=mpcc,
                   planner_options=dict(raw.get("planner_options", {})),
                   raw=echo)

    @classmethod
    def from_file(cls, path, seed_override: int | None = None) -> "Scenario":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(raw, path.parent, seed_override)


@dataclass
class WorldState:
    t: float
    tick: int
    states: list
    theta: list            # wrapped progress per vehicle
    unwrapped: list        # cumulative progress since t=0
    lap_count: list
    last_inputs: list
    rng_sense: np.random.Generator
    prev_noisy_speed: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    ego_collided: bool = False
    ego_mode: str = "-"
    ego_status: str = "-"
    pair_offset: dict = field(default_factory=dict)
    order_sign: dict = field(default_factory=dict)
    pending_pass: dict = field(default_factory=dict)
    next_lap_line: list = field(default_factory=list)
    last_lap_time: list = field(default_factory=list)
    active_collisions: set = field(default_factory=set)


def init_world(scenario: Scenario) -> WorldState:
    track = scenario.track
    states, theta = [], []
    for spec in scenario.vehicles:
        th = track.wrap(spec.start_progress)
        x, y, phi, _ = track.ref_pose(th)
        off = spec.lateral_offset
        states.append(VehicleState(
            X=x + off * math.sin(phi), Y=y - off * math.cos(phi), psi=phi,
            v_x=spec.start_speed, v_y=0.0, r=0.0))
        theta.append(th)
    radii = [v.params.footprint_radius for v in scenario.vehicles]
    hit = detect_collision(states, radii)
    if hit is not None:
        i, j = hit
        raise ScenarioError(
            f"vehicles {scenario.vehicles[i].id!r} and "
            f"{scenario.vehicles[j].id!r} overlap at the start")
    n = len(states)
    world = WorldState(
        t=0.0, tick=0, states=states, theta=list(theta),
        unwrapped=list(theta), lap_count=[0] * n,
        last_inputs=[ControlInput(0.0, 0.0)] * n,
        rng_sense=np.random.default_rng((scenario.seed, 1)),
        next_lap_line=[(math.floor(th / track.total_length) + 1)
                       * track.total_length for th in theta],
        last_lap_time=[0.0] * n)
    for i in range(n):
        for j in range(i + 1, n):
            d0 = track.progress_delta(theta[i], theta[j])
            world.pair_offset[(i, j)] = d0 - (world.unwrapped[i]
                                              - world.unwrapped[j])
            world.order_sign[(i, j)] = 1.0 if d0 > 0 else -1.0
    return world


def sense(world: WorldState, scenario: Scenario) -> list:
    """Noisy observations of every non-ego vehicle; updates sensor memory.

    Draw order is fixed (two position axes then speed, vehicles in scenario
    order) so the stream is reproducible; zero stds still consume draws.
    """
    ego = scenario.ego_index
    out = []
    for j, spec in enumerate(scenario.vehicles):
        if j == ego:
            continue
        s = world.states[j]
        nx, ny, ns = world.rng_sense.standard_normal(3)
        speed_true = math.hypot(s.v_x, s.v_y)
        noisy_speed = max(0.0, speed_true + scenario.speed_std * ns)
        prev = world.prev_noisy_speed.get(j)
        accel = 0.0 if prev is None else (noisy_speed - prev) / scenario.control_dt
        world.prev_noisy_speed[j] = noisy_speed
        out.append(OpponentObservation(
            id=spec.id, x=s.X + scenario.pos_std * nx,
            y=s.Y + scenario.pos_std * ny, heading=s.psi,
            speed=noisy_speed, acceleration=accel, timestamp=world.t))
    return out


def _colliding_pairs(states, footprints):
    hits = []
    n = len(states)
    for i in range(n):
        for j in range(i + 1, n):
            d = math.hypot(states[i].X - states[j].X,
                           states[i].Y - states[j].Y)
            if d < footprints[i] + footprints[j]:
                hits.append((i, j))
    return hits


def detect_collision(states, footprints):
    """First pair (by scan order) closer than the sum of footprint radii."""
    hits = _colliding_pairs(states, footprints)
    return hits[0] if hits else None


class ConstantAccelController:
    """Holds a fixed longitudinal acceleration; steers to follow the track."""

    K_LAT = 0.01    # rad per m of centering error
    K_HEAD = 0.5    # rad per rad of heading error

    def __init__(self, scenario: Scenario, idx: int):
        spec = scenario.vehicles[idx]
        self.track = scenario.track
        self.params = spec.params
        self.accel = spec.accel

    def act(self, world, idx, scenario, observations):
        s = world.states[idx]
        p = self.params
        x, y, phi, kappa = self.track.ref_pose(world.theta[idx])
        e_c = math.sin(phi) * (s.X - x) - math.cos(phi) * (s.Y - y)
        head_err = math.remainder(s.psi - phi, 2.0 * math.pi)
        delta = (math.atan(kappa * (p.l_F + p.l_R))
                 + self.K_LAT * e_c - self.K_HEAD * head_err)
        delta = min(max(delta, -0.3), 0.3)
        D = (p.m * self.accel + p.C_r + p.C_d * s.v_x ** 2) / p.C_m
        D = min(max(D, -1.0), 1.0)
        return ControlInput(delta, D), "-", "-"


class PlainMpccController:
    """Obstacle-blind contouring MPC in its position-keeping flavour.

    A nonzero lane_offset swaps the reference for a parallel path that
    distance to the right of the scenario track, so the vehicle holds a lane
    instead of the centerline.  Progress is then tracked on the lane's own
    arc length, which differs from the scenario track's through corners.
    """

    def __init__(self, scenario: Scenario, idx: int):
        spec = scenario.vehicles[idx]
        self.params = spec.params
        self.ref = (scenario.track.offset(spec.lane_offset)
                    if spec.lane_offset else scenario.track)
        self.solver = MpccSolver(
            self.ref,
            scenario.mpcc.scaled(q_c_scale=PK_OPPONENT_QC_SCALE), spec.params)
        self.theta_ref = None
        self.own_progress = bool(spec.lane_offset)
        self.warm = None
        self.u_prev = None

    def act(self, world, idx, scenario, observations):
        s = world.states[idx]
        if self.own_progress:
            guess = self.theta_ref
            theta = self.ref.project(s.X, s.Y, theta_guess=guess)
            self.theta_ref = theta
        else:
            theta = world.theta[idx]
        draft = nearest_leader_context(
            s, [st for k, st in enumerate(world.states) if k != idx],
            self.params)
        try:
            sol = self.solver.solve(s, theta, None,
                                    warm_start=self.warm, u_prev=self.u_prev,
                                    draft=draft)
            self.warm = sol
            u = sol.inputs[0]
            status = sol.status
        except SolverFailure:
            self.warm = None
            u = world.last_inputs[idx]
            status = "failed"
        self.u_prev = u
        return u, "-", status


class FullStackController:
    """Perception filter -> opponent predictor -> (strategy planner | MPCC)."""

    def __init__(self, scenario: Scenario, idx: int):
        spec = scenario.vehicles[idx]
        self.track = scenario.track
        self.config = scenario.mpcc
        self.params = spec.params
        self.predictor = scenario.predictor
        self.planner = (StrategyPlanner(scenario.track, scenario.mpcc,
                                        spec.params, **scenario.planner_options)
                        if scenario.planner else None)
        self.solver = (None if scenario.planner
                       else MpccSolver(scenario.track, scenario.mpcc,
                                       spec.params))
        self.game_solvers: dict = {}
        self.game_warm: dict = {}
        self.warm = None
        self.u_prev = None

    def _predict(self, state, observations):
        in_range = filter_in_range(state, observations, self.track)
        if self.predictor == "stackelberg":
            return predict_stackelberg(in_range, self.track, self.config,
                                       self.params, solvers=self.game_solvers,
                                       warm=self.game_warm)
        return [predict_ekf_baseline(o, self.config.N, self.config.dt,
                                     v_max=self.params.v_max, track=self.track,
                                     sigma=self.config.sigma)
                for o in in_range]

    def act(self, world, idx, scenario, observations):
        s = world.states[idx]
        preds = self._predict(s, observations)
        draft = nearest_leader_context(
            s, [st for k, st in enumerate(world.states) if k != idx],
            self.params)
        if self.planner is not None:
            try:
                dec = self.planner.plan(s, world.theta[idx], preds,
                                        u_prev=self.u_prev, draft=draft)
                u = dec.solution.inputs[0]
                status = dec.solution.status + ("/degraded" if dec.degraded
                                                else "")
                mode = dec.mode
            except SolverFailure:
                u = world.last_inputs[idx]
                mode = self.planner.current_mode or OVERTAKING
                status = "failed"
        else:
            obstacles = ObstacleSet.from_trajectories(preds) if preds else None
            try:
                sol = self.solver.solve(s, world.theta[idx], obstacles,
                                        warm_start=self.warm,
                                        u_prev=self.u_prev, draft=draft)
                self.warm = sol
                u = sol.inputs[0]
                mode, status = "mpcc", sol.status
            except SolverFailure:
                self.warm = None
                u = world.last_inputs[idx]
                mode, status = "mpcc", "failed"
        self.u_prev = u
        return u, mode, status


def build_controllers(scenario: Scenario) -> list:
    table = {"full-stack": FullStackController,
             "plain-mpcc": PlainMpccController,
             "constant-accel": ConstantAccelController}
    return [table[v.controller](scenario, i)
            for i, v in enumerate(scenario.vehicles)]


def _order_metric(world, i, j):
    return (world.unwrapped[i] - world.unwrapped[j]
            + world.pair_offset[(i, j)])


def _update_overtakes(world: WorldState, scenario: Scenario):
    n = len(scenario.vehicles)
    for i in range(n):
        for j in range(i + 1, n):
            pair = (i, j)
            sign = 1.0 if _order_metric(world, i, j) > 0 else -1.0
            if sign == world.order_sign[pair]:
                world.pending_pass.pop(pair, None)
                continue
            started = world.pending_pass.get(pair)
            if started is None:
                world.pending_pass[pair] = world.t
            elif world.t - started >= OVERTAKE_PERSISTENCE - 1e-9:
                ahead, behind = (i, j) if sign > 0 else (j, i)
                world.events.append({
                    "type": "overtake", "t": world.t, "t_start": started,
                    "overtaker": scenario.vehicles[ahead].id,
                    "overtaken": scenario.vehicles[behind].id})
                world.order_sign[pair] = sign
                world.pending_pass.pop(pair, None)


def _advance_progress(world: WorldState, scenario: Scenario, idx: int,
                      t_prev: float, t_now: float):
    track = scenario.track
    s = world.states[idx]
    new_theta = track.project(s.X, s.Y, theta_guess=world.theta[idx])
    d = track.progress_delta(new_theta, world.theta[idx])
    old_u = world.unwrapped[idx]
    world.unwrapped[idx] = old_u + d
    world.theta[idx] = new_theta
    while world.unwrapped[idx] >= world.next_lap_line[idx]:
        frac = ((world.next_lap_line[idx] - old_u)
                / max(world.unwrapped[idx] - old_u, 1e-12))
        t_cross = t_prev + frac * (t_now - t_prev)
        world.lap_count[idx] += 1
        world.events.append({
            "type": "lap", "t": t_cross,
            "vehicle": scenario.vehicles[idx].id,
            "lap": world.lap_count[idx],
            "lap_time": t_cross - world.last_lap_time[idx],
            "partial": world.lap_count[idx] == 1
                       and abs(track.wrap(scenario.vehicles[idx].start_progress)) > 1e-9})
        world.last_lap_time[idx] = t_cross
        world.next_lap_line[idx] += track.total_length


def step_world(world: WorldState, scenario: Scenario, controllers) -> WorldState:
    """Advance one control period (or less, if the ego collides mid-period)."""
    ego = scenario.ego_index
    needs_sense = any(v.controller == "full-stack" for v in scenario.vehicles)
    observations = sense(world, scenario) if needs_sense else []

    inputs = []
    for idx, ctl in enumerate(controllers):
        u, mode, status = ctl.act(world, idx, scenario, observations)
        if status == "failed":
            world.events.append({"type": "controller_failure", "t": world.t,
                                 "vehicle": scenario.vehicles[idx].id})
        if idx == ego:
            world.ego_mode, world.ego_status = mode, status
        inputs.append(u)
    world.last_inputs = inputs

    radii = [v.params.footprint_radius for v in scenario.vehicles]
    t_tick = world.t
    n = len(scenario.vehicles)
    for k in range(scenario.substeps):
        t_prev = t_tick + k * scenario.physics_dt
        t_now = t_tick + (k + 1) * scenario.physics_dt
        new_states = []
        for i in range(n):
            draft = nearest_leader_context(
                world.states[i],
                [st for m, st in enumerate(world.states) if m != i],
                scenario.vehicles[i].params)
            new_states.append(integrate(world.states[i], inputs[i],
                                        scenario.vehicles[i].params,
                                        draft, scenario.physics_dt))
        world.states = new_states
        for i in range(n):
            _advance_progress(world, scenario, i, t_prev, t_now)

        hits = _colliding_pairs(world.states, radii)
        for (i, j) in hits:
            pair = (i, j)
            if pair in world.active_collisions:
                continue
            world.active_collisions.add(pair)
            world.events.append({
                "type": "collision", "t": t_now,
                "vehicles": [scenario.vehicles[i].id,
                             scenario.vehicles[j].id],
                "ego_involved": ego in pair})
            if ego in pair:
                world.ego_collided = True
                world.ego_status = "DNF"
                world.t = t_now
                return world
        still = set(hits)
        world.active_collisions &= still

    world.tick += 1
    world.t = world.tick * scenario.control_dt
    _update_overtakes(world, scenario)
    return world


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RaceLog:
    meta: dict
    ticks: list = field(default_factory=list)
    controls: list = field(default_factory=list)
    events: list = field(default_factory=list)
    result: dict = field(default_factory=dict)

    def record_tick(self, world: WorldState, scenario: Scenario):
        n = len(scenario.vehicles)
        ego = scenario.ego_index
        for i, spec in enumerate(scenario.vehicles):
            s = world.states[i]
            dists = [math.hypot(s.X - o.X, s.Y - o.Y)
                     for j, o in enumerate(world.states) if j != i]
            self.ticks.append((
                world.t, spec.id, s.X, s.Y, s.psi, s.v_x, s.v_y, s.r,
                world.theta[i],
                world.ego_mode if i == ego else "-",
                world.ego_status if i == ego else "-",
                min(dists) if dists else math.inf))

    def record_controls(self, t: float, world: WorldState, scenario: Scenario):
        for i, spec in enumerate(scenario.vehicles):
            u = world.last_inputs[i]
            self.controls.append((t, spec.id, u.delta, u.D))

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"ticks": out / "ticks.csv", "controls": out / "controls.csv",
                 "events": out / "events.json"}
        with open(paths["ticks"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TICK_COLUMNS)
            for row in self.ticks:
                w.writerow([_fmt(v) for v in row])
        with open(paths["controls"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CONTROL_COLUMNS)
            for row in self.controls:
                w.writerow([_fmt(v) for v in row])
        with open(paths["events"], "w") as fh:
            json.dump({"meta": self.meta, "events": self.events,
                       "result": self.result}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return paths


def run_scenario(scenario: Scenario) -> RaceLog:
    world = init_world(scenario)
    controllers = build_controllers(scenario)
    ego = scenario.ego_index
    ego_id = scenario.vehicles[ego].id
    log = RaceLog(meta={
        "name": scenario.name, "seed": scenario.seed,
        "predictor": scenario.predictor,
        "planner": "on" if scenario.planner else "off",
        "control_dt": scenario.control_dt, "physics_dt": scenario.physics_dt,
        "mpcc": scenario.mpcc.to_dict(),
        "scenario": scenario.raw if scenario.raw is not None else None})
    log.record_tick(world, scenario)

    n_ticks = int(math.floor(scenario.duration / scenario.control_dt + 1e-9))
    for _ in range(n_ticks):
        t_before = world.t
        step_world(world, scenario, controllers)
        log.record_controls(t_before, world, scenario)
        log.record_tick(world, scenario)
        if world.ego_collided:
            break
        if (scenario.lap_target is not None
                and world.lap_count[ego] >= scenario.lap_target):
            break

    log.events = world.events
    collision = next((e for e in world.events
                      if e["type"] == "collision" and e["ego_involved"]), None)
    ego_laps = [e for e in world.events
                if e["type"] == "lap" and e["vehicle"] == ego_id]
    log.result = {
        "ego": ego_id,
        "dnf": world.ego_collided,
        "finish_time": world.t,
        "collision_time": collision["t"] if collision else None,
        "ego_lap_times": [e["lap_time"] for e in ego_laps],
        "ego_overtakes": sum(1 for e in world.events
                             if e["type"] == "overtake"
                             and e["overtaker"] == ego_id),
        "laps_completed": {spec.id: world.lap_count[i]
                           for i, spec in enumerate(scenario.vehicles)},
    }
    return log
