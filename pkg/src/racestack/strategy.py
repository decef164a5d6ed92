"""Two-mode race strategy: Overtaking vs PositionKeeping.

Each control cycle the planner solves an Overtaking candidate (progress reward
scaled up) and compares its terminal progress against the nearest-ahead
opponent's predicted terminal progress.  If the gap exceeds the threshold the
candidate is committed; otherwise a PositionKeeping solve (contouring weight
scaled up) is returned.  A hysteresis of a few cycles prevents chattering when
the gap rides the threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from racestack.mpcc import MpccConfig, MpccSolution, MpccSolver, ObstacleSet, SolverFailure
from racestack.track import PathProgress, Track
from racestack.vehicle import ControlInput, DraftContext, VehicleParams, VehicleState

OVERTAKING = "Overtaking"
POSITION_KEEPING = "PositionKeeping"

DEFAULT_THRESHOLD = 3.0        # m of predicted terminal-progress gap
DEFAULT_HYSTERESIS = 2         # control cycles before a mode switch commits
DEFAULT_PK_QC_SCALE = 10.0
DEFAULT_OT_GAMMA_SCALE = 5.0


@dataclass(frozen=True)
class RaceMode:
    tag: str
    q_c_scale: float = 1.0
    gamma_scale: float = 1.0


@dataclass
class PlannerDecision:
    mode: str
    solution: MpccSolution
    progress_gap: float     # m; nan when no opponent is ahead
    degraded: bool = False  # one of the two solves failed


def select_mode(progress_gap: float | None, threshold: float = DEFAULT_THRESHOLD) -> str:
    """Stateless mode rule: Overtaking iff no opponent ahead or gap > threshold."""
    if progress_gap is None or (isinstance(progress_gap, float) and math.isnan(progress_gap)):
        return OVERTAKING
    return OVERTAKING if progress_gap > threshold else POSITION_KEEPING


class StrategyPlanner:
    def __init__(self, track: Track, base_config: MpccConfig, params: VehicleParams,
                 threshold: float = DEFAULT_THRESHOLD,
                 hysteresis_cycles: int = DEFAULT_HYSTERESIS,
                 pk_q_c_scale: float = DEFAULT_PK_QC_SCALE,
                 ot_gamma_scale: float = DEFAULT_OT_GAMMA_SCALE):
        self.track = track
        self.threshold = threshold
        self.hysteresis_cycles = hysteresis_cycles
        self.modes = {
            OVERTAKING: RaceMode(OVERTAKING, gamma_scale=ot_gamma_scale),
            POSITION_KEEPING: RaceMode(POSITION_KEEPING, q_c_scale=pk_q_c_scale),
        }
        # Aggression scales the progress reward and the soft-constraint price
        # together: the overtaking mode hunts gaps harder without the raised
        # gamma quietly cheapening keep-out and tube violations.
        self._solvers = {
            OVERTAKING: MpccSolver(track,
                                   base_config.scaled(gamma_scale=ot_gamma_scale,
                                                      slack_scale=ot_gamma_scale),
                                   params),
            POSITION_KEEPING: MpccSolver(track,
                                         base_config.scaled(q_c_scale=pk_q_c_scale),
                                         params),
        }
        self._warm: dict = {OVERTAKING: None, POSITION_KEEPING: None}
        self.current_mode: str | None = None
        self._contrary_count = 0

    def decide(self, progress_gap: float | None) -> str:
        """Apply hysteresis to the stateless rule; returns the committed mode."""
        raw = select_mode(progress_gap, self.threshold)
        if self.current_mode is None:
            self.current_mode = raw
            self._contrary_count = 0
            return raw
        if raw == self.current_mode:
            self._contrary_count = 0
        else:
            self._contrary_count += 1
            if self._contrary_count >= self.hysteresis_cycles:
                self.current_mode = raw
                self._contrary_count = 0
        return self.current_mode

    def _progress_gap(self, theta0: float, candidate: MpccSolution, predictions):
        """Terminal-progress gap to the nearest-ahead opponent, or nan."""
        track = self.track
        nearest = None
        nearest_delta = math.inf
        for pred in predictions:
            try:
                opp_theta = track.project(pred.positions[0, 0], pred.positions[0, 1])
            except Exception:
                continue
            delta = track.progress_delta(opp_theta, track.wrap(theta0))
            if 0.0 < delta < nearest_delta:
                nearest_delta = delta
                nearest = pred
        if nearest is None or not math.isfinite(nearest.progress):
            return float("nan")
        ego_terminal = track.wrap(candidate.terminal_progress)
        return track.progress_delta(ego_terminal, nearest.progress)

    def plan(self, x0: VehicleState, theta0, predictions,
             u_prev: ControlInput | None = None,
             draft: DraftContext | None = None) -> PlannerDecision:
        obstacles = ObstacleSet.from_trajectories(predictions) if predictions else None
        th = theta0.theta if isinstance(theta0, PathProgress) else float(theta0)

        candidate = None
        candidate_err = None
        try:
            candidate = self._solvers[OVERTAKING].solve(
                x0, theta0, obstacles, warm_start=self._warm[OVERTAKING],
                u_prev=u_prev, draft=draft)
            self._warm[OVERTAKING] = candidate
        except SolverFailure as exc:
            candidate_err = exc
            self._warm[OVERTAKING] = None

        gap = self._progress_gap(th, candidate, predictions) if candidate else float("nan")
        mode = self.decide(gap if candidate else 0.0)

        if mode == OVERTAKING and candidate is not None:
            return PlannerDecision(OVERTAKING, candidate, gap, degraded=False)

        try:
            keeping = self._solvers[POSITION_KEEPING].solve(
                x0, theta0, obstacles, warm_start=self._warm[POSITION_KEEPING],
                u_prev=u_prev, draft=draft)
            self._warm[POSITION_KEEPING] = keeping
            return PlannerDecision(POSITION_KEEPING, keeping, gap,
                                   degraded=candidate is None)
        except SolverFailure as exc:
            self._warm[POSITION_KEEPING] = None
            if candidate is not None:
                return PlannerDecision(OVERTAKING, candidate, gap, degraded=True)
            raise SolverFailure(
                f"both mode solves failed: {candidate_err}; {exc}",
                getattr(exc, "solution", None)) from exc
