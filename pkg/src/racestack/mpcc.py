"""Model predictive contouring control over a closed track.

The solver runs an SQP loop: linearize the vehicle dynamics along the current
iterate (finite differences on the RK4 step), quadratize the contouring cost,
linearize the track-tube and collision constraints, and solve the condensed
convex QP over the stacked inputs [delta, D, v_theta] per stage.  Track and
collision constraints are softened with separate slack penalties
slack_weight * (s + s^2); input box and rate bounds are hard.  A line search
on the true nonlinear merit damps each update, so the returned iterate never
has a worse merit than the warm start.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from racestack import qp
from racestack.track import PathProgress, Track
from racestack.vehicle import (
    ControlInput,
    DraftContext,
    InvalidStateError,
    VehicleParams,
    VehicleState,
    V_EPS,
    _rk4,
    draft_drag,
    linearize_batch,
)

CONVERGED = "Converged"
MAX_ITERS = "MaxIters"
SLACK_ACTIVE = "SlackActive"

SLACK_ACTIVE_TOL = 1e-3   # m of constraint violation before status flips
_ADMM_MAX_ITER = 300
_ADMM_TOL = 1e-6
_V_THETA_REG = 1e-4       # tiny smoothing on v_theta rate, numerics only
_LATERAL_BIAS = 0.5       # blend factor steering follow-mode separating planes
_A_LAT_MARGIN = 0.9       # usable fraction of peak tire grip for the speed cap
_CAP_DS = 2.0             # m, sampling step of the braking-aware speed cap
_ALPHA_MARGIN = 0.5       # usable fraction of peak front slip in the steer cap
_R_HEADROOM = 1.1         # transient allowance over the steady-state yaw bound
_R_ROW_SCALE = 10.0       # rad/s -> meter-equivalent units in the QP rows


class SolverFailure(RuntimeError):
    """QP-level numerical failure; carries the last valid iterate if any."""

    def __init__(self, message: str, solution: "MpccSolution | None" = None):
        super().__init__(message)
        self.solution = solution


def _default_p_schedule(n_stages: int) -> tuple:
    return tuple(np.linspace(3.0, 1.0, n_stages))


@dataclass(frozen=True)
class MpccConfig:
    N: int = 20
    dt: float = 0.05
    q_c: float = 2.0                  # 1/m^2, contouring weight
    q_l: float = 10.0                 # 1/m^2, lag weight
    gamma: float = 1.0                # s/m, progress reward on v_theta
    R_u: tuple = (5.0, 0.5)           # diag quadratic input cost (delta, D)
    R_du: tuple = (100.0, 5.0)        # diag input-rate cost
    u_min: tuple = (-0.3, -1.0)
    u_max: tuple = (0.3, 1.0)
    du_min: tuple = (-0.03, -0.25)    # per-step rate bounds
    du_max: tuple = (0.03, 0.25)
    sigma: float = 1.5                # m, opponent position uncertainty
    p_schedule: tuple = ()            # N+1 multipliers, non-increasing
    slack_weight: float = 1000.0      # per metre of constraint violation
    max_sqp_iters: int = 10
    convergence_tol: float = 5e-3     # scaled iterate-change threshold

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("MpccConfig.N must be >= 1")
        if not self.dt > 0:
            raise ValueError("MpccConfig.dt must be > 0")
        for name in ("q_c", "q_l", "slack_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"MpccConfig.{name} must be >= 0")
        if self.max_sqp_iters < 1:
            raise ValueError("MpccConfig.max_sqp_iters must be >= 1")
        if not self.convergence_tol > 0:
            raise ValueError("MpccConfig.convergence_tol must be > 0")
        if self.sigma <= 0:
            raise ValueError("MpccConfig.sigma must be > 0")
        for name in ("R_u", "R_du", "u_min", "u_max", "du_min", "du_max"):
            if len(getattr(self, name)) != 2:
                raise ValueError(f"MpccConfig.{name} must have 2 entries")
        if any(r < 0 for r in self.R_u) or any(r < 0 for r in self.R_du):
            raise ValueError("MpccConfig.R_u/R_du must be nonnegative")
        for j in range(2):
            if not self.u_min[j] < self.u_max[j]:
                raise ValueError("MpccConfig.u_min must be < u_max elementwise")
            if not (self.du_min[j] < 0 < self.du_max[j]):
                raise ValueError("MpccConfig rate bounds must straddle zero")
        if not self.p_schedule:
            object.__setattr__(self, "p_schedule", _default_p_schedule(self.N + 1))
        if len(self.p_schedule) != self.N + 1:
            raise ValueError(f"p_schedule needs N+1 = {self.N + 1} entries")
        sched = np.asarray(self.p_schedule)
        if (np.diff(sched) > 1e-12).any():
            raise ValueError("p_schedule must be non-increasing")
        if (sched <= 0).any():
            raise ValueError("p_schedule entries must be > 0")

    def scaled(self, q_c_scale: float = 1.0, gamma_scale: float = 1.0,
               slack_scale: float = 1.0) -> "MpccConfig":
        return replace(self, q_c=self.q_c * q_c_scale,
                       gamma=self.gamma * gamma_scale,
                       slack_weight=self.slack_weight * slack_scale)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "MpccConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ValueError(f"unknown MpccConfig field(s): {', '.join(unknown)}")
        kw = {}
        for k, v in raw.items():
            kw[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)


@dataclass
class MpccSolution:
    states: list            # N+1 VehicleState
    inputs: list            # N ControlInput
    thetas: list            # N+1 PathProgress
    v_thetas: list          # N floats
    cost: float             # true nonlinear objective of the returned iterate
    terminal_progress: float  # m, unwrapped progress at stage N
    status: str
    max_slack: float
    max_track_slack: float
    max_collision_slack: float
    iterations: int
    positions: np.ndarray = field(repr=False, default=None)  # (N+1, 2)
    _W: np.ndarray = field(repr=False, default=None)


class ObstacleSet:
    """Predicted opponent trajectories as (M, K, 2) positions plus sigmas."""

    def __init__(self, positions, sigmas, ids=None):
        self.positions = np.asarray(positions, dtype=float)
        if self.positions.ndim != 3 or self.positions.shape[2] != 2:
            raise ValueError("ObstacleSet positions must be (M, K, 2)")
        self.sigmas = np.asarray(sigmas, dtype=float)
        if self.sigmas.shape != (self.positions.shape[0],):
            raise ValueError("ObstacleSet needs one sigma per trajectory")
        if (self.sigmas <= 0).any():
            raise ValueError("ObstacleSet sigmas must be > 0")
        self.ids = list(ids) if ids is not None else list(range(len(self.sigmas)))

    def __len__(self):
        return self.positions.shape[0]

    @classmethod
    def from_trajectories(cls, trajectories) -> "ObstacleSet":
        trajectories = list(trajectories)
        if not trajectories:
            return cls(np.zeros((0, 1, 2)), np.zeros(0))
        k = max(t.positions.shape[0] for t in trajectories)
        pos = np.stack([
            np.vstack([t.positions,
                       np.repeat(t.positions[-1:], k - t.positions.shape[0], axis=0)])
            for t in trajectories])
        return cls(pos, [t.sigma for t in trajectories],
                   ids=[t.id for t in trajectories])


def stage_cost(e_c: float, e_l: float, v_theta: float, u: ControlInput,
               du: ControlInput, config: MpccConfig) -> float:
    """One stage of the contouring objective (progress reward is negative)."""
    return (config.q_c * e_c ** 2 + config.q_l * e_l ** 2
            - config.gamma * v_theta
            + config.R_u[0] * u.delta ** 2 + config.R_u[1] * u.D ** 2
            + config.R_du[0] * du.delta ** 2 + config.R_du[1] * du.D ** 2)


def collision_margin(distance: float, stage: int, config: MpccConfig) -> float:
    """Signed clearance beyond the stage's inflated keep-out radius."""
    if not 0 <= stage <= config.N:
        raise IndexError(f"stage {stage} outside 0..{config.N}")
    return distance - config.p_schedule[stage] * config.sigma


class MpccSolver:
    """Holds per-instance workspaces and warm-start state; single-threaded."""

    def __init__(self, track: Track, config: MpccConfig, params: VehicleParams):
        self.track = track
        self.config = config
        self.params = params
        N = config.N
        nw = 3 * N
        self._nw = nw
        self._idx_u = np.array([(3 * k, 3 * k + 1) for k in range(N)])
        self._idx_vt = np.arange(2, nw, 3)
        self._scale = np.tile([max(abs(config.u_min[0]), abs(config.u_max[0])),
                               1.0, params.v_max], N)
        # Path-speed limits the horizon cannot discover on its own: peak
        # cornering speed from the tires and a guaranteed braking rate from
        # the drivetrain (drag assists on top, so this is conservative).
        self._a_lat_max = _A_LAT_MARGIN * (params.D_F + params.D_R) / params.m
        self._a_brake = max((params.C_m * max(0.0, -config.u_min[1])
                             + params.C_r) / params.m, 1.0)
        # Steering past peak front slip only sheds grip, so the QP box for
        # delta shrinks with speed: grip-limited curvature plus a slip margin.
        alpha_peak = math.tan(math.pi / (2.0 * abs(params.C_F))) / abs(params.B_F)
        self._alpha_allow = _ALPHA_MARGIN * alpha_peak
        self._build_constant_blocks()
        self._admm_state = None  # (y, lam) from the previous QP, reused if shapes match

    # ----- curvature speed cap ----------------------------------------------
    def _set_speed_cap(self, th0: float, v_cap: float | None = None):
        """Braking-aware upper bound on v_theta ahead of th0.

        A 1 s horizon at top speed sees barely past its own braking distance,
        so corner entries would stay invisible until too late.  The cap is the
        curvature speed limit sqrt(a_lat/|kappa|) backward-propagated at the
        braking rate, sampled out to horizon reach plus braking distance.
        v_cap additionally clips the whole profile for this solve.
        """
        cfg = self.config
        v_max = self.params.v_max
        if v_cap is not None:
            v_max = max(V_EPS, min(v_max, float(v_cap)))
        reach = (cfg.N * cfg.dt * v_max + v_max ** 2 / (2.0 * self._a_brake)
                 + 2.0 * _CAP_DS)
        reach = min(reach, self.track.total_length)
        n = max(2, int(math.ceil(reach / _CAP_DS)) + 1)
        grid_th = th0 + _CAP_DS * np.arange(n)
        _, _, _, kappa = self.track.ref_pose_batch(grid_th)
        cap = np.minimum(v_max, np.sqrt(self._a_lat_max
                                        / np.maximum(np.abs(kappa), 1e-12)))
        for i in range(n - 2, -1, -1):
            cap[i] = min(cap[i], math.sqrt(cap[i + 1] ** 2
                                           + 2.0 * self._a_brake * _CAP_DS))
        self._cap_grid = cap
        self._cap_th0 = th0

    def _cap_at(self, thetas) -> np.ndarray:
        """Cap values at unwrapped progress samples >= the solve's th0."""
        x = (np.asarray(thetas) - self._cap_th0) / _CAP_DS
        return np.interp(x, np.arange(len(self._cap_grid)), self._cap_grid)

    # ----- constant pieces -------------------------------------------------
    def _build_constant_blocks(self):
        cfg = self.config
        N = cfg.N
        nw = self._nw
        P = np.zeros((nw, nw))
        q = np.zeros(nw)
        for k in range(N):
            i_d, i_D = self._idx_u[k]
            P[i_d, i_d] += 2.0 * cfg.R_u[0]
            P[i_D, i_D] += 2.0 * cfg.R_u[1]
        for k in range(1, N):  # rate cost between consecutive stages
            for j, w in enumerate(cfg.R_du):
                a = self._idx_u[k][j]
                b = self._idx_u[k - 1][j]
                P[a, a] += 2.0 * w
                P[b, b] += 2.0 * w
                P[a, b] -= 2.0 * w
                P[b, a] -= 2.0 * w
        for k in range(1, N):  # numerical smoothing on v_theta rate
            a, b = self._idx_vt[k], self._idx_vt[k - 1]
            P[a, a] += 2.0 * _V_THETA_REG
            P[b, b] += 2.0 * _V_THETA_REG
            P[a, b] -= 2.0 * _V_THETA_REG
            P[b, a] -= 2.0 * _V_THETA_REG
        q[self._idx_vt] -= cfg.gamma
        self._P_const = P
        self._q_const = q

        # hard rows: element box (identity) + rate rows for k >= 1
        rate_rows = []
        for k in range(1, N):
            for j in range(2):
                row = np.zeros(nw)
                row[self._idx_u[k][j]] = 1.0
                row[self._idx_u[k - 1][j]] = -1.0
                rate_rows.append(row)
        self._C_hard = np.vstack([np.eye(nw)] + ([np.vstack(rate_rows)] if rate_rows else []))
        lo_box = np.tile([cfg.u_min[0], cfg.u_min[1], 0.0], N)
        hi_box = np.tile([cfg.u_max[0], cfg.u_max[1], self.params.v_max], N)
        lo_rate = np.tile(cfg.du_min, N - 1)
        hi_rate = np.tile(cfg.du_max, N - 1)
        self._lo_hard = np.concatenate([lo_box, lo_rate])
        self._hi_hard = np.concatenate([hi_box, hi_rate])

    # ----- rollout & merit --------------------------------------------------
    def _rollout(self, x0: tuple, theta0: float, W: np.ndarray):
        """Nonlinear rollout; returns (S (N+1,6), thetas (N+1,), ok flag)."""
        cfg = self.config
        p = self.params
        N = cfg.N
        S = np.empty((N + 1, 6))
        thetas = np.empty(N + 1)
        S[0] = x0
        thetas[0] = theta0
        x = tuple(x0)
        for k in range(N):
            u = (W[3 * k], W[3 * k + 1])
            x = _rk4(x, u, p, self._cd, cfg.dt)
            if not all(math.isfinite(v) for v in x):
                return S, thetas, False
            vx = min(max(x[3], V_EPS), p.v_max)
            x = (x[0], x[1], x[2], vx, x[4], x[5])
            S[k + 1] = x
            thetas[k + 1] = thetas[k] + cfg.dt * W[3 * k + 2]
        return S, thetas, True

    def _errors(self, S, thetas):
        """Contouring/lag errors and ref geometry for every stage."""
        xr, yr, phi, kappa = self.track.ref_pose_batch(thetas)
        dx = S[:, 0] - xr
        dy = S[:, 1] - yr
        sp = np.sin(phi)
        cp = np.cos(phi)
        e_c = sp * dx - cp * dy
        e_l = -cp * dx - sp * dy
        return e_c, e_l, sp, cp, kappa

    def _true_cost(self, S, thetas, W, u_prev):
        cfg = self.config
        e_c, e_l, _, _, _ = self._errors(S, thetas)
        J = float(cfg.q_c * (e_c ** 2).sum() + cfg.q_l * (e_l ** 2).sum())
        J -= cfg.gamma * float(W[self._idx_vt].sum())
        U = W.reshape(-1, 3)[:, :2]
        J += float((U ** 2 @ np.asarray(cfg.R_u)).sum())
        dU = np.diff(U, axis=0)
        J += float((dU ** 2 @ np.asarray(cfg.R_du)).sum())
        if u_prev is not None:
            d0 = U[0] - u_prev
            J += float(cfg.R_du[0] * d0[0] ** 2 + cfg.R_du[1] * d0[1] ** 2)
        return J

    def _violations(self, S, thetas, obs_pos, obs_sig):
        """True geometric violations (m): per-stage track and collision."""
        cfg = self.config
        xr, yr, _, _ = self.track.ref_pose_batch(thetas)
        dist_ref = np.hypot(S[:, 0] - xr, S[:, 1] - yr)
        hw = self.track.half_width[self.track._segment_of(thetas)[1]]
        v_track = np.maximum(0.0, dist_ref - hw)[1:]  # stages the solver controls
        if len(obs_sig):
            d = np.hypot(S[None, :, 0] - obs_pos[:, :S.shape[0], 0],
                         S[None, :, 1] - obs_pos[:, :S.shape[0], 1])
            keep_out = np.asarray(cfg.p_schedule)[None, :] * obs_sig[:, None]
            v_coll = np.maximum(0.0, keep_out - d)[:, 1:]
        else:
            v_coll = np.zeros((0, cfg.N))
        return v_track, v_coll

    def _merit(self, S, thetas, W, u_prev, obs_pos, obs_sig):
        J = self._true_cost(S, thetas, W, u_prev)
        v_track, v_coll = self._violations(S, thetas, obs_pos, obs_sig)
        pen = float((v_track + v_track ** 2).sum() + (v_coll + v_coll ** 2).sum())
        return J + self.config.slack_weight * pen

    # ----- feasibility projection -------------------------------------------
    def _project_hard(self, W, u_prev, th0: float):
        cfg = self.config
        N = cfg.N
        W = W.copy()
        u_lo = np.asarray(cfg.u_min)
        u_hi = np.asarray(cfg.u_max)
        prev = None if u_prev is None else np.asarray(u_prev)
        grid = self._cap_grid
        th = th0
        for k in range(N):
            lo = u_lo.copy()
            hi = u_hi.copy()
            if prev is not None:
                lo = np.maximum(lo, prev + cfg.du_min)
                hi = np.minimum(hi, prev + cfg.du_max)
            u = np.clip(W[3 * k:3 * k + 2], lo, hi)
            W[3 * k:3 * k + 2] = u
            prev = u
            x = (th - self._cap_th0) / _CAP_DS
            i = min(max(int(x), 0), len(grid) - 2)
            cap = grid[i] + (grid[i + 1] - grid[i]) * min(max(x - i, 0.0), 1.0)
            W[3 * k + 2] = min(max(W[3 * k + 2], 0.0), cap)
            th += cfg.dt * W[3 * k + 2]
        return W

    # ----- starts -----------------------------------------------------------
    def _cold_start(self, x0, theta0):
        cfg = self.config
        p = self.params
        N = cfg.N
        v0 = min(max(x0[3], V_EPS), p.v_max)
        thetas = theta0 + cfg.dt * v0 * np.arange(N)
        _, _, _, kappa = self.track.ref_pose_batch(thetas)
        delta_ff = np.arctan(kappa * (p.l_F + p.l_R))
        D_ff = (p.C_r + p.C_d * v0 ** 2) / p.C_m
        W = np.empty(3 * N)
        W[0::3] = np.clip(delta_ff, cfg.u_min[0], cfg.u_max[0])
        W[1::3] = np.clip(D_ff, cfg.u_min[1], cfg.u_max[1])
        W[2::3] = v0
        return W

    @staticmethod
    def _shift_warm(warm: MpccSolution) -> np.ndarray:
        W = warm._W
        return np.concatenate([W[3:], W[-3:]])

    # ----- main solve -------------------------------------------------------
    def solve(self, x0: VehicleState, theta0, obstacles: ObstacleSet | None = None,
              warm_start: MpccSolution | None = None,
              u_prev: ControlInput | None = None,
              draft: DraftContext | None = None,
              v_cap: float | None = None) -> MpccSolution:
        cfg = self.config
        p = self.params
        N = cfg.N
        x0_t = (x0.X, x0.Y, x0.psi, x0.v_x, x0.v_y, x0.r)
        if not all(math.isfinite(v) for v in x0_t):
            raise InvalidStateError("x0 has non-finite entries")
        if isinstance(theta0, PathProgress):
            th0 = self.track.wrap(theta0.theta)
            lap0 = theta0.lap_count
        else:
            th0 = self.track.wrap(float(theta0))
            lap0 = 0
        self._cd = draft_drag(draft, p)
        u_prev_arr = None if u_prev is None else np.array([u_prev.delta, u_prev.D])

        obs_pos, obs_sig = self._prune_obstacles(obstacles, x0_t)
        self._set_speed_cap(th0, v_cap)

        if warm_start is not None and warm_start._W is not None \
                and warm_start._W.shape[0] == 3 * N:
            W = self._shift_warm(warm_start)
        else:
            W = self._cold_start(x0_t, th0)
        W = self._project_hard(W, u_prev_arr, th0)

        S, thetas, ok = self._rollout(x0_t, th0, W)
        if not ok:
            W = self._cold_start(x0_t, th0)
            W = self._project_hard(W, u_prev_arr, th0)
            S, thetas, ok = self._rollout(x0_t, th0, W)
            if not ok:
                raise SolverFailure("initial rollout diverged", None)
        merit = self._merit(S, thetas, W, u_prev_arr, obs_pos, obs_sig)

        best = (W, S, thetas, merit)
        converged = False
        it = 0
        for it in range(1, cfg.max_sqp_iters + 1):
            try:
                W_qp = self._solve_qp(S, thetas, W, u_prev_arr, obs_pos, obs_sig)
            except qp.QpError as exc:
                raise SolverFailure(str(exc), self._pack(best, lap0, it, obs_pos,
                                                         obs_sig, u_prev_arr,
                                                         MAX_ITERS)) from exc
            W_qp = self._project_hard(W_qp, u_prev_arr, th0)
            accepted = None
            for alpha in (1.0, 0.5, 0.25, 0.125, 0.0625):
                W_try = W + alpha * (W_qp - W)
                S_t, th_t, ok = self._rollout(x0_t, th0, W_try)
                if not ok:
                    continue
                m_t = self._merit(S_t, th_t, W_try, u_prev_arr, obs_pos, obs_sig)
                if m_t < merit:
                    accepted = (W_try, S_t, th_t, m_t)
                    break
            if accepted is None:
                converged = True  # no descent direction left at this tolerance
                break
            step = float(np.abs((accepted[0] - W) / self._scale).max())
            W, S, thetas, merit = accepted
            if merit < best[3]:
                best = (W, S, thetas, merit)
            if step < cfg.convergence_tol:
                converged = True
                break

        status = CONVERGED if converged else MAX_ITERS
        return self._pack(best, lap0, it, obs_pos, obs_sig, u_prev_arr, status)

    # ----- helpers ----------------------------------------------------------
    def _prune_obstacles(self, obstacles, x0_t):
        cfg = self.config
        if obstacles is None or len(obstacles) == 0:
            return np.zeros((0, cfg.N + 1, 2)), np.zeros(0)
        pos = obstacles.positions
        if pos.shape[1] < cfg.N + 1:  # pad short trajectories by holding the end
            pad = np.repeat(pos[:, -1:, :], cfg.N + 1 - pos.shape[1], axis=1)
            pos = np.concatenate([pos, pad], axis=1)
        sig = obstacles.sigmas
        reach = cfg.N * cfg.dt * self.params.v_max
        p0 = np.array(x0_t[:2])
        keep = []
        for j in range(pos.shape[0]):
            d_min = float(np.hypot(*(pos[j] - p0).T).min())
            if d_min <= reach + float(max(cfg.p_schedule)) * sig[j] + 1.0:
                keep.append(j)
        return pos[keep], sig[keep]

    def _condense(self, S, thetas, W):
        """Per-stage linear maps of X, Y, theta w.r.t. the stacked inputs."""
        cfg = self.config
        N = cfg.N
        nw = self._nw
        U = W.reshape(-1, 3)[:, :2]
        A, B, _ = linearize_batch(S[:-1], U, self.params, self._cd, cfg.dt)
        G = np.zeros((6, nw))
        Mx = np.zeros((N + 1, nw))
        My = np.zeros((N + 1, nw))
        Mr = np.zeros((N + 1, nw))
        Mt = np.zeros((N + 1, nw))  # theta_k depends on v_theta_j for j < k
        for k in range(N):
            G = A[k] @ G
            G[:, 3 * k:3 * k + 2] += B[k]
            Mx[k + 1] = G[0]
            My[k + 1] = G[1]
            Mr[k + 1] = G[5]
            Mt[k + 1] = Mt[k]
            Mt[k + 1, 3 * k + 2] += cfg.dt
        return Mx, My, Mr, Mt

    def _solve_qp(self, S, thetas, W, u_prev_arr, obs_pos, obs_sig):
        cfg = self.config
        N = cfg.N
        nw = self._nw
        Mx, My, Mr, Mt = self._condense(S, thetas, W)
        e_c, e_l, sp, cp, kappa = self._errors(S, thetas)

        # gradient rows of e_c, e_l w.r.t. (X, Y, theta), stages 1..N
        rows_c = (sp[:, None] * Mx - cp[:, None] * My
                  + (-kappa * e_l)[:, None] * Mt)[1:]
        rows_l = (-cp[:, None] * Mx - sp[:, None] * My
                  + (kappa * e_c + 1.0)[:, None] * Mt)[1:]
        b_c = e_c[1:] - rows_c @ W
        b_l = e_l[1:] - rows_l @ W

        E = np.vstack([rows_c, rows_l])
        wts = np.concatenate([np.full(N, cfg.q_c), np.full(N, cfg.q_l)])
        b = np.concatenate([b_c, b_l])
        P = self._P_const + 2.0 * (E * wts[:, None]).T @ E
        q = self._q_const + 2.0 * E.T @ (wts * b)
        if u_prev_arr is not None:
            for j, w in enumerate(cfg.R_du):
                i = self._idx_u[0][j]
                P[i, i] += 2.0 * w
                q[i] -= 2.0 * w * u_prev_arr[j]
        P[np.diag_indices_from(P)] += 1e-9 * max(1.0, float(np.abs(P).max()))

        lo = self._lo_hard.copy()
        hi = self._hi_hard.copy()
        if u_prev_arr is not None:
            lo[0:2] = np.maximum(lo[0:2], u_prev_arr + cfg.du_min)
            hi[0:2] = np.minimum(hi[0:2], u_prev_arr + cfg.du_max)
        hi[self._idx_vt] = np.minimum(hi[self._idx_vt],
                                      self._cap_at(thetas[:N]))
        wb = self.params.l_F + self.params.l_R
        v_stage = np.maximum(S[:N, 3], V_EPS)
        steer_cap = (np.arctan(wb * self._a_lat_max / v_stage ** 2)
                     + self._alpha_allow)
        i_d = self._idx_u[:, 0]
        hi[i_d] = np.maximum(lo[i_d], np.minimum(hi[i_d], steer_cap))
        lo[i_d] = np.minimum(hi[i_d], np.maximum(lo[i_d], -steer_cap))
        C_parts = [self._C_hard]
        lo_parts = [lo]
        hi_parts = [hi]
        soft_parts = [np.zeros(self._C_hard.shape[0])]

        # track tube (disc around the reference point), stages 1..N, softened
        hw = self.track.half_width[self.track._segment_of(thetas)[1]][1:]
        g_bar = e_c[1:] ** 2 + e_l[1:] ** 2 - hw ** 2
        r_track = 2.0 * e_c[1:, None] * rows_c + 2.0 * e_l[1:, None] * rows_l
        scale = 1.0 / (2.0 * hw)
        C_parts.append(r_track * scale[:, None])
        hi_parts.append((r_track @ W - g_bar) * scale)
        lo_parts.append(np.full(N, -np.inf))
        soft_parts.append(np.full(N, cfg.slack_weight))

        # collision half-spaces per obstacle, stages 1..N, softened
        if len(obs_sig):
            tangent = np.stack([cp, sp], axis=1)
            normal = np.stack([-sp, cp], axis=1)  # track-left
            sched = np.asarray(cfg.p_schedule)
            xr, yr, phi_r, _ = self.track.ref_pose_batch(thetas)
            # When a separating plane is near-longitudinal with the obstacle
            # still ahead (follow mode), tilt it toward the side of the track
            # the obstacle leaves free, so the QP can discover lateral passes
            # instead of only braking. Behind-obstacles get no tilt: after
            # the pass the plane must never shove the ego sideways. Each
            # dead-ahead obstacle votes for its free side per stage; opposing
            # votes mean the road is flanked on both sides, where the only
            # honest move is braking, so the tilt is dropped rather than
            # aimed at an occupied lane.
            plane_cache = []
            votes = np.zeros((obs_pos.shape[0], N + 1))
            masks = np.zeros((obs_pos.shape[0], N + 1), dtype=bool)
            for j in range(obs_pos.shape[0]):
                rel = S[:, :2] - obs_pos[j, :N + 1]
                dist = np.hypot(rel[:, 0], rel[:, 1])
                n_hat = np.where(dist[:, None] > 1e-9,
                                 rel / np.maximum(dist, 1e-9)[:, None], normal)
                dot = (n_hat * tangent).sum(axis=1)
                e_c_obs = (np.sin(phi_r) * (obs_pos[j, :N + 1, 0] - xr)
                           - np.cos(phi_r) * (obs_pos[j, :N + 1, 1] - yr))
                votes[j] = np.where(e_c_obs > 0.0, 1.0, -1.0)  # +1: room left
                masks[j] = dot < -0.9
                plane_cache.append((rel, n_hat))
            any_pos = ((votes > 0) & masks).any(axis=0)
            any_neg = ((votes < 0) & masks).any(axis=0)
            tilt = np.where(any_pos & ~any_neg, 1.0,
                            np.where(any_neg & ~any_pos, -1.0, 0.0))
            for j in range(obs_pos.shape[0]):
                rel, n_hat = plane_cache[j]
                use = masks[j] & (tilt != 0.0)
                if use.any():
                    biased = (n_hat[use]
                              + _LATERAL_BIAS * tilt[use, None] * normal[use])
                    biased /= np.hypot(biased[:, 0], biased[:, 1])[:, None]
                    n_hat[use] = biased
                rows = -(n_hat[1:, 0:1] * Mx[1:] + n_hat[1:, 1:2] * My[1:])
                rho_k = sched[1:] * obs_sig[j]
                d_along = (n_hat[1:] * rel[1:]).sum(axis=1)
                # Once the along-track lead alone clears the keep-out radius the
                # euclidean constraint holds at the linearization point for any
                # lateral position; drop the row so it cannot pull backward.
                ego_lead = (rel[1:] * tangent[1:]).sum(axis=1)
                passed = ego_lead > rho_k
                if passed.any():
                    rows[passed] = 0.0
                hi_j = rows @ W + d_along - rho_k
                if passed.any():
                    hi_j[passed] = 1.0
                C_parts.append(rows)
                hi_parts.append(hi_j)
                lo_parts.append(np.full(N, -np.inf))
                soft_parts.append(np.full(N, cfg.slack_weight))

        # Yaw-rate envelope, stages 1..N, softened. The linearized tire model
        # extrapolates past the force peak, so without this the QP will plan
        # yaw rates the real car answers with a spin. Steady-state grip gives
        # |r| <= a_lat/v; scale the row so violations price like track meters.
        r_k = S[1:, 5]
        v_k = np.maximum(S[1:, 3], 5.0)
        r_max = _R_HEADROOM * self._a_lat_max / v_k
        r_rows = _R_ROW_SCALE * Mr[1:]
        base = r_rows @ W - _R_ROW_SCALE * r_k
        C_parts.append(r_rows)
        hi_parts.append(base + _R_ROW_SCALE * r_max)
        lo_parts.append(base - _R_ROW_SCALE * r_max)
        soft_parts.append(np.full(N, cfg.slack_weight))

        C = np.vstack(C_parts)
        lo_all = np.concatenate(lo_parts)
        hi_all = np.concatenate(hi_parts)
        soft = np.concatenate(soft_parts)

        y0 = lam0 = None
        if self._admm_state is not None and self._admm_state[0].shape[0] == C.shape[0]:
            y0, lam0 = self._admm_state
        res = qp.solve_qp(P, q, C, lo_all, hi_all, soft,
                          x0=W, y0=y0, lam0=lam0,
                          max_iter=_ADMM_MAX_ITER, tol=_ADMM_TOL)
        self._admm_state = (res.y, res.lam)
        return res.x

    def _pack(self, best, lap0, iterations, obs_pos, obs_sig, u_prev_arr, status):
        cfg = self.config
        W, S, thetas, _ = best
        L = self.track.total_length
        v_track, v_coll = self._violations(S, thetas, obs_pos, obs_sig)
        max_track = float(v_track.max()) if v_track.size else 0.0
        max_coll = float(v_coll.max()) if v_coll.size else 0.0
        max_slack = max(max_track, max_coll)
        if status == CONVERGED and max_slack > SLACK_ACTIVE_TOL:
            status = SLACK_ACTIVE
        states = [VehicleState.from_array(S[k]) for k in range(cfg.N + 1)]
        inputs = [ControlInput(float(W[3 * k]), float(W[3 * k + 1]))
                  for k in range(cfg.N)]
        prog = [PathProgress(theta=float(np.mod(t, L)),
                             lap_count=lap0 + int(t // L)) for t in thetas]
        cost = self._true_cost(S, thetas, W, u_prev_arr)
        terminal = lap0 * L + float(thetas[-1])
        return MpccSolution(
            states=states, inputs=inputs, thetas=prog,
            v_thetas=[float(v) for v in W[self._idx_vt]],
            cost=cost, terminal_progress=terminal, status=status,
            max_slack=max_slack, max_track_slack=max_track,
            max_collision_slack=max_coll, iterations=iterations,
            positions=S[:, :2].copy(), _W=W.copy())


def solve(x0: VehicleState, theta0, track: Track, obstacles: ObstacleSet | None,
          config: MpccConfig, params: VehicleParams,
          warm_start: MpccSolution | None = None,
          u_prev: ControlInput | None = None,
          draft: DraftContext | None = None) -> MpccSolution:
    """One-shot solve without persistent workspaces (see MpccSolver for reuse)."""
    return MpccSolver(track, config, params).solve(
        x0, theta0, obstacles, warm_start=warm_start, u_prev=u_prev, draft=draft)
