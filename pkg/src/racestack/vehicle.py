"""Dynamic bicycle model with simplified Pacejka tires and drafting-aware drag.

State layout is [X, Y, psi, v_x, v_y, r] (world position, heading, body-frame
velocities, yaw rate).  Inputs are the steering angle delta (rad) and a
normalized drive command D in [-1, 1]; negative D brakes.

Sign convention: slip angles are alpha_F = atan((v_y + l_F r)/v_x) - delta and
alpha_R = atan((v_y - l_R r)/v_x), with lateral force D_i sin(C_i atan(B_i a)).
Under this convention a *negative* stiffness factor B makes the force oppose
the slip, which is the physically stable configuration shipped in the default
parameter set.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

V_EPS = 0.5         # m/s, keeps slip angles defined near standstill
DRAFT_RANGE = 60.0  # m, leaders farther ahead than this give no wake benefit
SPEED_CAP = 83.34   # m/s, ceiling on any configured v_max (300 km/h)

_FD_EPS = 1e-5      # relative step for finite-difference linearization


class InvalidStateError(ValueError):
    """A state or input is outside the model's domain (non-finite, v_x < 0...)."""


class IntegrationDivergedError(RuntimeError):
    """An integration step produced a non-finite state."""


@dataclass(frozen=True)
class VehicleState:
    X: float
    Y: float
    psi: float
    v_x: float
    v_y: float
    r: float

    def as_array(self) -> np.ndarray:
        return np.array([self.X, self.Y, self.psi, self.v_x, self.v_y, self.r])

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]),
                   float(arr[3]), float(arr[4]), float(arr[5]))


@dataclass(frozen=True)
class ControlInput:
    delta: float  # rad
    D: float      # normalized drive, [-1, 1]

    def as_array(self) -> np.ndarray:
        return np.array([self.delta, self.D])

    @classmethod
    def from_array(cls, arr) -> "ControlInput":
        return cls(float(arr[0]), float(arr[1]))


@dataclass(frozen=True)
class TireForces:
    F_Fy: float
    F_Ry: float
    F_Rx: float
    alpha_F: float
    alpha_R: float


@dataclass(frozen=True)
class DraftContext:
    """Relative geometry of the nearest leading vehicle, for the wake model."""
    leader_gap: float = math.inf  # m, longitudinal distance to nearest leader
    lateral_offset: float = 0.0   # m, lateral offset to that leader


@dataclass(frozen=True)
class VehicleParams:
    m: float      # kg
    I_z: float    # kg m^2
    l_F: float    # m, CoG to front axle
    l_R: float    # m, CoG to rear axle
    B_F: float    # front tire stiffness factor (dimensionless)
    C_F: float    # front tire shape factor
    D_F: float    # front tire peak force, N
    B_R: float
    C_R: float
    D_R: float
    C_m: float    # drive force per unit D, N
    C_r: float    # rolling resistance, N
    C_d: float    # aero drag, N s^2/m^2
    v_max: float  # m/s
    footprint_radius: float  # m, disc approximation for collision checks
    k_draft: float  # peak fractional drag reduction in a wake
    L_draft: float  # m, wake decay length
    w_draft: float  # m, wake half-width

    def __post_init__(self):
        for name in ("m", "I_z", "l_F", "l_R", "D_F", "D_R", "C_m",
                     "footprint_radius", "L_draft", "w_draft"):
            if not getattr(self, name) > 0:
                raise ValueError(f"VehicleParams.{name} must be > 0")
        for name in ("C_r", "C_d"):
            if getattr(self, name) < 0:
                raise ValueError(f"VehicleParams.{name} must be >= 0")
        if not 0 < self.v_max <= SPEED_CAP:
            raise ValueError(f"VehicleParams.v_max must be in (0, {SPEED_CAP}]")
        if not 0 <= self.k_draft < 1:
            raise ValueError("VehicleParams.k_draft must be in [0, 1)")
        for name in ("B_F", "C_F", "B_R", "C_R"):
            v = getattr(self, name)
            if not math.isfinite(v) or v == 0:
                raise ValueError(f"VehicleParams.{name} must be finite and nonzero")

    def replace(self, **kw) -> "VehicleParams":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return VehicleParams(**vals)


def load_vehicle_params(path) -> VehicleParams:
    """Load parameters from a flat JSON dict. Every field is required (SI units)."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a JSON object of parameter fields")
    names = {f.name for f in fields(VehicleParams)}
    missing = sorted(names - raw.keys())
    if missing:
        raise ValueError(f"{path}: missing required parameter(s): {', '.join(missing)}")
    extra = sorted(raw.keys() - names)
    if extra:
        raise ValueError(f"{path}: unknown parameter(s): {', '.join(extra)}")
    return VehicleParams(**{k: float(v) for k, v in raw.items()})


def save_vehicle_params(params: VehicleParams, path) -> None:
    data = {f.name: getattr(params, f.name) for f in fields(VehicleParams)}
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# drafting

def draft_drag(draft: DraftContext | None, params: VehicleParams) -> float:
    """Effective drag coefficient in a leader's wake; C_d when running clean."""
    if draft is None:
        return params.C_d
    gap = draft.leader_gap
    if not math.isfinite(gap) or gap < 0 or gap > DRAFT_RANGE:
        return params.C_d
    lat = 1.0 - abs(draft.lateral_offset) / params.w_draft
    if lat <= 0.0:
        return params.C_d
    return params.C_d * (1.0 - params.k_draft * math.exp(-gap / params.L_draft) * lat)


def nearest_leader_context(ego: VehicleState, leaders, params: VehicleParams) -> DraftContext:
    """Pick the nearest vehicle ahead of `ego` (in ego's frame) within range."""
    best_gap = math.inf
    best_off = 0.0
    c, s = math.cos(ego.psi), math.sin(ego.psi)
    for other in leaders:
        dx = other.X - ego.X
        dy = other.Y - ego.Y
        gap = dx * c + dy * s
        if 0.0 < gap <= DRAFT_RANGE and gap < best_gap:
            best_gap = gap
            best_off = -dx * s + dy * c
    return DraftContext(leader_gap=best_gap, lateral_offset=best_off)


def effective_drag(ego: VehicleState, leaders, params: VehicleParams) -> float:
    """cd_eff for `ego` given the other vehicles' states."""
    return draft_drag(nearest_leader_context(ego, leaders, params), params)


# ---------------------------------------------------------------------------
# dynamics

def _check_state(state: VehicleState, inp: ControlInput) -> None:
    vals = (state.X, state.Y, state.psi, state.v_x, state.v_y, state.r,
            inp.delta, inp.D)
    if not all(math.isfinite(v) for v in vals):
        raise InvalidStateError("non-finite state or input")
    if state.v_x < 0:
        raise InvalidStateError(f"v_x = {state.v_x} < 0 is outside the model domain")


def tire_forces(state: VehicleState, inp: ControlInput, params: VehicleParams,
                cd_eff: float | None = None) -> TireForces:
    """Simplified Pacejka lateral forces plus the longitudinal drive/drag balance."""
    _check_state(state, inp)
    cd = params.C_d if cd_eff is None else cd_eff
    v_x = max(state.v_x, V_EPS)  # epsilon-guard for the slip-angle denominators
    alpha_F = math.atan((state.v_y + params.l_F * state.r) / v_x) - inp.delta
    alpha_R = math.atan((state.v_y - params.l_R * state.r) / v_x)
    F_Fy = params.D_F * math.sin(params.C_F * math.atan(params.B_F * alpha_F))
    F_Ry = params.D_R * math.sin(params.C_R * math.atan(params.B_R * alpha_R))
    F_Rx = params.C_m * inp.D - params.C_r - cd * state.v_x ** 2
    return TireForces(F_Fy=F_Fy, F_Ry=F_Ry, F_Rx=F_Rx,
                      alpha_F=alpha_F, alpha_R=alpha_R)


def _deriv(x, u, p: VehicleParams, cd: float):
    """Scalar state derivative; x and u are tuples of floats. Hot path."""
    X, Y, psi, v_x, v_y, r = x
    delta, D = u
    v_g = v_x if v_x > V_EPS else V_EPS
    a_F = math.atan((v_y + p.l_F * r) / v_g) - delta
    a_R = math.atan((v_y - p.l_R * r) / v_g)
    F_Fy = p.D_F * math.sin(p.C_F * math.atan(p.B_F * a_F))
    F_Ry = p.D_R * math.sin(p.C_R * math.atan(p.B_R * a_R))
    F_Rx = p.C_m * D - p.C_r - cd * v_x * v_x
    cos_d = math.cos(delta)
    sin_d = math.sin(delta)
    cos_p = math.cos(psi)
    sin_p = math.sin(psi)
    return (
        v_x * cos_p - v_y * sin_p,
        v_x * sin_p + v_y * cos_p,
        r,
        (F_Rx - F_Fy * sin_d) / p.m + v_y * r,
        (F_Ry + F_Fy * cos_d) / p.m - v_x * r,
        (F_Fy * p.l_F * cos_d - F_Ry * p.l_R) / p.I_z,
    )


def _deriv_batch(S: np.ndarray, U: np.ndarray, p: VehicleParams, cd) -> np.ndarray:
    """Vectorized twin of _deriv over rows of S (B,6) and U (B,2)."""
    psi = S[:, 2]
    v_x = S[:, 3]
    v_y = S[:, 4]
    r = S[:, 5]
    delta = U[:, 0]
    D = U[:, 1]
    v_g = np.maximum(v_x, V_EPS)
    a_F = np.arctan((v_y + p.l_F * r) / v_g) - delta
    a_R = np.arctan((v_y - p.l_R * r) / v_g)
    F_Fy = p.D_F * np.sin(p.C_F * np.arctan(p.B_F * a_F))
    F_Ry = p.D_R * np.sin(p.C_R * np.arctan(p.B_R * a_R))
    F_Rx = p.C_m * D - p.C_r - cd * v_x * v_x
    cos_d = np.cos(delta)
    sin_d = np.sin(delta)
    cos_p = np.cos(psi)
    sin_p = np.sin(psi)
    out = np.empty_like(S)
    out[:, 0] = v_x * cos_p - v_y * sin_p
    out[:, 1] = v_x * sin_p + v_y * cos_p
    out[:, 2] = r
    out[:, 3] = (F_Rx - F_Fy * sin_d) / p.m + v_y * r
    out[:, 4] = (F_Ry + F_Fy * cos_d) / p.m - v_x * r
    out[:, 5] = (F_Fy * p.l_F * cos_d - F_Ry * p.l_R) / p.I_z
    return out


def dynamics(state: VehicleState, inp: ControlInput, params: VehicleParams,
             draft: DraftContext | None = None) -> np.ndarray:
    """Continuous-time state derivative (6-vector)."""
    _check_state(state, inp)
    cd = draft_drag(draft, params)
    d = _deriv((state.X, state.Y, state.psi, state.v_x, state.v_y, state.r),
               (inp.delta, inp.D), params, cd)
    return np.array(d)


def _rk4(x, u, p: VehicleParams, cd: float, dt: float):
    k1 = _deriv(x, u, p, cd)
    x2 = tuple(x[i] + 0.5 * dt * k1[i] for i in range(6))
    k2 = _deriv(x2, u, p, cd)
    x3 = tuple(x[i] + 0.5 * dt * k2[i] for i in range(6))
    k3 = _deriv(x3, u, p, cd)
    x4 = tuple(x[i] + dt * k3[i] for i in range(6))
    k4 = _deriv(x4, u, p, cd)
    h = dt / 6.0
    return tuple(x[i] + h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                 for i in range(6))


def integrate(state: VehicleState, inp: ControlInput, params: VehicleParams,
              draft: DraftContext | None = None, dt: float = 0.01) -> VehicleState:
    """One RK4 step with the input held constant; v_x clamped to [V_EPS, v_max]."""
    if not (isinstance(dt, (int, float)) and math.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be a positive finite number, got {dt!r}")
    _check_state(state, inp)
    cd = draft_drag(draft, params)
    x = (state.X, state.Y, state.psi, state.v_x, state.v_y, state.r)
    out = _rk4(x, (inp.delta, inp.D), params, cd, dt)
    if not all(math.isfinite(v) for v in out):
        raise IntegrationDivergedError(f"non-finite state after step from {state}")
    v_x = min(max(out[3], V_EPS), params.v_max)
    return VehicleState(out[0], out[1], out[2], v_x, out[4], out[5])


def integrate_batch(S: np.ndarray, U: np.ndarray, params: VehicleParams,
                    cd, dt: float) -> np.ndarray:
    """Vectorized RK4 over rows; no validation, caller checks finiteness."""
    k1 = _deriv_batch(S, U, params, cd)
    k2 = _deriv_batch(S + 0.5 * dt * k1, U, params, cd)
    k3 = _deriv_batch(S + 0.5 * dt * k2, U, params, cd)
    k4 = _deriv_batch(S + dt * k3, U, params, cd)
    out = S + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[:, 3] = np.clip(out[:, 3], V_EPS, params.v_max)
    return out


def linearize_batch(S: np.ndarray, U: np.ndarray, params: VehicleParams,
                    cd, dt: float):
    """Central-difference Jacobians of integrate at each row of S, U.

    Returns (A (K,6,6), B (K,6,2), c (K,6)) with
    x_next ~= A x + B u + c exact at the expansion points.
    """
    K = S.shape[0]
    hS = _FD_EPS * np.maximum(1.0, np.abs(S))          # (K,6)
    hU = _FD_EPS * np.maximum(1.0, np.abs(U))          # (K,2)
    n_var = 17  # nominal + 6 state pairs + 2 input pairs
    Sb = np.repeat(S[:, None, :], n_var, axis=1)       # (K,17,6)
    Ub = np.repeat(U[:, None, :], n_var, axis=1)
    for j in range(6):
        Sb[:, 1 + 2 * j, j] += hS[:, j]
        Sb[:, 2 + 2 * j, j] -= hS[:, j]
    for j in range(2):
        Ub[:, 13 + 2 * j, j] += hU[:, j]
        Ub[:, 14 + 2 * j, j] -= hU[:, j]
    cdb = np.repeat(np.broadcast_to(np.asarray(cd, dtype=float), (K,))[:, None],
                    n_var, axis=1).reshape(-1)
    out = integrate_batch(Sb.reshape(-1, 6), Ub.reshape(-1, 2), params, cdb, dt)
    out = out.reshape(K, n_var, 6)
    A = np.empty((K, 6, 6))
    B = np.empty((K, 6, 2))
    for j in range(6):
        A[:, :, j] = (out[:, 1 + 2 * j] - out[:, 2 + 2 * j]) / (2.0 * hS[:, j:j + 1])
    for j in range(2):
        B[:, :, j] = (out[:, 13 + 2 * j] - out[:, 14 + 2 * j]) / (2.0 * hU[:, j:j + 1])
    c = out[:, 0] - np.einsum("kij,kj->ki", A, S) - np.einsum("kij,kj->ki", B, U)
    return A, B, c


def linearize(state: VehicleState, inp: ControlInput, params: VehicleParams,
              draft: DraftContext | None = None, dt: float = 0.01):
    """Affine discrete model (A, B, c) of integrate around one point."""
    _check_state(state, inp)
    cd = draft_drag(draft, params)
    A, B, c = linearize_batch(state.as_array()[None, :], inp.as_array()[None, :],
                              params, cd, dt)
    return A[0], B[0], c[0]
