"""Vehicle model: closed-form oracles, convergence order, Jacobian checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from racestack.vehicle import (
    DRAFT_RANGE,
    SPEED_CAP,
    V_EPS,
    ControlInput,
    DraftContext,
    IntegrationDivergedError,
    InvalidStateError,
    VehicleParams,
    VehicleState,
    draft_drag,
    dynamics,
    integrate,
    integrate_batch,
    linearize,
    linearize_batch,
    load_vehicle_params,
    nearest_leader_context,
    save_vehicle_params,
    tire_forces,
)


def make_params(**overrides):
    base = dict(m=750.0, I_z=1000.0, l_F=1.7, l_R=1.2,
                B_F=-10.0, C_F=1.7, D_F=5200.0,
                B_R=-11.0, C_R=1.75, D_R=7300.0,
                C_m=9000.0, C_r=200.0, C_d=0.9, v_max=83.3,
                footprint_radius=1.4, k_draft=0.5, L_draft=20.0, w_draft=3.0)
    base.update(overrides)
    return VehicleParams(**base)


def straight_state(v_x, v_y=0.0, r=0.0, psi=0.0):
    return VehicleState(X=0.0, Y=0.0, psi=psi, v_x=v_x, v_y=v_y, r=r)


# ---------------------------------------------------------------- tire model

def test_lateral_force_matches_magic_formula_directly(params):
    # alpha_F = atan((v_y + l_F r)/v_x) - delta, F = D sin(C atan(B alpha))
    s = straight_state(20.0, v_y=0.5, r=0.1)
    u = ControlInput(delta=0.05, D=0.0)
    f = tire_forces(s, u, params)
    a_f = math.atan((0.5 + params.l_F * 0.1) / 20.0) - 0.05
    a_r = math.atan((0.5 - params.l_R * 0.1) / 20.0)
    assert f.alpha_F == pytest.approx(a_f, abs=1e-12)
    assert f.alpha_R == pytest.approx(a_r, abs=1e-12)
    assert f.F_Fy == pytest.approx(
        params.D_F * math.sin(params.C_F * math.atan(params.B_F * a_f)), rel=1e-12)
    assert f.F_Ry == pytest.approx(
        params.D_R * math.sin(params.C_R * math.atan(params.B_R * a_r)), rel=1e-12)


def test_longitudinal_force_hand_value():
    # F_Rx = C_m D - C_r - C_d v^2; picked numbers give -150 N / -0.15 m/s^2
    p = make_params(m=1000.0, C_m=5000.0, C_r=100.0, C_d=0.5)
    s = straight_state(10.0)
    f = tire_forces(s, ControlInput(delta=0.0, D=0.0), p)
    assert f.F_Rx == pytest.approx(-100.0 - 0.5 * 100.0)
    xdot = dynamics(s, ControlInput(delta=0.0, D=0.0), p)
    assert xdot[3] == pytest.approx(-0.15)


def test_zero_slip_zero_lateral_force(params):
    f = tire_forces(straight_state(30.0), ControlInput(0.0, 0.2), params)
    assert f.alpha_F == 0.0 and f.alpha_R == 0.0
    assert f.F_Fy == 0.0 and f.F_Ry == 0.0


def test_low_speed_guard_uses_v_eps(params):
    # below V_EPS the slip denominator is pinned, so forces stay finite
    s = straight_state(0.0, v_y=0.1)
    f = tire_forces(s, ControlInput(0.0, 0.0), params)
    assert f.alpha_R == pytest.approx(math.atan((0.1 - params.l_R * 0.0) / V_EPS))
    assert math.isfinite(f.F_Fy) and math.isfinite(f.F_Ry)


@settings(max_examples=200, deadline=None)
@given(v_x=st.floats(0.0, 80.0), v_y=st.floats(-10.0, 10.0),
       r=st.floats(-2.0, 2.0), delta=st.floats(-0.3, 0.3))
def test_lateral_force_bounded_by_peak(v_x, v_y, r, delta):
    p = make_params()
    f = tire_forces(straight_state(v_x, v_y, r), ControlInput(delta, 0.0), p)
    assert abs(f.F_Fy) <= p.D_F + 1e-9
    assert abs(f.F_Ry) <= p.D_R + 1e-9


@settings(max_examples=100, deadline=None)
@given(v_y=st.floats(0.01, 10.0))
def test_lateral_force_odd_in_slip(v_y):
    p = make_params()
    u = ControlInput(0.0, 0.0)
    f_pos = tire_forces(straight_state(25.0, v_y, 0.0), u, p)
    f_neg = tire_forces(straight_state(25.0, -v_y, 0.0), u, p)
    assert f_pos.F_Fy == pytest.approx(-f_neg.F_Fy, rel=1e-12)
    assert f_pos.F_Ry == pytest.approx(-f_neg.F_Ry, rel=1e-12)


# ----------------------------------------------------------------- drafting

def test_draft_drag_shapes():
    p = make_params()
    assert draft_drag(None, p) == p.C_d
    # out of band: behind, beyond range, beside the wake
    assert draft_drag(DraftContext(leader_gap=-1.0), p) == p.C_d
    assert draft_drag(DraftContext(leader_gap=DRAFT_RANGE + 1.0), p) == p.C_d
    assert draft_drag(DraftContext(leader_gap=10.0, lateral_offset=3.0), p) == p.C_d
    # on-axis value from the formula
    want = p.C_d * (1.0 - p.k_draft * math.exp(-10.0 / p.L_draft))
    assert draft_drag(DraftContext(leader_gap=10.0), p) == pytest.approx(want)
    # zero-gap limit is the full k_draft reduction
    assert draft_drag(DraftContext(leader_gap=0.0), p) == pytest.approx(
        p.C_d * (1.0 - p.k_draft))


def test_draft_drag_lateral_taper():
    p = make_params()
    on = draft_drag(DraftContext(leader_gap=15.0, lateral_offset=0.0), p)
    half = draft_drag(DraftContext(leader_gap=15.0, lateral_offset=1.5), p)
    assert on < half < p.C_d
    # linear in |lateral|: reduction at half-width is half the on-axis one
    assert (p.C_d - half) == pytest.approx(0.5 * (p.C_d - on), rel=1e-9)


def test_nearest_leader_context(params):
    ego = straight_state(30.0)
    lead = VehicleState(X=10.0, Y=1.0, psi=0.0, v_x=30.0, v_y=0.0, r=0.0)
    ctx = nearest_leader_context(ego, [lead], params)
    assert ctx.leader_gap == pytest.approx(10.0)
    assert ctx.lateral_offset == pytest.approx(1.0)  # leader's y in ego frame
    behind = VehicleState(X=-5.0, Y=0.0, psi=0.0, v_x=30.0, v_y=0.0, r=0.0)
    faraway = VehicleState(X=DRAFT_RANGE + 5.0, Y=0.0, psi=0.0,
                           v_x=30.0, v_y=0.0, r=0.0)
    # trailing, absent, or out-of-range cars leave the context in clean air
    assert nearest_leader_context(ego, [behind], params).leader_gap == math.inf
    assert nearest_leader_context(ego, [], params).leader_gap == math.inf
    assert nearest_leader_context(ego, [faraway], params).leader_gap == math.inf
    # rotated frame: gap measured along ego heading
    ego_r = VehicleState(X=0.0, Y=0.0, psi=math.pi / 2, v_x=30.0, v_y=0.0, r=0.0)
    lead_r = VehicleState(X=0.0, Y=12.0, psi=math.pi / 2, v_x=30.0, v_y=0.0, r=0.0)
    ctx_r = nearest_leader_context(ego_r, [lead_r], params)
    assert ctx_r.leader_gap == pytest.approx(12.0)
    assert ctx_r.lateral_offset == pytest.approx(0.0, abs=1e-12)


# -------------------------------------------------------------- integration

def test_coasting_matches_closed_form():
    # dv/dt = -(C_r + C_d v^2)/m  =>  v(t) = a tan(atan(v0/a) - sqrt(C_r C_d) t/m)
    # with a = sqrt(C_r/C_d); pure deceleration, no steering.
    p = make_params()
    v0, t_end, dt = 40.0, 2.0, 0.01
    s = straight_state(v0)
    u = ControlInput(0.0, 0.0)
    for _ in range(int(round(t_end / dt))):
        s = integrate(s, u, p, dt=dt)
    a = math.sqrt(p.C_r / p.C_d)
    v_exact = a * math.tan(math.atan(v0 / a) - math.sqrt(p.C_r * p.C_d) * t_end / p.m)
    assert s.v_x == pytest.approx(v_exact, abs=1e-8)
    assert s.X == pytest.approx(
        # X(t) = (m / C_d) ln(cos(c - k t)/cos(c)), c = atan(v0/a), k = sqrt(C_r C_d)/m
        (p.m / p.C_d) * math.log(
            math.cos(math.atan(v0 / a) - math.sqrt(p.C_r * p.C_d) * t_end / p.m)
            / math.cos(math.atan(v0 / a))),
        rel=1e-7)
    assert s.Y == 0.0 and s.psi == 0.0


def test_rk4_convergence_order():
    """Step-halving error ratio on a steady turn; RK4 should show order >= 3.5."""
    p = make_params()
    u = ControlInput(delta=0.04, D=0.3)
    s0 = straight_state(25.0)
    t_end = 0.32

    def final_state(dt):
        s = s0
        for _ in range(int(round(t_end / dt))):
            s = integrate(s, u, p, dt=dt)
        return s.as_array()

    ref = final_state(1e-4)
    errs = [np.linalg.norm(final_state(dt) - ref) for dt in (0.04, 0.02, 0.01)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 3.5


def test_integrate_clamps_speed():
    p = make_params(v_max=30.0)
    fast = integrate(straight_state(29.9), ControlInput(0.0, 1.0), p, dt=0.5)
    assert fast.v_x == pytest.approx(30.0)
    slow = integrate(straight_state(0.6), ControlInput(0.0, -1.0), p, dt=0.5)
    assert slow.v_x == pytest.approx(V_EPS)


def test_integrate_rejects_bad_inputs(params):
    s = straight_state(10.0)
    u = ControlInput(0.0, 0.0)
    with pytest.raises(ValueError, match="dt"):
        integrate(s, u, params, dt=0.0)
    with pytest.raises(ValueError, match="dt"):
        integrate(s, u, params, dt=float("nan"))
    with pytest.raises(InvalidStateError):
        integrate(straight_state(float("nan")), u, params, dt=0.01)
    with pytest.raises(InvalidStateError):
        integrate(straight_state(-1.0), u, params, dt=0.01)


def test_integrate_batch_matches_scalar(params, rng):
    n = 32
    S = np.column_stack([
        rng.uniform(-50, 50, n), rng.uniform(-50, 50, n),
        rng.uniform(-math.pi, math.pi, n), rng.uniform(5, 60, n),
        rng.uniform(-3, 3, n), rng.uniform(-1, 1, n)])
    U = np.column_stack([rng.uniform(-0.2, 0.2, n), rng.uniform(-1, 1, n)])
    cd = np.full(n, params.C_d)
    out = integrate_batch(S, U, params, cd, 0.02)
    for i in range(n):
        si = integrate(VehicleState.from_array(S[i]),
                       ControlInput(U[i, 0], U[i, 1]), params, dt=0.02)
        np.testing.assert_allclose(out[i], si.as_array(), rtol=1e-12, atol=1e-12)


# -------------------------------------------------------------- linearization

def test_linearize_against_independent_differences(params, rng):
    """Central differences computed here, not by the library."""
    dt = 0.05
    for _ in range(100):
        x = np.array([rng.uniform(-10, 10), rng.uniform(-10, 10),
                      rng.uniform(-math.pi, math.pi), rng.uniform(5, 60),
                      rng.uniform(-2, 2), rng.uniform(-0.8, 0.8)])
        u = np.array([rng.uniform(-0.25, 0.25), rng.uniform(-0.9, 0.9)])

        def f(xv, uv):
            return integrate(VehicleState.from_array(xv),
                             ControlInput(uv[0], uv[1]), params,
                             dt=dt).as_array()

        A, B, c = linearize(VehicleState.from_array(x),
                            ControlInput(u[0], u[1]), params, dt=dt)
        for j in range(6):
            h = 1e-6 * max(1.0, abs(x[j]))
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            col = (f(xp, u) - f(xm, u)) / (2 * h)
            np.testing.assert_allclose(A[:, j], col, rtol=1e-4, atol=1e-6)
        for j in range(2):
            h = 1e-6 * max(1.0, abs(u[j]))
            up, um = u.copy(), u.copy()
            up[j] += h
            um[j] -= h
            col = (f(x, up) - f(x, um)) / (2 * h)
            np.testing.assert_allclose(B[:, j], col, rtol=1e-4, atol=1e-6)
        np.testing.assert_allclose(A @ x + B @ u + c, f(x, u),
                                   rtol=1e-7, atol=1e-7)


def test_linearize_batch_matches_scalar(params, rng):
    S = np.column_stack([rng.uniform(-5, 5, 8), rng.uniform(-5, 5, 8),
                         rng.uniform(-1, 1, 8), rng.uniform(10, 50, 8),
                         rng.uniform(-2, 2, 8), rng.uniform(-0.5, 0.5, 8)])
    U = np.column_stack([rng.uniform(-0.2, 0.2, 8), rng.uniform(-0.5, 0.5, 8)])
    cd = np.full(8, params.C_d)
    A, B, c = linearize_batch(S, U, params, cd, 0.05)
    for i in range(8):
        Ai, Bi, ci = linearize(VehicleState.from_array(S[i]),
                               ControlInput(U[i, 0], U[i, 1]), params, dt=0.05)
        np.testing.assert_allclose(A[i], Ai, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(B[i], Bi, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(c[i], ci, rtol=1e-9, atol=1e-9)


# ----------------------------------------------------------------- parameters

@pytest.mark.parametrize("field,value,msg", [
    ("m", 0.0, "VehicleParams.m must be > 0"),
    ("I_z", -1.0, "VehicleParams.I_z must be > 0"),
    ("D_F", 0.0, "VehicleParams.D_F must be > 0"),
    ("C_r", -0.1, "VehicleParams.C_r must be >= 0"),
    ("k_draft", 1.0, "VehicleParams.k_draft must be in"),
    ("B_F", 0.0, "VehicleParams.B_F must be finite and nonzero"),
    ("C_R", float("inf"), "VehicleParams.C_R must be finite and nonzero"),
])
def test_params_validation_messages(field, value, msg):
    with pytest.raises(ValueError, match=msg.replace("(", "\\(")):
        make_params(**{field: value})


def test_params_v_max_range():
    with pytest.raises(ValueError, match="v_max"):
        make_params(v_max=0.0)
    with pytest.raises(ValueError, match="v_max"):
        make_params(v_max=SPEED_CAP + 1.0)
    make_params(v_max=SPEED_CAP)  # boundary allowed


def test_params_replace():
    p = make_params().replace(m=900.0)
    assert p.m == 900.0 and p.I_z == 1000.0


def test_params_roundtrip(tmp_path):
    p = make_params(m=812.5, C_d=0.77)
    path = tmp_path / "p.json"
    save_vehicle_params(p, path)
    q = load_vehicle_params(path)
    assert q == p


def test_params_file_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"m": 750.0}')
    with pytest.raises(ValueError, match="missing required parameter"):
        load_vehicle_params(bad)
    extra = tmp_path / "extra.json"
    import json as _json
    from dataclasses import fields as dc_fields
    full = {f.name: getattr(make_params(), f.name) for f in dc_fields(VehicleParams)}
    full["wings"] = 2
    extra.write_text(_json.dumps(full))
    with pytest.raises(ValueError, match="unknown parameter"):
        load_vehicle_params(extra)
