"""ADMM QP solver against closed forms and a cvxpy reference.

cvxpy is a test-only dependency; the runtime solver is self-contained.
"""

import numpy as np
import pytest

cvxpy = pytest.importorskip("cvxpy")

from racestack.qp import QpError, solve_qp


def random_problem(rng, n, m, n_soft):
    M = rng.normal(size=(n, n))
    P = M @ M.T + 0.5 * np.eye(n)
    q = rng.normal(size=n)
    C = rng.normal(size=(m, n))
    mid = C @ rng.normal(size=n)
    width = rng.uniform(0.2, 2.0, size=m)
    lo = mid - width
    hi = mid + width
    w = np.zeros(m)
    w[rng.choice(m, size=n_soft, replace=False)] = rng.uniform(0.5, 20.0, n_soft)
    return P, q, C, lo, hi, w


def cvxpy_reference(P, q, C, lo, hi, w):
    n = q.shape[0]
    x = cvxpy.Variable(n)
    obj = 0.5 * cvxpy.quad_form(x, cvxpy.psd_wrap(P)) + q @ x
    cons = []
    soft = w > 0
    if soft.any():
        s = cvxpy.Variable(int(soft.sum()), nonneg=True)
        cons += [C[soft] @ x <= hi[soft] + s, C[soft] @ x >= lo[soft] - s]
        obj = obj + cvxpy.sum(cvxpy.multiply(w[soft], s + cvxpy.square(s)))
    hard = ~soft
    if hard.any():
        cons += [C[hard] @ x <= hi[hard], C[hard] @ x >= lo[hard]]
    prob = cvxpy.Problem(cvxpy.Minimize(obj), cons)
    prob.solve()
    assert prob.status == "optimal"
    return np.asarray(x.value), float(prob.value)


def objective(P, q, C, lo, hi, w, x):
    val = 0.5 * x @ P @ x + q @ x
    if C is not None:
        v = C @ x
        s = np.maximum(0.0, np.maximum(lo - v, v - hi))
        val += float((w * (s + s ** 2)).sum())
    return val


def test_unconstrained_is_newton_step(rng):
    M = rng.normal(size=(5, 5))
    P = M @ M.T + np.eye(5)
    q = rng.normal(size=5)
    res = solve_qp(P, q)
    assert res.converged
    np.testing.assert_allclose(res.x, np.linalg.solve(P, -q), atol=1e-4)


def test_scalar_box_clip():
    # min x^2 - 10x subject to x <= 2: unconstrained argmin 5, clipped to 2
    res = solve_qp(np.array([[2.0]]), np.array([-10.0]),
                   C=np.array([[1.0]]), lo=np.array([-np.inf]),
                   hi=np.array([2.0]))
    assert res.converged
    assert res.x[0] == pytest.approx(2.0, abs=1e-5)


def test_equality_row():
    # lo == hi pins a coordinate exactly
    P = np.eye(2)
    q = np.array([-1.0, -1.0])
    C = np.array([[1.0, 0.0]])
    res = solve_qp(P, q, C=C, lo=np.array([0.25]), hi=np.array([0.25]))
    assert res.converged
    assert res.x[0] == pytest.approx(0.25, abs=1e-5)
    assert res.x[1] == pytest.approx(1.0, abs=1e-5)


def test_soft_row_matches_stationarity():
    # min 0.5 x^2 + w((5-x)+ + (5-x)+^2) has optimum x = 11w/(1+2w) below 5
    w = 1.0
    res = solve_qp(np.array([[1.0]]), np.array([0.0]),
                   C=np.array([[1.0]]), lo=np.array([5.0]),
                   hi=np.array([np.inf]), soft_w=np.array([w]))
    assert res.converged
    assert res.x[0] == pytest.approx(11.0 * w / (1.0 + 2.0 * w), abs=1e-4)


@pytest.mark.parametrize("n,m,n_soft", [(4, 6, 0), (6, 10, 3), (10, 18, 6)])
def test_matches_cvxpy_on_random_problems(rng, n, m, n_soft):
    for _ in range(6):
        P, q, C, lo, hi, w = random_problem(rng, n, m, n_soft)
        res = solve_qp(P, q, C=C, lo=lo, hi=hi, soft_w=w, max_iter=4000,
                       tol=1e-8)
        assert res.converged
        x_ref, val_ref = cvxpy_reference(P, q, C, lo, hi, w)
        val = objective(P, q, C, lo, hi, w, res.x)
        # same optimum (objectives agree; minimizer may be less unique)
        assert val == pytest.approx(val_ref, rel=1e-5, abs=1e-5)
        # hard rows actually hold
        hard = w == 0
        v = C[hard] @ res.x
        assert (v <= hi[hard] + 1e-5).all() and (v >= lo[hard] - 1e-5).all()


def test_warm_start_reduces_iterations(rng):
    P, q, C, lo, hi, w = random_problem(rng, 8, 12, 4)
    cold = solve_qp(P, q, C=C, lo=lo, hi=hi, soft_w=w)
    warm = solve_qp(P, q, C=C, lo=lo, hi=hi, soft_w=w,
                    x0=cold.x, y0=cold.y, lam0=cold.lam)
    assert cold.converged and warm.converged
    assert warm.iterations <= cold.iterations


def test_max_iter_reports_not_converged(rng):
    P, q, C, lo, hi, w = random_problem(rng, 8, 12, 0)
    res = solve_qp(P, q, C=C, lo=lo, hi=hi, soft_w=w, max_iter=1)
    assert not res.converged
    assert res.iterations == 1


def test_nonfinite_data_raises():
    P = np.array([[np.nan, 0.0], [0.0, 1.0]])
    with pytest.raises(QpError):
        solve_qp(P, np.zeros(2), C=np.eye(2), lo=-np.ones(2), hi=np.ones(2))
