"""Dense convex QP solver via ADMM (operator splitting, OSQP-style).

Solves  min 0.5 x'Px + q'x  +  sum_i w_i * (s_i + s_i^2)
subject to  lo_i <= (Cx)_i <= hi_i      for hard rows (w_i == 0)
            s_i = dist((Cx)_i, [lo_i, hi_i]) for soft rows (w_i > 0),

i.e. soft rows pay a linear-plus-quadratic penalty on their violation instead
of being enforced.  Hard rows are handled by projection, soft rows by the
closed-form prox of w*(v + v^2).  The iteration matrix is refactored only when
rho changes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class QpResult:
    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    converged: bool


class QpError(RuntimeError):
    """Numerical failure while factorizing or iterating."""


def _prox_rows(v, lo, hi, w, rho):
    """Row-wise prox: clip for hard rows, hinge-penalty prox for soft rows."""
    clipped = np.clip(v, lo, hi)
    out = clipped.copy()
    soft = w > 0
    if soft.any():
        ws = w[soft]
        vs = v[soft]
        los = lo[soft]
        his = hi[soft]
        upper = np.maximum(0.0, (rho * (vs - his) - ws) / (rho + 2.0 * ws))
        lower = np.maximum(0.0, (rho * (los - vs) - ws) / (rho + 2.0 * ws))
        out[soft] = np.clip(vs, los, his) + upper - lower
    return out


def solve_qp(P, q, C=None, lo=None, hi=None, soft_w=None,
             x0=None, y0=None, lam0=None,
             rho: float = 10.0, sigma: float = 1e-6,
             max_iter: int = 500, tol: float = 1e-6) -> QpResult:
    """ADMM solve; returns the result even at max_iter (converged flag set)."""
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    n = q.shape[0]
    if C is None or C.shape[0] == 0:
        try:
            x = np.linalg.solve(P + sigma * np.eye(n), -q)
        except np.linalg.LinAlgError as exc:
            raise QpError(f"unconstrained solve failed: {exc}") from exc
        z = np.zeros(0)
        return QpResult(x, z, z, 0, 0.0, 0.0, True)

    C = np.asarray(C, dtype=float)
    m = C.shape[0]
    lo = np.full(m, -np.inf) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full(m, np.inf) if hi is None else np.asarray(hi, dtype=float)
    soft_w = np.zeros(m) if soft_w is None else np.asarray(soft_w, dtype=float)

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    y = C @ x if y0 is None else np.asarray(y0, dtype=float).copy()
    lam = np.zeros(m) if lam0 is None else np.asarray(lam0, dtype=float).copy()

    def factor(rho_):
        K = P + sigma * np.eye(n) + rho_ * (C.T @ C)
        if not np.isfinite(K).all():
            raise QpError("non-finite data in QP matrices")
        try:
            return np.linalg.inv(K)
        except np.linalg.LinAlgError as exc:
            raise QpError(f"QP iteration matrix is singular: {exc}") from exc

    Kinv = factor(rho)
    pri = dua = np.inf
    it = 0
    rho_updates = 0
    for it in range(1, max_iter + 1):
        rhs = sigma * x - q + C.T @ (rho * y - lam)
        x = Kinv @ rhs
        Cx = C @ x
        y = _prox_rows(Cx + lam / rho, lo, hi, soft_w, rho)
        lam = lam + rho * (Cx - y)
        if it % 10 == 0 or it == max_iter:
            pri = float(np.abs(Cx - y).max()) if m else 0.0
            grad = P @ x + q + C.T @ lam
            dua = float(np.abs(grad).max())
            scale_p = max(1.0, float(np.abs(Cx).max()), float(np.abs(y).max()))
            scale_d = max(1.0, float(np.abs(P @ x).max()), float(np.abs(q).max()))
            if pri < tol * scale_p and dua < tol * scale_d:
                return QpResult(x, y, lam, it, pri, dua, True)
            # crude rho adaptation, bounded number of refactorizations
            if rho_updates < 6 and it % 100 == 0:
                if pri > 10.0 * dua / scale_d * scale_p:
                    rho *= 5.0
                    Kinv = factor(rho)
                    rho_updates += 1
                elif dua / scale_d > 10.0 * pri / scale_p:
                    rho /= 5.0
                    Kinv = factor(rho)
                    rho_updates += 1
    return QpResult(x, y, lam, it, pri, dua, False)
