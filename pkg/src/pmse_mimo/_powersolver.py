"""Power allocation on the scaled simplex for MMSE virtual uplinks.

For fixed transmit directions (columns ``h_l`` of ``H V``) and MMSE
reception, the stream MSEs are ``e_l = 1 - q_l a_ll`` with
``A = Ht^H J^-1 Ht`` and ``J = Ht Q Ht^H + s2 I``. Two criteria are
supported: ``"pmse"`` minimizes ``sum(log e_l)`` and ``"smse"`` minimizes
``sum(e_l)``.

With ``B = |A|^2`` and ``dA_ij/dq_n = -A_in A_nj`` the Jacobian of the
MSEs is ``C[l, m] = -delta_lm a_ll + q_l B[l, m]``, from which the
gradient and Hessian below follow.
"""

from typing import NamedTuple, Optional

import numpy as np

from .model import MSE_FLOOR, hpd_inverse

__all__ = ["project_simplex", "Objective", "PowerSolution", "evaluate", "solve_simplex"]

ARMIJO = 1e-4
MAX_BACKTRACK = 50
ROUNDING = 1e-13


def project_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{x >= 0, sum(x) = total}``."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / idx > 0)[-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


class Objective(NamedTuple):
    value: float
    mse: np.ndarray
    grad: Optional[np.ndarray]
    hess: Optional[np.ndarray]


def evaluate(Ht: np.ndarray, q: np.ndarray, s2: float, criterion: str = "pmse",
             order: int = 1) -> Objective:
    """Objective, and optionally gradient (``order >= 1``) and Hessian (``order >= 2``)."""
    M, L = Ht.shape
    J = (Ht * q) @ Ht.conj().T + s2 * np.eye(M)
    # MMSE SINRs from the interference-plus-noise covariances avoid the
    # cancellation in 1 - q_l a_ll at high SNR.
    Jl = J[None, :, :] - q[:, None, None] * np.einsum("ml,nl->lmn", Ht, Ht.conj())
    x = np.linalg.solve(Jl, Ht.T[:, :, None])[:, :, 0]
    gamma = q * np.einsum("lm,lm->l", Ht.T.conj(), x).real
    mse = np.clip(1.0 / (1.0 + gamma), MSE_FLOOR, 1.0)
    value = (-float(np.sum(np.log1p(gamma))) if criterion == "pmse"
             else float(np.sum(mse)))
    if order < 1:
        return Objective(value, mse, None, None)

    A = Ht.conj().T @ hpd_inverse(J, s2) @ Ht
    d = A.diagonal().real
    B = np.abs(A) ** 2
    C = q[:, None] * B
    C[np.diag_indices_from(C)] = -d * mse  # = q d^2 - d without cancellation
    w = 1.0 / mse if criterion == "pmse" else np.ones_like(mse)
    grad = C.T @ w
    if order < 2:
        return Objective(value, mse, grad, None)

    WB = w[:, None] * B
    Y = A.conj().T @ ((w * q)[:, None] * A)
    hess = WB + WB.T - 2.0 * np.real(Y * A.T)
    if criterion == "pmse":
        hess -= C.T @ ((w * w)[:, None] * C)
    return Objective(value, mse, grad, 0.5 * (hess + hess.T))


class PowerSolution(NamedTuple):
    q: np.ndarray
    value: float
    mse: np.ndarray
    residual: float
    iterations: int
    converged: bool


def stationarity(q, grad, total):
    """Projected-gradient residual in simplex coordinates ``x = q / total``."""
    x = q / total
    return float(np.max(np.abs(x - project_simplex(x - total * grad, 1.0))))


def _newton_direction(q, obj, active_tol):
    free = np.flatnonzero(q > active_tol)
    n = free.size
    if n < 2:
        return None
    g = obj.grad
    lam = g[free].mean()
    fixed = np.setdiff1d(np.arange(q.size), free)
    if fixed.size and np.any(g[fixed] < lam - 1e-12 * (1 + abs(lam))):
        return None  # a zero-power stream wants to enter; let the gradient step handle it
    # Basis of the face {d_F : sum(d_F) = 0}.
    Z = np.vstack([np.eye(n - 1), -np.ones((1, n - 1))])
    Hf = obj.hess[np.ix_(free, free)]
    Hr = Z.T @ Hf @ Z
    gr = Z.T @ g[free]
    try:
        Lc = np.linalg.cholesky(Hr)
    except np.linalg.LinAlgError:
        return None
    y = np.linalg.solve(Lc.T, np.linalg.solve(Lc, -gr))
    d = np.zeros_like(q)
    d[free] = Z @ y
    if g @ d >= 0:
        return None
    return d


def solve_simplex(Ht: np.ndarray, q0: np.ndarray, s2: float, total: float,
                  criterion: str = "pmse", tol: float = 1e-8,
                  max_iter: int = 200, active_tol: float = 1e-12) -> PowerSolution:
    """Minimize the criterion over ``{q >= 0, sum(q) = total}`` starting from ``q0``.

    Alternates projected-gradient steps (Barzilai-Borwein length, Armijo
    backtracking) with Newton steps restricted to the current face when the
    reduced Hessian is positive definite. Every accepted step decreases the
    objective, so the result is never worse than the (sum-normalized) start.
    """
    q = np.maximum(np.asarray(q0, dtype=float), 0.0)
    s = q.sum()
    # Scaling all powers up raises every MMSE SINR, so the budget is used fully.
    q = q * (total / s) if s > 0 else np.full(q.size, total / q.size)
    clamp = active_tol * total

    obj = evaluate(Ht, q, s2, criterion, order=2)
    alpha = None
    residual = stationarity(q, obj.grad, total)
    it = 0
    while residual > tol and it < max_iter:
        it += 1
        g = obj.grad
        accepted = None

        d = _newton_direction(q, obj, clamp)
        if d is not None:
            ratios = np.where(d < 0, -q / np.where(d < 0, d, -1.0), np.inf)
            blocker = int(np.argmin(ratios))
            t = min(1.0, ratios[blocker])
            slope = g @ d
            for _ in range(MAX_BACKTRACK):
                trial = q + t * d
                if t == ratios[blocker]:
                    trial[blocker] = 0.0
                trial = np.maximum(trial, 0.0)
                trial *= total / trial.sum()
                cand = evaluate(Ht, trial, s2, criterion, order=2)
                if cand.value <= obj.value + ARMIJO * t * slope:
                    accepted = (trial, cand)
                    break
                if t == 1.0 and -slope < ROUNDING * (1.0 + abs(obj.value)):
                    # Decrease below resolution of the objective: judge by the residual.
                    if (cand.value <= obj.value + ROUNDING * abs(obj.value)
                            and stationarity(trial, cand.grad, total) < residual):
                        accepted = (trial, cand)
                        break
                t *= 0.5

        if accepted is None:
            if alpha is None:
                alpha = total / max(np.max(np.abs(g - g.mean())), 1e-300) * 0.1
            a = alpha
            for _ in range(MAX_BACKTRACK):
                trial = project_simplex(q - a * g, total)
                step = trial - q
                if not np.any(step):
                    break
                cand = evaluate(Ht, trial, s2, criterion, order=2)
                if cand.value <= obj.value + ARMIJO * (g @ step):
                    accepted = (trial, cand)
                    break
                a *= 0.5

        if accepted is None:
            break  # no further decrease representable in floating point
        trial, cand = accepted
        sk, yk = trial - q, cand.grad - g
        sy = sk @ yk
        alpha = (sk @ sk) / sy if sy > 0 else (alpha or 1.0) * 2.0
        q, obj = trial, cand
        residual = stationarity(q, obj.grad, total)

    small = (q > 0) & (q < clamp)
    if np.any(small):
        # Drop vanishing powers unless that costs objective value.
        trial = np.where(small, 0.0, q)
        trial *= total / trial.sum()
        cand = evaluate(Ht, trial, s2, criterion, order=1)
        if cand.value <= obj.value:
            q, obj = trial, cand
            residual = stationarity(q, obj.grad, total)
    return PowerSolution(q, obj.value, obj.mse, residual, it, residual <= tol)


def solve_with_face_restarts(Ht: np.ndarray, q0: np.ndarray, s2: float, total: float,
                             criterion: str = "pmse", max_enumerated: int = 6,
                             **kw) -> PowerSolution:
    """:func:`solve_simplex` with restarts on the faces of the simplex.

    The criterion is not convex in ``q``; stationary points on different
    faces (subsets of streams switched on) can differ widely. Up to
    ``max_enumerated`` streams every support is tried from uniform powers.
    Beyond that a greedy search removes one active stream at a time from
    the incumbent while this helps. The best point found is returned, so
    the result is never worse than the start ``q0``.
    """
    best = solve_simplex(Ht, q0, s2, total, criterion, **kw)

    def better(cand):
        return cand.value < best.value - 1e-12 * abs(best.value)

    L = best.q.size
    if L <= max_enumerated:
        for mask in range(1, 2 ** L):
            support = np.array([(mask >> i) & 1 for i in range(L)], dtype=float)
            cand = solve_simplex(Ht, support, s2, total, criterion, **kw)
            if better(cand):
                best = cand
        return best
    improved = True
    while improved:
        improved = False
        active = np.flatnonzero(best.q > 0)
        if active.size < 2:
            break
        for i in active:
            start = best.q.copy()
            start[i] = 0.0
            cand = solve_simplex(Ht, start, s2, total, criterion, **kw)
            if better(cand):
                best, improved = cand, True
                break
    return best
