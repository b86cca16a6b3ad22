"""Alternating transceiver optimization shared by the PMSE and SMSE solvers.

One outer iteration performs four updates, each optimal for one block of
variables with the other three fixed:

1. MMSE virtual uplink receivers, used as the downlink precoder ``U``;
2. downlink powers ``p`` reproducing the uplink SINRs (MSE duality);
3. MMSE downlink decoders ``V``;
4. virtual uplink powers ``q`` minimizing the criterion for fixed ``V``.

The criterion is evaluated after every update from the SINRs of the link
direction that update concerns, so the recorded sequence is
non-increasing up to rounding.
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import _powersolver
from .errors import InfeasibleTargetError, NumericError
from .model import (MSE_FLOOR, ChannelSet, FilterSet, PowerAllocation, StreamMetrics,
                    SystemConfig, hpd_inverse)

log = logging.getLogger(__name__)

INITIALIZATIONS = ("uniform_powers", "smse_warm_start")
MAX_JUMP_BACKTRACK = 3


@dataclass(frozen=True)
class SolverOptions:
    """Stopping rules and numerical settings of the alternating solver.

    ``epsilon`` bounds the relative decrease of the criterion between two
    outer iterations at which the solver stops.
    """

    epsilon: float = 1e-6
    max_outer_iterations: int = 500
    power_solver_tolerance: float = 1e-8
    power_solver_max_iterations: int = 200
    initialization: str = "uniform_powers"
    acceleration: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_outer_iterations < 1 or self.power_solver_max_iterations < 1:
            raise ValueError("iteration caps must be >= 1")
        if not self.power_solver_tolerance > 0:
            raise ValueError("power_solver_tolerance must be positive")
        if self.initialization not in INITIALIZATIONS:
            raise ValueError(f"initialization must be one of {INITIALIZATIONS}")


@dataclass(frozen=True)
class SolverTrace:
    """Convergence history of one solve.

    ``values[0]`` is the criterion at the starting point and ``values[i]``
    the value after outer iteration ``i`` (log-PMSE for the PMSE solver, sum
    MSE for the SMSE solver). ``substeps[i - 1]`` holds the value after each
    of the four updates of iteration ``i`` (NaN for skipped updates).
    """

    criterion: str
    values: Tuple[float, ...]
    sum_rates: Tuple[float, ...]
    substeps: np.ndarray
    iterations: int
    reason: str
    power_cap_hits: int = 0

    @property
    def converged(self) -> bool:
        return self.reason == "converged"

    @property
    def path(self) -> np.ndarray:
        """Criterion after every executed update, in order, from the start value."""
        steps = self.substeps[~np.isnan(self.substeps)]
        return np.concatenate([[self.values[0]], steps])


class Solution(NamedTuple):
    filters: FilterSet
    powers: PowerAllocation
    metrics: StreamMetrics
    trace: SolverTrace


# ---------------------------------------------------------------------------
# block updates on raw arrays

def criterion_from_sinr(criterion: str, gamma: np.ndarray) -> float:
    if criterion == "pmse":
        return -float(np.sum(np.log1p(gamma)))
    return float(np.sum(1.0 / (1.0 + gamma)))


def relative_decrease(criterion: str, old: float, new: float) -> float:
    if criterion == "pmse":
        return -float(np.expm1(new - old))
    return (old - new) / old


def gains(Ht: np.ndarray, U: np.ndarray) -> np.ndarray:
    """``G[i, m] = |h_i^H u_m|^2``."""
    return np.abs(Ht.conj().T @ U) ** 2


def sinr_uplink(G, q, s2):
    received = q[:, None] * G
    signal = np.diag(received)
    return signal / (received.sum(axis=0) - signal + s2)


def sinr_downlink(G, p, s2):
    received = G * p[None, :]
    signal = np.diag(received)
    return signal / (received.sum(axis=1) - signal + s2)


def effective(H_k, V):
    return np.concatenate([h @ v for h, v in zip(H_k, V)], axis=1)


def normalize_columns(X, previous):
    """Unit-norm columns; zero columns keep the previous column (inactive)."""
    norms = np.linalg.norm(X, axis=0)
    live = norms > 0
    out = np.array(previous, dtype=complex, copy=True)
    out[:, live] = X[:, live] / norms[live]
    return out, live


def mmse_precoder(Ht, q, s2, U_prev):
    J = (Ht * q) @ Ht.conj().T + s2 * np.eye(Ht.shape[0])
    Ut = hpd_inverse(J, s2) @ (Ht * np.sqrt(q))
    return normalize_columns(Ut, U_prev)


def mmse_decoders(H_k, U, p, s2, slices, V_prev):
    Up = U * np.sqrt(p)
    V, live = [], []
    for h, sl, v_prev in zip(H_k, slices, V_prev):
        A = h.conj().T @ Up
        Jk = A @ A.conj().T + s2 * np.eye(h.shape[1])
        v, ok = normalize_columns(hpd_inverse(Jk, s2) @ A[:, sl], v_prev)
        V.append(v)
        live.append(ok)
    return V, np.concatenate(live)


def dual_powers(G, gamma, s2, to_downlink=True, tol=1e-9):
    """Powers achieving SINRs ``gamma`` in the other link direction.

    Solves ``(D^-1 - Psi) x = s2 1`` over the streams with positive SINR,
    where ``D^-1 = diag(G_ii / gamma_i)`` and ``Psi`` is the off-diagonal
    part of ``G`` (downlink) or of its transpose (virtual uplink).
    """
    active = (gamma > 0) & (np.diag(G) > 0)
    x = np.zeros(gamma.size)
    if not np.any(active):
        return x
    Ga = G[np.ix_(active, active)]
    coupling = -Ga if to_downlink else -Ga.T
    coupling[np.diag_indices_from(coupling)] = np.diag(Ga) / gamma[active]
    try:
        xa = np.linalg.solve(coupling, np.full(Ga.shape[0], s2))
    except np.linalg.LinAlgError as exc:
        raise InfeasibleTargetError("coupling matrix is singular") from exc
    scale = max(1.0, float(np.max(np.abs(xa))))
    if not np.all(np.isfinite(xa)) or np.any(xa < -tol * scale):
        bad = int(np.flatnonzero(active)[np.argmin(xa)])
        raise InfeasibleTargetError("SINR targets need negative power", stream=bad)
    x[active] = np.maximum(xa, 0.0)
    return x


def initial_decoders(ch: ChannelSet, cfg: SystemConfig) -> List[np.ndarray]:
    """Dominant right singular vectors of each ``H_k``."""
    V = []
    for h, l_k in zip(ch.H_k, cfg.n_streams):
        _, _, vh = np.linalg.svd(h)
        V.append(vh.conj().T[:, :l_k])
    return V


def _flatten(V):
    return np.concatenate([v.ravel() for v in V])


def _extrapolate(H_k, V, history, q, s2, P, criterion, opts, target):
    """Squared-extrapolation jump from three successive decoder iterates.

    Returns ``(V, Ht, q, solution)`` at the extrapolated decoders with the
    powers re-optimized, or None when the iterates carry no curvature.
    """
    s0, s1, s2_ = history
    r = s1 - s0
    w = s2_ - 2.0 * s1 + s0
    nw = np.linalg.norm(w)
    if nw == 0:
        return None
    alpha = min(-np.linalg.norm(r) / nw, -1.0)
    best = None
    for _ in range(MAX_JUMP_BACKTRACK):
        if alpha > -1.0 + 1e-3:
            break
        flat = s0 - 2.0 * alpha * r + alpha ** 2 * w
        V_new, start = [], 0
        for v in V:
            block = flat[start:start + v.size].reshape(v.shape)
            start += v.size
            block, _ = normalize_columns(block, v)
            V_new.append(block)
        Ht = effective(H_k, V_new)
        sol = _powersolver.solve_simplex(Ht, q, s2, P, criterion,
                                         tol=opts.power_solver_tolerance,
                                         max_iter=opts.power_solver_max_iterations)
        if sol.value < target:
            return V_new, Ht, sol.q, sol
        alpha = 0.5 * (alpha - 1.0)
    return best


# ---------------------------------------------------------------------------

def alternate(cfg: SystemConfig, ch: ChannelSet, criterion: str, opts: SolverOptions,
              V0: Optional[Sequence[np.ndarray]] = None, q0=None,
              U0: Optional[np.ndarray] = None, p0=None) -> Solution:
    """Run the four-step iteration until the relative decrease drops below epsilon.

    Starts from ``(V0, q0)`` at update 1, or from ``(U0, p0)`` at update 3
    when those are given (warm start from another downlink design).
    """
    ch.check(cfg)
    s2, P, L = cfg.noise_power, cfg.p_max, cfg.total_streams
    slices = cfg.stream_slices
    warm = U0 is not None
    V = [np.asarray(v, dtype=complex) for v in (V0 if V0 is not None else initial_decoders(ch, cfg))]
    Ht = effective(ch.H_k, V)
    if warm:
        U = np.asarray(U0, dtype=complex)
        p = np.asarray(p0, dtype=float)
        q = np.zeros(L)
        gamma = sinr_downlink(gains(Ht, U), p, s2)
        value = criterion_from_sinr(criterion, gamma)
        rate = float(np.sum(np.log2(1.0 + gamma)))
    else:
        q = np.full(L, P / L) if q0 is None else np.asarray(q0, dtype=float)
        U = Ht / np.linalg.norm(Ht, axis=0)
        p = np.zeros(L)
        start = _powersolver.evaluate(Ht, q, s2, criterion, order=0)
        value = start.value
        rate = -float(np.sum(np.log2(start.mse)))

    values = [value]
    rates = [rate]
    substeps = []
    history = []
    cap_hits = 0
    reason = "iteration_cap"
    it = 0
    try:
        while it < opts.max_outer_iterations:
            it += 1
            row = [np.nan] * 5
            if not (warm and it == 1):
                U, _ = mmse_precoder(Ht, q, s2, U)
                G = gains(Ht, U)
                gamma = sinr_uplink(G, q, s2)
                row[0] = criterion_from_sinr(criterion, gamma)
                p = dual_powers(G, gamma, s2, to_downlink=True)
                row[1] = criterion_from_sinr(criterion, sinr_downlink(G, p, s2))

            V, _ = mmse_decoders(ch.H_k, U, p, s2, slices, V)
            Ht = effective(ch.H_k, V)
            G = gains(Ht, U)
            gamma = sinr_downlink(G, p, s2)
            row[2] = criterion_from_sinr(criterion, gamma)

            q_start = dual_powers(G, gamma, s2, to_downlink=False)
            sol = _powersolver.solve_simplex(
                Ht, q_start, s2, P, criterion, tol=opts.power_solver_tolerance,
                max_iter=opts.power_solver_max_iterations)
            if not sol.converged:
                cap_hits += 1
            q = sol.q
            row[3] = sol.value
            if opts.acceleration:
                history.append(_flatten(V))
                if len(history) == 3:
                    jump = _extrapolate(ch.H_k, V, history, q, s2, P, criterion, opts, sol.value)
                    if jump is not None and jump[3].value < sol.value:
                        V, Ht, q, sol = jump
                        q = sol.q
                        row[4] = sol.value
                    history = [_flatten(V)]
            substeps.append(row)
            values.append(sol.value)
            rates.append(-float(np.sum(np.log2(sol.mse))))
            if relative_decrease(criterion, values[-2], values[-1]) < opts.epsilon:
                reason = "converged"
                break

        # Final downlink configuration for the last (V, q).
        U, _ = mmse_precoder(Ht, q, s2, U)
        G = gains(Ht, U)
        gamma_ul = sinr_uplink(G, q, s2)
        p = dual_powers(G, gamma_ul, s2, to_downlink=True)
        gamma_dl = sinr_downlink(G, p, s2)
    except NumericError as exc:
        exc.state = {"U": U, "V": V, "q": q, "p": p, "iteration": it}
        raise
    except np.linalg.LinAlgError as exc:
        raise NumericError(str(exc), state={"U": U, "V": V, "q": q, "p": p,
                                            "iteration": it}) from exc

    if cap_hits:
        log.debug("power subproblem hit its iteration cap %d times", cap_hits)
    filters = FilterSet(U, tuple(V))
    powers = PowerAllocation(q, p)
    metrics = StreamMetrics(gamma_ul, gamma_dl, np.clip(1.0 / (1.0 + gamma_dl), MSE_FLOOR, 1.0))
    trace = SolverTrace(
        criterion=criterion,
        values=tuple(values),
        sum_rates=tuple(rates),
        substeps=np.array(substeps, dtype=float).reshape(-1, 5),
        iterations=it,
        reason=reason,
        power_cap_hits=cap_hits,
    )
    return Solution(filters, powers, metrics, trace)
