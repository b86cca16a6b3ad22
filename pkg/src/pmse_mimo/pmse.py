"""Sum-rate maximization by minimizing the product of stream MSEs.

Under MMSE reception every stream satisfies ``mse = 1 / (1 + sinr)``, so
``sum(log2(1 + sinr)) = -log2(prod(mse))`` and minimizing the PMSE
maximizes the (Gaussian-codebook) sum rate. :func:`solve` alternates MMSE
filter updates on both link directions with the uplink/downlink power
duality and a non-convex power allocation on the virtual uplink.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import _alternating as alt
from . import _powersolver
from ._alternating import Solution, SolverOptions, SolverTrace
from ._powersolver import PowerSolution
from .errors import NumericError, StructuralError
from .model import (ChannelSet, FilterSet, SystemConfig, _check_power, _check_U, _check_V,
                    effective_channel)

__all__ = [
    "SolverOptions",
    "SolverTrace",
    "Solution",
    "PowerSolution",
    "CouplingDecomposition",
    "coupling_decomposition",
    "update_downlink_precoder",
    "duality_power_map",
    "uplink_power_map",
    "update_uplink_precoder",
    "uplink_power_allocation",
    "solve",
    "smse_warm_start",
]


@dataclass(frozen=True)
class CouplingDecomposition:
    """Cross-coupling matrix ``Psi`` (zero diagonal) and diagonal ``D``.

    ``Psi[i, j] = |h_i^H u_j|^2`` for ``i != j``, where ``h_i`` is column
    ``i`` of ``H V``; ``D[j, j] = gamma_j / |h_j^H u_j|^2``.
    """

    Psi: np.ndarray
    D: np.ndarray


def coupling_decomposition(cfg: SystemConfig, ch: ChannelSet, U: np.ndarray,
                           V: Sequence[np.ndarray], gamma) -> CouplingDecomposition:
    ch.check(cfg)
    _check_U(cfg, U)
    _check_V(cfg, V)
    gamma = np.asarray(gamma, dtype=float)
    G = alt.gains(effective_channel(ch, V), U)
    Psi = G.copy()
    np.fill_diagonal(Psi, 0.0)
    return CouplingDecomposition(Psi, np.diag(gamma / np.diag(G)))


def update_downlink_precoder(cfg: SystemConfig, ch: ChannelSet, V: Sequence[np.ndarray],
                             q, U_prev: Optional[np.ndarray] = None
                             ) -> Tuple[FilterSet, np.ndarray]:
    """MMSE virtual uplink receivers ``J^-1 H_k v_kj sqrt(q_kj)``, normalized.

    Returns the new filters and a mask of active streams. Streams with zero
    power keep their column of ``U_prev`` (matched filter if not given).
    """
    ch.check(cfg)
    _check_V(cfg, V)
    q = _check_power(cfg, q, "q")
    Ht = effective_channel(ch, V)
    if U_prev is None:
        U_prev = Ht / _nonzero_norms(Ht)
    _check_U(cfg, U_prev)
    U, live = alt.mmse_precoder(Ht, q, cfg.noise_power, U_prev)
    return FilterSet(U, tuple(V)), live


def duality_power_map(cfg: SystemConfig, ch: ChannelSet, U: np.ndarray,
                      V: Sequence[np.ndarray], gamma_targets) -> np.ndarray:
    """Downlink powers ``p = sigma^2 (D^-1 - Psi)^-1 1`` meeting uplink SINR targets.

    Streams with a zero target get zero power. Raises
    :class:`~pmse_mimo.errors.InfeasibleTargetError` when the targets would
    need negative power.
    """
    ch.check(cfg)
    _check_U(cfg, U)
    _check_V(cfg, V)
    gamma = np.asarray(gamma_targets, dtype=float)
    if gamma.shape != (cfg.total_streams,) or np.any(gamma < 0):
        raise StructuralError("gamma_targets must be a nonnegative length-L vector")
    G = alt.gains(effective_channel(ch, V), U)
    return alt.dual_powers(G, gamma, cfg.noise_power, to_downlink=True)


def uplink_power_map(cfg: SystemConfig, ch: ChannelSet, U: np.ndarray,
                     V: Sequence[np.ndarray], gamma_targets) -> np.ndarray:
    """Virtual uplink powers reproducing downlink SINR targets (the reverse map)."""
    ch.check(cfg)
    _check_U(cfg, U)
    _check_V(cfg, V)
    gamma = np.asarray(gamma_targets, dtype=float)
    if gamma.shape != (cfg.total_streams,) or np.any(gamma < 0):
        raise StructuralError("gamma_targets must be a nonnegative length-L vector")
    G = alt.gains(effective_channel(ch, V), U)
    return alt.dual_powers(G, gamma, cfg.noise_power, to_downlink=False)


def update_uplink_precoder(cfg: SystemConfig, ch: ChannelSet, U: np.ndarray, p,
                           V_prev: Optional[Sequence[np.ndarray]] = None
                           ) -> Tuple[FilterSet, np.ndarray]:
    """MMSE downlink decoders ``J_k^-1 H_k^H U_k sqrt(P_k)``, columns normalized."""
    ch.check(cfg)
    _check_U(cfg, U)
    p = _check_power(cfg, p, "p")
    if V_prev is None:
        V_prev = alt.initial_decoders(ch, cfg)
    _check_V(cfg, V_prev)
    V, live = alt.mmse_decoders(ch.H_k, U, p, cfg.noise_power, cfg.stream_slices, V_prev)
    return FilterSet(U, tuple(V)), live


def uplink_power_allocation(cfg: SystemConfig, ch: ChannelSet, V: Sequence[np.ndarray],
                            q_init, opts: SolverOptions = SolverOptions(),
                            face_restarts: bool = True) -> PowerSolution:
    """Locally PMSE-optimal virtual uplink powers for fixed precoders ``V``.

    The subproblem is non-convex; the result is a stationary point that is
    never worse than ``q_init``. With ``face_restarts`` the solver also
    restarts on the faces of the power simplex (streams switched off) and
    keeps the best point.
    ``converged`` is False when the iteration cap was reached first (the
    best iterate is returned).
    """
    ch.check(cfg)
    _check_V(cfg, V)
    q_init = _check_power(cfg, q_init, "q_init")
    Ht = effective_channel(ch, V)
    run = _powersolver.solve_with_face_restarts if face_restarts else _powersolver.solve_simplex
    return run(
        Ht, q_init, cfg.noise_power, cfg.p_max, "pmse",
        tol=opts.power_solver_tolerance, max_iter=opts.power_solver_max_iterations)


def solve(cfg: SystemConfig, ch: ChannelSet, opts: SolverOptions = SolverOptions()) -> Solution:
    """Design ``U``, ``V``, ``p`` and ``q`` minimizing the PMSE.

    Returns ``(filters, powers, metrics, trace)``; the metrics describe the
    final downlink configuration.
    """
    ch.check(cfg)
    _require_gain(cfg, ch)
    if opts.initialization == "smse_warm_start":
        from .baselines import smse_solve
        warm = smse_solve(cfg, ch, opts)
        return alt.alternate(cfg, ch, "pmse", opts, V0=warm.filters.V,
                             U0=warm.filters.U, p0=warm.powers.p)
    return alt.alternate(cfg, ch, "pmse", opts)


def smse_warm_start(cfg: SystemConfig, ch: ChannelSet,
                    opts: SolverOptions = SolverOptions()) -> Tuple[np.ndarray, np.ndarray]:
    """Downlink precoder and powers of the SMSE design, used to seed :func:`solve`."""
    from .baselines import smse_solve
    res = smse_solve(cfg, ch, opts)
    return res.filters.U, res.powers.p


def _nonzero_norms(X):
    n = np.linalg.norm(X, axis=0)
    return np.where(n > 0, n, 1.0)


def _require_gain(cfg, ch):
    norms = np.array([np.linalg.norm(h) for h in ch.H_k])
    if np.any(norms == 0):
        raise NumericError(f"user {int(np.argmin(norms))} has an all-zero channel")
