"""System model of the multiuser MIMO downlink and its virtual uplink.

Orientation convention: the channel of user ``k`` is stored as the
``M x N_k`` matrix ``H_k``; the physical downlink channel is ``H_k^H``.
Streams are indexed user-major, i.e. stream ``(k, j)`` sits at position
``sum(L_1..L_{k-1}) + j`` of every length-``L`` vector.

All functions are pure; they never modify their inputs.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Tuple

import numpy as np
import scipy.linalg

from .errors import DomainError, NumericError, StructuralError

__all__ = [
    "SystemConfig",
    "ChannelSet",
    "FilterSet",
    "PowerAllocation",
    "StreamMetrics",
    "effective_channel",
    "coupling_gains",
    "hpd_inverse",
    "uplink_covariance",
    "uplink_sinr",
    "downlink_sinr",
    "uplink_mse",
    "downlink_mse",
    "mse_sinr_identity_check",
    "sum_rate",
    "stream_metrics",
]

MAX_CONDITION = 1e12
MSE_FLOOR = 1e-300
UNIT_NORM_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SystemConfig:
    """Antenna, stream and power configuration of the downlink.

    Parameters
    ----------
    n_users : int
        Number of users ``K``.
    n_tx : int
        Number of base station antennas ``M``.
    n_rx : tuple of int
        Receive antennas ``N_k`` per user.
    n_streams : tuple of int
        Data streams ``L_k`` per user.
    noise_power : float
        Noise variance per receive antenna (linear).
    p_max : float
        Sum transmit power budget (linear).
    """

    n_users: int
    n_tx: int
    n_rx: Tuple[int, ...]
    n_streams: Tuple[int, ...]
    noise_power: float = 1.0
    p_max: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "n_rx", tuple(int(n) for n in self.n_rx))
        object.__setattr__(self, "n_streams", tuple(int(n) for n in self.n_streams))
        if self.n_users < 1 or self.n_tx < 1:
            raise StructuralError("user and antenna counts must be >= 1")
        if len(self.n_rx) != self.n_users or len(self.n_streams) != self.n_users:
            raise StructuralError(
                f"need {self.n_users} receive-antenna and stream counts, got "
                f"{len(self.n_rx)} and {len(self.n_streams)}")
        if min(self.n_rx) < 1 or min(self.n_streams) < 1:
            raise StructuralError("per-user counts must be >= 1")
        if any(l > n for l, n in zip(self.n_streams, self.n_rx)):
            raise StructuralError("each user needs L_k <= N_k")
        if self.total_streams > self.n_tx:
            raise StructuralError(
                f"L = {self.total_streams} streams exceed M = {self.n_tx} antennas")
        if not (np.isfinite(self.noise_power) and self.noise_power > 0):
            raise DomainError("noise_power must be positive and finite")
        if not (np.isfinite(self.p_max) and self.p_max > 0):
            raise DomainError("p_max must be positive and finite")

    @classmethod
    def symmetric(cls, n_users, n_tx, n_rx, n_streams, noise_power=1.0, p_max=1.0):
        """Configuration where every user has the same antenna and stream count."""
        return cls(n_users, n_tx, (n_rx,) * n_users, (n_streams,) * n_users,
                   noise_power, p_max)

    @property
    def total_streams(self) -> int:
        return sum(self.n_streams)

    @property
    def total_rx(self) -> int:
        return sum(self.n_rx)

    @property
    def snr_db(self) -> float:
        return 10.0 * np.log10(self.p_max / self.noise_power)

    @cached_property
    def stream_user(self) -> np.ndarray:
        """User index of every stream."""
        return np.repeat(np.arange(self.n_users), self.n_streams)

    @cached_property
    def stream_slices(self) -> Tuple[slice, ...]:
        """Slice of the length-``L`` stream axis owned by each user."""
        edges = np.concatenate([[0], np.cumsum(self.n_streams)])
        return tuple(slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]))

    def with_noise(self, noise_power: float) -> "SystemConfig":
        return SystemConfig(self.n_users, self.n_tx, self.n_rx, self.n_streams,
                            noise_power, self.p_max)


@dataclass(frozen=True)
class ChannelSet:
    """Per-user channel matrices ``H_k`` of shape ``M x N_k``."""

    H_k: Tuple[np.ndarray, ...]

    def __post_init__(self):
        mats = tuple(_frozen(h) for h in self.H_k)
        if not mats:
            raise StructuralError("at least one user channel is required")
        for k, h in enumerate(mats):
            if h.ndim != 2 or h.shape[0] != mats[0].shape[0]:
                raise StructuralError(f"channel of user {k} has shape {h.shape}")
            if not np.all(np.isfinite(h)):
                raise NumericError(f"channel of user {k} has non-finite entries")
        object.__setattr__(self, "H_k", mats)

    @classmethod
    def from_matrix(cls, H: np.ndarray, n_rx: Sequence[int]) -> "ChannelSet":
        """Split the concatenated ``M x N`` matrix into per-user blocks."""
        H = np.asarray(H)
        if H.ndim != 2 or H.shape[1] != sum(n_rx):
            raise StructuralError(f"H has shape {H.shape}, expected N = {sum(n_rx)} columns")
        edges = np.cumsum([0, *n_rx])
        return cls(tuple(H[:, a:b] for a, b in zip(edges[:-1], edges[1:])))

    @cached_property
    def H(self) -> np.ndarray:
        return np.concatenate(self.H_k, axis=1)

    def check(self, cfg: SystemConfig) -> None:
        if len(self.H_k) != cfg.n_users:
            raise StructuralError(f"{len(self.H_k)} channels for {cfg.n_users} users")
        for k, h in enumerate(self.H_k):
            if h.shape != (cfg.n_tx, cfg.n_rx[k]):
                raise StructuralError(
                    f"channel of user {k} has shape {h.shape}, "
                    f"expected {(cfg.n_tx, cfg.n_rx[k])}")


@dataclass(frozen=True)
class FilterSet:
    """Downlink precoder ``U`` (``M x L``) and per-user decoders ``V_k`` (``N_k x L_k``).

    ``V_k`` doubles as the virtual uplink precoder and ``U`` as the virtual
    uplink receiver. Every column has unit Euclidean norm.
    """

    U: np.ndarray
    V: Tuple[np.ndarray, ...]

    def __post_init__(self):
        U = _frozen(self.U)
        V = tuple(_frozen(v) for v in self.V)
        for name, a in [("U", U), *((f"V[{k}]", v) for k, v in enumerate(V))]:
            norms = np.linalg.norm(a, axis=0)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
                raise StructuralError(f"columns of {name} must have unit norm")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    def check(self, cfg: SystemConfig) -> None:
        _check_U(cfg, self.U)
        _check_V(cfg, self.V)

    def block_diagonal_V(self) -> np.ndarray:
        """The global ``N x L`` block-diagonal matrix ``V``."""
        return scipy.linalg.block_diag(*self.V)


@dataclass(frozen=True)
class PowerAllocation:
    """Virtual uplink powers ``q`` and downlink powers ``p`` (length ``L``)."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        for name in ("q", "p"):
            a = np.array(getattr(self, name), dtype=float, copy=True)
            if a.ndim != 1 or not np.all(np.isfinite(a)):
                raise StructuralError(f"{name} must be a finite vector")
            if np.any(a < 0):
                raise DomainError(f"{name} must be nonnegative")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.q.shape != self.p.shape:
            raise StructuralError("q and p must have the same length")

    def check(self, cfg: SystemConfig, slack: float = 1e-10) -> None:
        for name in ("q", "p"):
            _check_power(cfg, getattr(self, name), name, slack)


@dataclass(frozen=True)
class StreamMetrics:
    """Per-stream link quality of a transceiver design."""

    gamma_ul: np.ndarray
    gamma_dl: np.ndarray
    mse: np.ndarray
    rate: np.ndarray = field(init=False)
    log_pmse: float = field(init=False)
    sum_rate: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "rate", np.log2(1.0 + np.asarray(self.gamma_dl)))
        object.__setattr__(self, "log_pmse", float(np.sum(np.log(self.mse))))
        object.__setattr__(self, "sum_rate", float(np.sum(self.rate)))

    @property
    def pmse(self) -> float:
        return float(np.exp(self.log_pmse))


# ---------------------------------------------------------------------------
# validation helpers

def _check_U(cfg, U):
    if np.shape(U) != (cfg.n_tx, cfg.total_streams):
        raise StructuralError(
            f"U has shape {np.shape(U)}, expected {(cfg.n_tx, cfg.total_streams)}")


def _check_V(cfg, V):
    if len(V) != cfg.n_users:
        raise StructuralError(f"{len(V)} decoder blocks for {cfg.n_users} users")
    for k, v in enumerate(V):
        if np.shape(v) != (cfg.n_rx[k], cfg.n_streams[k]):
            raise StructuralError(
                f"V[{k}] has shape {np.shape(v)}, "
                f"expected {(cfg.n_rx[k], cfg.n_streams[k])}")


def _check_power(cfg, x, name, slack=1e-10):
    x = np.asarray(x, dtype=float)
    if x.shape != (cfg.total_streams,):
        raise StructuralError(f"{name} has shape {x.shape}, expected ({cfg.total_streams},)")
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{name} has non-finite entries")
    if np.any(x < 0):
        raise DomainError(f"{name} must be nonnegative")
    if x.sum() > cfg.p_max * (1.0 + slack) + slack:
        raise DomainError(f"sum of {name} = {x.sum()} exceeds p_max = {cfg.p_max}")
    return x


# ---------------------------------------------------------------------------
# linear algebra kernels

def hpd_inverse(A: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Inverse of a Hermitian positive-definite matrix via Cholesky.

    ``floor`` is a known lower bound on the smallest eigenvalue (e.g. the
    noise power); it makes the condition check free in the common case.
    """
    A = 0.5 * (A + A.conj().T)
    bound = np.inf if floor <= 0 else np.trace(A).real / floor
    if bound > MAX_CONDITION:
        w = np.linalg.eigvalsh(A)
        if w[0] <= 0 or w[-1] / w[0] > MAX_CONDITION:
            raise NumericError(f"matrix is singular or ill-conditioned (eigenvalues {w[0]:.3g}..{w[-1]:.3g})")
    try:
        c = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError("matrix is not positive definite") from exc
    inv = scipy.linalg.cho_solve(c, np.eye(A.shape[0], dtype=A.dtype), check_finite=False)
    return 0.5 * (inv + inv.conj().T)


def effective_channel(ch: ChannelSet, V: Sequence[np.ndarray]) -> np.ndarray:
    """``M x L`` matrix ``H V`` whose column ``(k, j)`` is ``H_k v_kj``."""
    return np.concatenate([h @ v for h, v in zip(ch.H_k, V)], axis=1)


def coupling_gains(ch: ChannelSet, U: np.ndarray, V: Sequence[np.ndarray]) -> np.ndarray:
    """Gain matrix ``G[i, m] = |h_i^H u_m|^2`` with ``h_i`` the columns of ``H V``.

    Row ``i`` lists the downlink powers seen by the decoder of stream ``i``;
    column ``m`` lists the virtual uplink powers collected by receiver ``u_m``.
    """
    return np.abs(effective_channel(ch, V).conj().T @ U) ** 2


def _vec(cfg, x, name):
    return _check_power(cfg, x, name, slack=np.inf)


# ---------------------------------------------------------------------------
# link quantities

def uplink_covariance(cfg: SystemConfig, ch: ChannelSet, V: Sequence[np.ndarray],
                      q) -> np.ndarray:
    """Virtual uplink receive covariance ``J = H V Q V^H H^H + sigma^2 I``."""
    ch.check(cfg)
    _check_V(cfg, V)
    q = _vec(cfg, q, "q")
    Ht = effective_channel(ch, V)
    J = (Ht * q) @ Ht.conj().T + cfg.noise_power * np.eye(cfg.n_tx)
    if not np.all(np.isfinite(J)):
        raise NumericError("uplink covariance has non-finite entries")
    return 0.5 * (J + J.conj().T)


def uplink_sinr(cfg: SystemConfig, ch: ChannelSet, U: np.ndarray,
                V: Sequence[np.ndarray], q) -> np.ndarray:
    """Virtual uplink SINR of every stream for receivers ``U``."""
    ch.check(cfg)
    _check_U(cfg, U)
    _check_V(cfg, V)
    q = _vec(cfg, q, "q")
    G = coupling_gains(ch, U, V)
    received = q[:, None] * G  # [i, l]: power of stream i at receiver l
    signal = np.diag(received)
    noise = cfg.noise_power * np.sum(np.abs(U) ** 2, axis=0)
    denom = received.sum(axis=0) - signal + noise
    bad = np.flatnonzero(~(denom > 0))
    if bad.size:
        raise NumericError("interference-plus-noise covariance is singular", stream=int(bad[0]))
    return signal / denom


def downlink_sinr(cfg: SystemConfig, ch: ChannelSet, U: np.ndarray,
                  V: Sequence[np.ndarray], p) -> np.ndarray:
    """Downlink SINR of every stream for precoder ``U`` and decoders ``V``."""
    ch.check(cfg)
    _check_U(cfg, U)
    _check_V(cfg, V)
    p = _vec(cfg, p, "p")
    G = coupling_gains(ch, U, V)
    received = G * p[None, :]  # [i, m]: power of stream m at decoder i
    signal = np.diag(received)
    noise = cfg.noise_power * np.concatenate([np.sum(np.abs(v) ** 2, axis=0) for v in V])
    return signal / (received.sum(axis=1) - signal + noise)


def uplink_mse(cfg: SystemConfig, ch: ChannelSet, V: Sequence[np.ndarray], q) -> np.ndarray:
    """Per-stream MSE of the virtual uplink under MMSE reception."""
    q = _vec(cfg, q, "q")
    J = uplink_covariance(cfg, ch, V, q)
    Ht = effective_channel(ch, V)
    Jinv = hpd_inverse(J, cfg.noise_power)
    quad = np.einsum("ml,mn,nl->l", Ht.conj(), Jinv, Ht).real
    return np.clip(1.0 - q * quad, MSE_FLOOR, 1.0)


def downlink_mse(cfg: SystemConfig, ch: ChannelSet, U: np.ndarray,
                 V: Sequence[np.ndarray], p) -> np.ndarray:
    """Per-stream downlink MSE with the decoder ``v_kj`` optimally scaled.

    Equals ``1 - p_kj |v^H H_k^H u_kj|^2 / (v^H J_k v)`` where ``J_k`` is the
    receive covariance of user ``k``.
    """
    ch.check(cfg)
    _check_U(cfg, U)
    _check_V(cfg, V)
    p = _vec(cfg, p, "p")
    out = np.empty(cfg.total_streams)
    Up = U * np.sqrt(p)
    for k, (h, v, sl) in enumerate(zip(ch.H_k, V, cfg.stream_slices)):
        A = h.conj().T @ Up  # N_k x L
        Jk = A @ A.conj().T + cfg.noise_power * np.eye(cfg.n_rx[k])
        total = np.einsum("nj,nm,mj->j", v.conj(), Jk, v).real
        useful = np.abs(np.einsum("nj,nj->j", v.conj(), A[:, sl])) ** 2
        out[sl] = 1.0 - useful / total
    return np.clip(out, MSE_FLOOR, 1.0)


def mse_sinr_identity_check(gamma, mse) -> float:
    """Largest deviation ``|mse - 1/(1 + gamma)|`` over all streams."""
    gamma = np.asarray(gamma, dtype=float)
    mse = np.asarray(mse, dtype=float)
    if gamma.shape != mse.shape:
        raise StructuralError(f"length mismatch: {gamma.shape} vs {mse.shape}")
    if gamma.size == 0:
        return 0.0
    return float(np.max(np.abs(mse - 1.0 / (1.0 + gamma))))


def sum_rate(gamma) -> float:
    """Sum of ``log2(1 + gamma)`` in bits per channel use."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0) or not np.all(np.isfinite(gamma)):
        raise DomainError("SINRs must be finite and nonnegative")
    return float(np.sum(np.log2(1.0 + gamma)))


def stream_metrics(cfg: SystemConfig, ch: ChannelSet, filters: FilterSet,
                   powers: PowerAllocation) -> StreamMetrics:
    """Evaluate both link directions of a design; MSEs are the downlink ones."""
    g_ul = uplink_sinr(cfg, ch, filters.U, filters.V, powers.q)
    g_dl = downlink_sinr(cfg, ch, filters.U, filters.V, powers.p)
    mse = np.clip(1.0 / (1.0 + g_dl), MSE_FLOOR, 1.0)
    return StreamMetrics(g_ul, g_dl, mse)
