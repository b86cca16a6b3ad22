"""Adaptive PSK bit loading and symbol-level BER simulation over a designed downlink.

Bit loading picks, per stream, the largest PSK constellation whose
closed-form BER at the stream's SINR meets a target. The probabilistic
variant mixes that depth with the next larger one so that the expected
closed-form BER equals the target.
"""

from dataclasses import dataclass
from typing import NamedTuple, Sequence, Tuple

import numpy as np
from scipy.special import erfc

from .errors import DomainError, StructuralError
from .model import ChannelSet, SystemConfig, _check_U, _check_V, _check_power

__all__ = [
    "BerModel",
    "ModulationPlan",
    "SimulationResult",
    "ber_mpsk",
    "ber_bpsk",
    "closed_form_ber",
    "naive_bits",
    "probabilistic_bits",
    "plan_bits",
    "simulate_ber",
]

DEFAULT_B_MAX = 8


@dataclass(frozen=True)
class BerModel:
    """Constants of ``BER ~ c1 exp(-c2 gamma / (2^(c3 b) - c4))``."""

    c1: float = 0.25
    c2: float = 8.0
    c3: float = 1.94
    c4: float = 0.0

    def __post_init__(self):
        if not 0 < self.c1 < 1 or self.c2 <= 0 or self.c3 <= 0:
            raise DomainError("need 0 < c1 < 1, c2 > 0 and c3 > 0")


@dataclass(frozen=True)
class ModulationPlan:
    """Per-stream modulation choice.

    ``bits`` is the base depth (0 for streams that do not transmit),
    ``switch_prob`` the probability of sending ``bits + 1`` instead, and
    ``infeasible`` marks streams sent with BPSK although BPSK misses the
    target.
    """

    bits: np.ndarray
    switch_prob: np.ndarray
    target_ber: np.ndarray
    active: np.ndarray
    infeasible: np.ndarray

    def __post_init__(self):
        n = len(self.bits)
        for name in ("switch_prob", "target_ber", "active", "infeasible"):
            if len(getattr(self, name)) != n:
                raise StructuralError(f"{name} must have {n} entries")
        if np.any(np.asarray(self.bits)[np.asarray(self.active)] < 1):
            raise DomainError("active streams need at least one bit")
        p = np.asarray(self.switch_prob)
        if np.any((p < 0) | (p > 1)):
            raise DomainError("switch probabilities must lie in [0, 1]")

    @property
    def expected_bits(self) -> np.ndarray:
        return np.asarray(self.bits) + np.asarray(self.switch_prob)


def ber_mpsk(gamma, b, model: BerModel = BerModel()):
    """Closed-form M-PSK BER approximation; valid for ``b >= 2``."""
    b = np.asarray(b)
    if np.any(b < 2):
        raise DomainError("the M-PSK approximation needs b >= 2; use ber_bpsk for BPSK")
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise DomainError("SINR must be nonnegative")
    return model.c1 * np.exp(-model.c2 * gamma / (2.0 ** (model.c3 * b) - model.c4))


def ber_bpsk(gamma):
    """Exact BPSK bit error rate ``erfc(sqrt(gamma)) / 2``."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0):
        raise DomainError("SINR must be nonnegative")
    return 0.5 * erfc(np.sqrt(gamma))


def closed_form_ber(gamma: float, b: int, model: BerModel = BerModel()) -> float:
    """BER of a ``b``-bit PSK stream: exact for BPSK, approximate otherwise."""
    return float(ber_bpsk(gamma) if b == 1 else ber_mpsk(gamma, b, model))


def _check_target(gamma, beta, b_max):
    if gamma < 0 or not np.isfinite(gamma):
        raise DomainError("SINR must be finite and nonnegative")
    if not 0 < beta < 0.5:
        raise DomainError("target BER must lie in (0, 0.5)")
    if b_max < 1:
        raise DomainError("b_max must be >= 1")


def naive_bits(gamma: float, beta: float, model: BerModel = BerModel(),
               b_max: int = DEFAULT_B_MAX, active: bool = True) -> Tuple[int, bool]:
    """Largest PSK depth meeting the target BER, and whether BPSK was forced.

    Returns ``(0, False)`` for inactive streams. A stream whose BPSK BER
    still misses the target is sent with BPSK and flagged infeasible.
    """
    _check_target(gamma, beta, b_max)
    if not active:
        return 0, False
    for b in range(b_max, 1, -1):
        if ber_mpsk(gamma, b, model) <= beta:
            return b, False
    return 1, bool(ber_bpsk(gamma) > beta)


def probabilistic_bits(gamma: float, beta: float, model: BerModel = BerModel(),
                       b_max: int = DEFAULT_B_MAX, active: bool = True
                       ) -> Tuple[int, float]:
    """Naive depth ``b`` and the probability of sending ``b + 1`` bits instead.

    The probability interpolates the closed-form BERs at ``b`` and ``b + 1``
    so the expected BER equals ``beta``; it is clipped to ``[0, 1]`` and is
    zero at ``b_max``.
    """
    b, _ = naive_bits(gamma, beta, model, b_max, active)
    if b == 0 or b >= b_max:
        return b, 0.0
    lo = closed_form_ber(gamma, b, model)
    hi = closed_form_ber(gamma, b + 1, model)
    if hi <= lo:
        return b, 0.0
    return b, float(np.clip((beta - lo) / (hi - lo), 0.0, 1.0))


def plan_bits(gamma: Sequence[float], beta, scheme: str = "naive",
              model: BerModel = BerModel(), b_max: int = DEFAULT_B_MAX,
              active=None) -> ModulationPlan:
    """Bit loading for every stream with the ``"naive"`` or ``"probabilistic"`` scheme."""
    gamma = np.asarray(gamma, dtype=float)
    n = gamma.size
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (n,)).copy()
    active = np.ones(n, bool) if active is None else np.asarray(active, bool)
    if scheme not in ("naive", "probabilistic"):
        raise ValueError(f"unknown bit loading scheme {scheme!r}")
    bits = np.zeros(n, dtype=int)
    prob = np.zeros(n)
    infeasible = np.zeros(n, bool)
    for i in range(n):
        bits[i], infeasible[i] = naive_bits(gamma[i], beta[i], model, b_max, active[i])
        if scheme == "probabilistic":
            _, prob[i] = probabilistic_bits(gamma[i], beta[i], model, b_max, active[i])
    return ModulationPlan(bits, prob, beta, active, infeasible)


class SimulationResult(NamedTuple):
    """Per-stream empirical BER, mean bits per symbol and raw counts."""

    ber: np.ndarray
    bits_per_symbol: np.ndarray
    bit_errors: np.ndarray
    bits_sent: np.ndarray

    def user_bits(self, cfg: SystemConfig) -> np.ndarray:
        """Realized bits per transmission summed over each user's streams."""
        return np.array([self.bits_per_symbol[sl].sum() for sl in cfg.stream_slices])


def simulate_ber(cfg: SystemConfig, ch: ChannelSet, U: np.ndarray, V: Sequence[np.ndarray],
                 p, plan: ModulationPlan, n_symbols: int, seed) -> SimulationResult:
    """Send Gray-mapped PSK symbols through the downlink and count bit errors.

    Every stream is detected on its own decoder output after removing the
    known complex gain, by the nearest constellation phase; residual
    interference acts as noise. Deterministic for a given ``seed``.
    """
    ch.check(cfg)
    _check_U(cfg, U)
    _check_V(cfg, V)
    p = _check_power(cfg, p, "p", slack=1e-8)
    L = cfg.total_streams
    if len(plan.bits) != L:
        raise StructuralError(f"plan covers {len(plan.bits)} streams, expected {L}")
    if n_symbols < 1:
        raise DomainError("n_symbols must be >= 1")
    rng = np.random.default_rng(seed)

    base = np.where(plan.active, plan.bits, 0)[:, None]
    switch = rng.random((L, n_symbols)) < np.asarray(plan.switch_prob)[:, None]
    bits = np.where(base > 0, base + switch, 0)
    order = np.left_shift(1, bits)
    pos = rng.integers(0, order)
    x = np.where(bits > 0, np.exp(2j * np.pi * pos / order), 0.0)

    tx = (U * np.sqrt(p)) @ x  # M x T
    z = np.empty((L, n_symbols), dtype=complex)
    gain = np.empty(L, dtype=complex)
    for k, (h, v, sl) in enumerate(zip(ch.H_k, V, cfg.stream_slices)):
        noise = rng.standard_normal((cfg.n_rx[k], n_symbols, 2)) @ np.array([1, 1j])
        y = h.conj().T @ tx + np.sqrt(cfg.noise_power / 2) * noise
        z[sl] = v.conj().T @ y
        gain[sl] = np.einsum("nj,nm,mj->j", v.conj(), h.conj().T, U[:, sl]) * np.sqrt(p[sl])

    sent = bits > 0
    safe_gain = np.where(gain != 0, gain, 1.0)
    phase = np.angle(z / safe_gain[:, None])
    pos_hat = np.mod(np.rint(phase * order / (2 * np.pi)).astype(np.int64), order)
    errors = np.bitwise_count((pos ^ (pos >> 1)) ^ (pos_hat ^ (pos_hat >> 1)))
    errors = np.where(sent, errors, 0).sum(axis=1)
    total = np.where(sent, bits, 0).sum(axis=1)
    ber = np.divide(errors, total, out=np.zeros(L), where=total > 0)
    return SimulationResult(ber, total / n_symbols, errors, total)
