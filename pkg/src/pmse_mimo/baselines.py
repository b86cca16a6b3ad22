"""Reference designs: SMSE minimization, ZF, BD and the DPC sum-capacity bound."""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import _alternating as alt
from ._alternating import SolverOptions, SolverTrace
from .errors import ConvergenceError, InfeasibleConfigurationError, NumericError
from .model import (ChannelSet, FilterSet, PowerAllocation, StreamMetrics, SystemConfig,
                    stream_metrics)

__all__ = [
    "MacCovariances",
    "BaselineResult",
    "waterfill",
    "dpc_sum_capacity",
    "mac_covariances",
    "smse_solve",
    "zf_precoder",
    "bd_precoder",
]

LN2 = np.log(2.0)


@dataclass(frozen=True)
class MacCovariances:
    """Transmit covariances ``Sigma_k`` (``N_k x N_k``) of the dual MAC."""

    Sigma: Tuple[np.ndarray, ...]

    @property
    def total_power(self) -> float:
        return float(sum(np.trace(s).real for s in self.Sigma))


@dataclass(frozen=True)
class BaselineResult:
    """Outcome of a reference scheme on one channel.

    ``filters``, ``powers`` and ``metrics`` are None for ``dpc_bound``.
    """

    method: str
    spectral_efficiency: float
    filters: Optional[FilterSet] = None
    powers: Optional[PowerAllocation] = None
    metrics: Optional[StreamMetrics] = None
    trace: Optional[SolverTrace] = None


def waterfill(gains, total: float) -> Tuple[np.ndarray, float]:
    """Maximize ``sum(log(1 + g_i s_i))`` with ``sum(s) = total``.

    Returns the powers and the water level ``mu`` (``s_i = max(0, mu - 1/g_i)``).
    Zero gains receive no power.
    """
    g = np.asarray(gains, dtype=float)
    s = np.zeros(g.size)
    pos = np.flatnonzero(g > 0)
    if pos.size == 0:
        return s, 0.0
    inv = 1.0 / g[pos]
    order = np.argsort(inv)
    inv_sorted = inv[order]
    # Largest n such that the n best channels all get positive power.
    levels = (total + np.cumsum(inv_sorted)) / np.arange(1, pos.size + 1)
    n = int(np.flatnonzero(levels > inv_sorted)[-1]) + 1
    mu = levels[n - 1]
    s[pos] = np.maximum(mu - inv, 0.0)
    return s, float(mu)


# ---------------------------------------------------------------------------
# DPC bound via the dual MAC

def _mac_objective(cfg, ch, Sigma):
    M = cfg.n_tx
    S = np.eye(M) * cfg.noise_power
    for h, s in zip(ch.H_k, Sigma):
        S = S + h @ s @ h.conj().T
    _, logdet = np.linalg.slogdet(S / cfg.noise_power)
    return logdet / LN2, S


def _fw_gap(cfg, ch, Sigma, S):
    """Upper bound (bits) on the distance to the optimum, from concavity."""
    Sinv = np.linalg.inv(S)
    grads = [h.conj().T @ Sinv @ h for h in ch.H_k]
    top = max(np.linalg.eigvalsh(0.5 * (g + g.conj().T))[-1] for g in grads)
    inner = sum(np.trace(g @ s).real for g, s in zip(grads, Sigma))
    return max(cfg.p_max * top - inner, 0.0) / LN2


def mac_covariances(cfg: SystemConfig, ch: ChannelSet, tol: float = 1e-8,
                    max_iter: int = 300) -> Tuple[MacCovariances, float]:
    """Sum-capacity achieving MAC covariances under the sum-power constraint.

    Sum-power iterative waterfilling: each iteration waterfills every user
    against the other users' current interference with one shared water
    level, then moves toward that point with an exact line search (the
    averaged step ``1/K`` is always admissible, which secures convergence).
    Iteration stops once the concavity gap certifies the objective to
    relative accuracy ``tol``. When waterfilling stalls or crawls (it is
    only first order), a log-barrier Newton method finishes from the last
    iterate. Near the optimum a step gains only second order in the gap,
    below the rounding of ``logdet``, so a gap within ``10 * tol`` is
    accepted once no further ascent is possible.
    """
    ch.check(cfg)
    K = cfg.n_users
    Sigma = [np.eye(n) * cfg.p_max / cfg.total_rx for n in cfg.n_rx]
    f, S = _mac_objective(cfg, ch, Sigma)
    scale = lambda val: tol * max(1.0, val)
    stalled = False
    for _ in range(max_iter):
        gap = _fw_gap(cfg, ch, Sigma, S)
        if gap <= scale(f):
            return MacCovariances(tuple(Sigma)), f
        eig, vecs = [], []
        for h, s in zip(ch.H_k, Sigma):
            Z = S - h @ s @ h.conj().T
            w, E = np.linalg.eigh(h.conj().T @ np.linalg.solve(Z, h))
            eig.append(np.maximum(w, 0.0))
            vecs.append(E)
        powers, _ = waterfill(np.concatenate(eig), cfg.p_max)
        new, start = [], 0
        for w, E in zip(eig, vecs):
            s_k = powers[start:start + w.size]
            start += w.size
            new.append((E * s_k) @ E.conj().T)
        Sigma, f_new, S = _line_search(cfg, ch, Sigma, new, f, 1.0 / K)
        if not f_new > f:
            stalled = True
            break
        f = f_new
    if stalled and gap <= 10 * scale(f):
        return MacCovariances(tuple(Sigma)), f
    polished, f_pol, gap = _barrier_newton(cfg, ch, Sigma, scale(f) * LN2)
    if f_pol >= f:
        Sigma, f = polished, f_pol
    else:
        gap = _fw_gap(cfg, ch, Sigma, _mac_objective(cfg, ch, Sigma)[1])
    if gap <= 10 * scale(f):
        return MacCovariances(tuple(Sigma)), f
    raise ConvergenceError(f"sum-capacity iteration did not converge (gap {gap:.1e} bits)",
                           best=f)


def _hermitian_basis(n):
    """Orthonormal basis of ``n x n`` Hermitian matrices under ``tr(A B)``."""
    basis = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n), complex)
            if i == j:
                E[i, i] = 1.0
                basis.append(E)
                continue
            E[i, j] = E[j, i] = 1 / np.sqrt(2)
            basis.append(E)
            F = np.zeros((n, n), complex)
            F[i, j], F[j, i] = 1j / np.sqrt(2), -1j / np.sqrt(2)
            basis.append(F)
    return np.array(basis)


def _barrier_newton(cfg, ch, Sigma0, target, mu=10.0, max_newton=200):
    """Log-barrier Newton ascent on ``logdet(I + sum H_k S_k H_k^H / s2)``.

    Starts from ``Sigma0`` pulled slightly into the interior and follows
    the central path until the barrier bound ``m / t`` (nats) is below
    ``target``. Returns ``(Sigma, f_bits, gap_bits)``.
    """
    s2, P = cfg.noise_power, cfg.p_max
    bases = [_hermitian_basis(n) for n in cfg.n_rx]
    sizes = [b.shape[0] for b in bases]
    cuts = np.cumsum([0] + sizes)
    traces = np.concatenate([np.trace(b, axis1=1, axis2=2).real for b in bases])
    m = cfg.total_rx + 1

    def unpack(x):
        return [np.einsum("a,aij->ij", x[cuts[k]:cuts[k + 1]], b) for k, b in enumerate(bases)]

    def phi(x, t):
        Sig = unpack(x)
        slack = P - traces @ x
        if slack <= 0:
            return -np.inf
        val = 0.0
        for s in Sig:
            w = np.linalg.eigvalsh(s)
            if w[0] <= 0:
                return -np.inf
            val += np.sum(np.log(w))
        f, _ = _mac_objective(cfg, ch, Sig)
        return t * f * LN2 + val + np.log(slack)

    def derivatives(x, t):
        Sig = unpack(x)
        _, S = _mac_objective(cfg, ch, Sig)
        Sinv = np.linalg.inv(S)
        slack = P - traces @ x
        g = np.empty(x.size)
        Hs = np.empty((x.size, x.size))
        for k, (hk, bk) in enumerate(zip(ch.H_k, bases)):
            sk_inv = np.linalg.inv(Sig[k])
            Gkk = hk.conj().T @ Sinv @ hk
            g[cuts[k]:cuts[k + 1]] = np.einsum("aij,ji->a", bk, t * Gkk + sk_inv).real
            for l, (hl, bl) in enumerate(zip(ch.H_k, bases)):
                Gkl = hk.conj().T @ Sinv @ hl
                block = -t * np.einsum("aij,jk,bkl,li->ab", bk, Gkl, bl, Gkl.conj().T).real
                if k == l:
                    block -= np.einsum("aij,jk,bkl,li->ab", bk, sk_inv, bk, sk_inv).real
                Hs[cuts[k]:cuts[k + 1], cuts[l]:cuts[l + 1]] = block
        g -= traces / slack
        Hs -= np.outer(traces, traces) / slack ** 2
        return g, Hs

    total = cfg.total_rx
    x = np.concatenate([np.einsum("aij,ji->a", b, s).real for b, s in zip(bases, Sigma0)])
    interior = np.concatenate([np.einsum("aij,ji->a", b, np.eye(b.shape[1])).real
                               for b in bases]) * P / total
    x = 0.999 * (0.99 * x + 0.01 * interior)
    f0, _ = _mac_objective(cfg, ch, unpack(x))
    t = max(m / max(1e-3 * max(f0, 1.0), target), 1.0)
    for _ in range(max_newton):
        g, Hs = derivatives(x, t)
        try:
            dx = np.linalg.solve(-Hs, g)
        except np.linalg.LinAlgError:
            break
        dec = g @ dx
        if dec / 2 <= 1e-10:
            if m / t <= target:
                break
            t *= mu
            continue
        base, step = phi(x, t), 1.0
        while phi(x + step * dx, t) < base + 0.25 * step * dec and step > 1e-12:
            step *= 0.5
        x = x + step * dx
    Sig = unpack(x)
    f, S = _mac_objective(cfg, ch, Sig)
    return Sig, f, _fw_gap(cfg, ch, Sig, S)


def _line_search(cfg, ch, old, new, f_old, t_min):
    """Maximize the concave objective on the segment from ``old`` to ``new``."""
    def at(t):
        mix = [(1 - t) * a + t * b for a, b in zip(old, new)]
        val, S = _mac_objective(cfg, ch, mix)
        return val, mix, S

    lo, hi = t_min, 1.0
    best = at(t_min)
    end = at(1.0)
    if end[0] >= best[0]:
        best = end
    invphi = (np.sqrt(5) - 1) / 2
    a, b = lo + (1 - invphi) * (hi - lo), lo + invphi * (hi - lo)
    fa, fb = at(a), at(b)
    for _ in range(30):
        if fa[0] < fb[0]:
            lo, a, fa = a, b, fb
            b = lo + invphi * (hi - lo)
            fb = at(b)
        else:
            hi, b, fb = b, a, fa
            a = lo + (1 - invphi) * (hi - lo)
            fa = at(a)
    for cand in (fa, fb):
        if cand[0] > best[0]:
            best = cand
    if best[0] < f_old:
        return old, f_old, _mac_objective(cfg, ch, old)[1]
    val, mix, S = best
    return mix, val, S


def dpc_sum_capacity(cfg: SystemConfig, ch: ChannelSet, tol: float = 1e-8,
                     max_iter: int = 300) -> float:
    """Broadcast-channel sum capacity (bits per channel use) via MAC duality."""
    _, f = mac_covariances(cfg, ch, tol, max_iter)
    return float(f)


# ---------------------------------------------------------------------------
# linear baselines

def smse_solve(cfg: SystemConfig, ch: ChannelSet,
               opts: SolverOptions = SolverOptions()) -> BaselineResult:
    """Alternating minimization of the sum of stream MSEs under the power budget."""
    ch.check(cfg)
    if any(np.linalg.norm(h) == 0 for h in ch.H_k):
        raise NumericError("a user has an all-zero channel")
    sol = alt.alternate(cfg, ch, "smse", opts)
    return BaselineResult("smse", sol.metrics.sum_rate, sol.filters, sol.powers,
                          sol.metrics, sol.trace)


def _orthogonal_result(method, cfg, ch, U, V, gains):
    """Waterfill over interference-free stream gains and package the design."""
    p, _ = waterfill(np.asarray(gains) / cfg.noise_power, cfg.p_max)
    filters = FilterSet(U, tuple(V))
    G = alt.gains(alt.effective(ch.H_k, filters.V), filters.U)
    gamma = alt.sinr_downlink(G, p, cfg.noise_power)
    try:
        q = alt.dual_powers(G, gamma, cfg.noise_power, to_downlink=False)
    except NumericError:
        q = p.copy()
    powers = PowerAllocation(q, p)
    metrics = stream_metrics(cfg, ch, filters, powers)
    rate = float(np.sum(np.log2(1.0 + p * np.asarray(gains) / cfg.noise_power)))
    return BaselineResult(method, rate, filters, powers, metrics)


def zf_precoder(cfg: SystemConfig, ch: ChannelSet) -> BaselineResult:
    """Zero-forcing over per-stream receive combiners.

    Each user combines with the dominant left singular vectors of its
    physical channel ``H_k^H``; the ``L x M`` composite is channel-inverted.
    Requires ``sum(N_k) <= M``.
    """
    ch.check(cfg)
    if cfg.total_rx > cfg.n_tx:
        raise InfeasibleConfigurationError(
            f"zero forcing needs sum(N_k) = {cfg.total_rx} <= M = {cfg.n_tx}")
    V = []
    for h, l_k in zip(ch.H_k, cfg.n_streams):
        a, _, _ = np.linalg.svd(h.conj().T)
        V.append(a[:, :l_k])
    F = np.concatenate([v.conj().T @ h.conj().T for h, v in zip(ch.H_k, V)], axis=0)
    sv = np.linalg.svd(F, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1e-300):
        raise InfeasibleConfigurationError("composite channel is rank deficient")
    T = np.linalg.pinv(F)
    norms = np.linalg.norm(T, axis=0)
    return _orthogonal_result("zf", cfg, ch, T / norms, V, 1.0 / norms ** 2)


def bd_precoder(cfg: SystemConfig, ch: ChannelSet) -> BaselineResult:
    """Block diagonalization: each user transmits in the null space of the others.

    Uses the ``L_k`` strongest modes of every user's projected channel with
    waterfilling across all users. Requires ``M - sum_{i != k} N_i >= L_k``.
    """
    ch.check(cfg)
    U_cols, V, gains = [], [], []
    for k, (h, l_k) in enumerate(zip(ch.H_k, cfg.n_streams)):
        others = [ch.H_k[j] for j in range(cfg.n_users) if j != k]
        if others:
            Hbar = np.concatenate(others, axis=1).conj().T
            if Hbar.shape[0] + l_k > cfg.n_tx:
                raise InfeasibleConfigurationError(
                    f"no {l_k}-dimensional null space for user {k}: "
                    f"M = {cfg.n_tx}, other users' antennas = {Hbar.shape[0]}")
            _, sv, vh = np.linalg.svd(Hbar)
            rank = int(np.sum(sv > 1e-12 * max(sv[0], 1e-300)))
            null = vh.conj().T[:, rank:]
        else:
            null = np.eye(cfg.n_tx, dtype=complex)
        a, s, bh = np.linalg.svd(h.conj().T @ null)
        if s.size < l_k or s[l_k - 1] <= 0:
            raise InfeasibleConfigurationError(f"user {k} cannot carry {l_k} streams")
        U_cols.append(null @ bh.conj().T[:, :l_k])
        V.append(a[:, :l_k])
        gains.append(s[:l_k] ** 2)
    return _orthogonal_result("bd", cfg, ch, np.concatenate(U_cols, axis=1), V,
                              np.concatenate(gains))
