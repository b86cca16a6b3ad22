"""Seeded Monte Carlo sweeps over SNR and the figure-data recipes.

SNR is ``P_max / sigma^2`` with ``P_max = 1``; every sweep point sets the
noise power accordingly. Per-trial seeds come from
:class:`numpy.random.SeedSequence` keyed on ``(system, snr, trial)``
so all methods at one index see the same channel and the output does not
depend on the execution order or the number of workers.
"""

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import baselines, pmse
from ._alternating import SolverOptions
from .errors import PrecodingError, StructuralError, SweepError
from .model import ChannelSet, SystemConfig
from .modulation import BerModel, plan_bits, simulate_ber

__all__ = [
    "METHODS",
    "ExperimentSpec",
    "TrialRecord",
    "TrialFailure",
    "SweepResult",
    "generate_channel",
    "trial_seed",
    "run_sweep",
    "figure_recipes",
    "snr_at_rate",
    "parse_config",
    "load_config",
    "spec_from_config",
    "system_from_config",
    "read_complex_csv",
    "write_complex_csv",
]

METHODS = ("pmse", "pmse_probabilistic", "smse", "zf", "bd", "dpc_bound")
MAX_FAILURE_RATE = 0.05
DEFAULT_SNR_GRID = tuple(np.arange(0.0, 20.0 + 1e-9, 2.5).tolist())


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything that defines a sweep.

    ``systems`` holds one or more antenna configurations evaluated on the
    same SNR grid; their ``noise_power`` is overridden at each SNR point.
    ``n_symbols = 0`` disables the symbol simulation so only the
    Gaussian-codebook rates are recorded. With ``record_wall_time`` off the
    ``wall_ms`` column is written as 0 and the CSV becomes byte-reproducible.
    """

    systems: Tuple[SystemConfig, ...]
    snr_db: Tuple[float, ...] = DEFAULT_SNR_GRID
    trials: int = 500
    n_symbols: int = 0
    methods: Tuple[str, ...] = ("pmse",)
    target_ber: float = 1e-2
    master_seed: int = 0
    output: Optional[str] = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    ber_model: BerModel = field(default_factory=BerModel)
    b_max: int = 8
    aggregate_ber: bool = False
    record_wall_time: bool = True
    workers: int = 1
    name: str = "custom"

    def __post_init__(self):
        if isinstance(self.systems, SystemConfig):
            object.__setattr__(self, "systems", (self.systems,))
        object.__setattr__(self, "systems", tuple(self.systems))
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.systems:
            raise StructuralError("at least one system configuration is required")
        if self.trials < 1:
            raise StructuralError("trials must be >= 1")
        if not self.snr_db:
            raise StructuralError("the SNR grid must not be empty")
        if not self.methods:
            raise StructuralError("at least one method is required")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise StructuralError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if self.n_symbols < 0:
            raise StructuralError("n_symbols must be >= 0")
        if not 0 < self.target_ber < 0.5:
            raise StructuralError("target_ber must lie in (0, 0.5)")
        if self.workers < 1:
            raise StructuralError("workers must be >= 1")

    @property
    def max_streams(self) -> int:
        return max(c.total_streams for c in self.systems)


@dataclass(frozen=True)
class TrialRecord:
    """Metrics of one method on one channel realization.

    ``user_bits`` are realized bits per transmission per user when symbols
    were simulated and Gaussian-codebook rates per user otherwise; both this
    and ``ber`` are empty for ``dpc_bound``.
    """

    system: int
    snr_db: float
    noise_power: float
    method: str
    trial: int
    seed: int
    sum_rate_bits: float
    user_bits: Tuple[float, ...]
    ber: Tuple[float, ...]
    bits_per_stream: Tuple[float, ...]
    bit_errors: Tuple[int, ...]
    bits_sent: Tuple[int, ...]
    iterations: int
    wall_ms: float


@dataclass(frozen=True)
class TrialFailure:
    system: int
    snr_db: float
    method: str
    trial: int
    seed: int
    message: str


@dataclass
class SweepResult:
    """Trial records, failures, infeasible methods and per-point aggregates."""

    spec: ExperimentSpec
    records: List[TrialRecord]
    failures: List[TrialFailure]
    infeasible: Dict[Tuple[int, str], str]

    def select(self, method: str, system: int = 0, snr_db: Optional[float] = None):
        return [r for r in self.records if r.method == method and r.system == system
                and (snr_db is None or r.snr_db == snr_db)]

    def summary(self) -> List[dict]:
        """Mean and standard error per ``(system, snr, method)``."""
        rows = []
        for si, cfg in enumerate(self.spec.systems):
            for snr in self.spec.snr_db:
                for method in self.spec.methods:
                    rows.append(self._aggregate(si, cfg, snr, method))
        return rows

    def _aggregate(self, si, cfg, snr, method):
        row = {"system": si, "n_rx": _join(cfg.n_rx), "n_streams": _join(cfg.n_streams),
               "snr_db": snr, "noise_power": 10 ** (-snr / 10) * cfg.p_max, "method": method}
        if (si, method) in self.infeasible:
            row.update(status="infeasible", trials=0, failures=0)
            return row
        recs = self.select(method, si, snr)
        n_fail = sum(1 for f in self.failures
                     if f.system == si and f.snr_db == snr and f.method == method)
        row.update(status="ok", trials=len(recs), failures=n_fail)
        rates = np.array([r.sum_rate_bits for r in recs])
        row["mean_sum_rate_bits"], row["se_sum_rate_bits"] = _mean_se(rates)
        if recs and recs[0].user_bits:
            u1 = np.array([r.user_bits[0] for r in recs])
            row["mean_user1_bits"], row["se_user1_bits"] = _mean_se(u1)
        if self.spec.n_symbols > 0 and recs and recs[0].bits_sent:
            sl = cfg.stream_slices[0]
            err = sum(sum(r.bit_errors[sl]) for r in recs)
            sent = sum(sum(r.bits_sent[sl]) for r in recs)
            row["ber_user1"] = err / sent if sent else math.nan
            if self.spec.aggregate_ber:
                err_all = sum(sum(r.bit_errors) for r in recs)
                sent_all = sum(sum(r.bits_sent) for r in recs)
                row["ber_all"] = err_all / sent_all if sent_all else math.nan
        return row

    def point(self, method: str, key: str, system: int = 0) -> np.ndarray:
        """Summary column ``key`` of ``method`` along the SNR grid."""
        rows = [r for r in self.summary() if r["method"] == method and r["system"] == system]
        return np.array([r.get(key, math.nan) for r in rows], dtype=float)

    def trials_csv(self) -> str:
        L = self.spec.max_streams
        K = max(c.n_users for c in self.spec.systems)
        header = (["system", "snr_db", "noise_power", "method", "trial", "seed",
                   "sum_rate_bits", "user1_bits"]
                  + [f"ber_stream_{i + 1}" for i in range(L)]
                  + ["iterations", "wall_ms"]
                  + [f"user{k + 1}_bits" for k in range(1, K)]
                  + [f"bits_stream_{i + 1}" for i in range(L)])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in sorted(self.records, key=_record_key):
            pad = lambda xs, n: [_fmt(x) for x in xs] + [""] * (n - len(xs))
            user = pad(r.user_bits, K)
            w.writerow([r.system, _fmt(r.snr_db), _fmt(r.noise_power), r.method, r.trial, r.seed,
                        _fmt(r.sum_rate_bits), user[0]] + pad(r.ber, L)
                       + [r.iterations, _fmt(r.wall_ms)] + user[1:] + pad(r.bits_per_stream, L))
        return buf.getvalue()

    def summary_csv(self) -> str:
        rows = self.summary()
        keys = ["system", "n_rx", "n_streams", "snr_db", "noise_power", "method", "status",
                "trials", "failures", "mean_sum_rate_bits", "se_sum_rate_bits",
                "mean_user1_bits", "se_user1_bits", "ber_user1", "ber_all"]
        keys = [k for k in keys if any(k in r for r in rows)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(r[k]) if k in r else "" for k in keys])
        return buf.getvalue()

    def write(self, path) -> Tuple[Path, Path]:
        """Write ``<path>`` (trial records) and ``<stem>_summary.csv``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.trials_csv())
        summary = path.with_name(path.stem + "_summary.csv")
        summary.write_text(self.summary_csv())
        return path, summary


def _join(xs):
    return ",".join(str(x) for x in xs)


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else repr(float(x))
    return str(x)


def _mean_se(x):
    if x.size == 0:
        return math.nan, math.nan
    se = float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else math.nan
    return float(np.mean(x)), se


def _record_key(r):
    return (r.system, r.snr_db, r.trial, METHODS.index(r.method))


# ---------------------------------------------------------------------------
# channels and seeds

def generate_channel(cfg: SystemConfig, seed) -> ChannelSet:
    """I.i.d. CN(0, 1) channel entries; deterministic given ``seed``."""
    rng = np.random.default_rng(seed)
    H = []
    for n in cfg.n_rx:
        z = rng.standard_normal((cfg.n_tx, n, 2)) @ np.array([1.0, 1.0j])
        H.append(z / np.sqrt(2.0))
    return ChannelSet(tuple(H))


def trial_seed(master_seed: int, system: int, snr_index: int, trial: int) -> int:
    """64-bit seed of one ``(system, snr, trial)`` cell."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(system, snr_index, trial))
    return int(ss.generate_state(1, np.uint64)[0])


def _symbol_seed(seed: int, method: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(METHODS.index(method),))


# ---------------------------------------------------------------------------
# one trial

def _feasibility(cfg: SystemConfig, method: str) -> Optional[str]:
    # Channel-independent antenna checks, so infeasible methods are reported once.
    if method == "zf" and cfg.total_rx > cfg.n_tx:
        return f"zero forcing needs sum(N_k) <= M (have {cfg.total_rx} > {cfg.n_tx})"
    if method == "bd":
        for k, l_k in enumerate(cfg.n_streams):
            other = cfg.total_rx - cfg.n_rx[k]
            if cfg.n_tx - other < l_k:
                return (f"block diagonalization needs M - sum_(i!=k) N_i >= L_k "
                        f"(user {k}: {cfg.n_tx} - {other} < {l_k})")
    return None


def _run_trial(spec: ExperimentSpec, si: int, snr_index: int, trial: int):
    cfg0 = spec.systems[si]
    snr = spec.snr_db[snr_index]
    cfg = cfg0.with_noise(cfg0.p_max * 10 ** (-snr / 10))
    seed = trial_seed(spec.master_seed, si, snr_index, trial)
    ch = generate_channel(cfg, seed)
    records, failures = [], []
    design_cache = {}
    for method in spec.methods:
        if _feasibility(cfg, method):
            continue
        t0 = time.perf_counter()
        try:
            rec = _run_method(spec, cfg, ch, method, seed, design_cache)
        except (PrecodingError, np.linalg.LinAlgError, FloatingPointError) as exc:
            failures.append(TrialFailure(si, snr, method, trial, seed,
                                         f"{type(exc).__name__}: {exc}"))
            continue
        wall = (time.perf_counter() - t0) * 1e3 if spec.record_wall_time else 0.0
        rate, user_bits, sim, iterations = rec
        records.append(TrialRecord(
            si, snr, cfg.noise_power, method, trial, seed, rate, tuple(user_bits),
            tuple(sim.ber.tolist()) if sim else (),
            tuple(sim.bits_per_symbol.tolist()) if sim else (),
            tuple(int(e) for e in sim.bit_errors) if sim else (),
            tuple(int(b) for b in sim.bits_sent) if sim else (),
            iterations, float(wall)))
    return records, failures


def _run_method(spec, cfg, ch, method, seed, cache):
    if method == "dpc_bound":
        return baselines.dpc_sum_capacity(cfg, ch), (), None, 0
    if method in ("pmse", "pmse_probabilistic"):
        if "pmse" not in cache:
            cache["pmse"] = pmse.solve(cfg, ch, spec.solver)
        sol = cache["pmse"]
        filters, powers, metrics, iterations = (sol.filters, sol.powers, sol.metrics,
                                                sol.trace.iterations)
        scheme = "probabilistic" if method == "pmse_probabilistic" else "naive"
    else:
        if method == "smse":
            res = baselines.smse_solve(cfg, ch, spec.solver)
            iterations = res.trace.iterations
        elif method == "zf":
            res = baselines.zf_precoder(cfg, ch)
            iterations = 0
        else:
            res = baselines.bd_precoder(cfg, ch)
            iterations = 0
        filters, powers, metrics = res.filters, res.powers, res.metrics
        scheme = "naive"
    rate = float(metrics.sum_rate)
    if spec.n_symbols == 0:
        user = [float(metrics.rate[sl].sum()) for sl in cfg.stream_slices]
        return rate, user, None, iterations
    gamma = metrics.gamma_dl
    active = (powers.p > 0) & (gamma > 0)
    plan = plan_bits(gamma, spec.target_ber, scheme, spec.ber_model, spec.b_max, active)
    sim = simulate_ber(cfg, ch, filters.U, filters.V, powers.p, plan, spec.n_symbols,
                       _symbol_seed(seed, method))
    return rate, sim.user_bits(cfg).tolist(), sim, iterations


def _run_chunk(args):
    spec, cells = args
    out_r, out_f = [], []
    for si, snr_index, trial in cells:
        r, f = _run_trial(spec, si, snr_index, trial)
        out_r.extend(r)
        out_f.extend(f)
    return out_r, out_f


def run_sweep(spec: ExperimentSpec, progress=None) -> SweepResult:
    """Run every method on every ``(system, snr, trial)`` cell.

    Failed trials are recorded and skipped. Methods whose antenna
    constraints cannot hold are reported in ``infeasible`` and not run.
    Raises :class:`~pmse_mimo.errors.SweepError` (carrying the result in
    ``.result``) when more than 5% of the attempted runs at some
    ``(system, snr)`` point fail. Writes CSVs when ``spec.output`` is set.
    """
    infeasible = {}
    for si, cfg in enumerate(spec.systems):
        for m in spec.methods:
            reason = _feasibility(cfg, m)
            if reason:
                infeasible[(si, m)] = reason
    cells = [(si, s, t) for si in range(len(spec.systems))
             for s in range(len(spec.snr_db)) for t in range(spec.trials)]
    records, failures = [], []
    if spec.workers == 1:
        for i, cell in enumerate(cells):
            r, f = _run_trial(spec, *cell)
            records.extend(r)
            failures.extend(f)
            if progress:
                progress(i + 1, len(cells))
    else:
        n_chunks = spec.workers * 4
        chunks = [(spec, cells[i::n_chunks]) for i in range(n_chunks)]
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            for i, (r, f) in enumerate(pool.map(_run_chunk, chunks)):
                records.extend(r)
                failures.extend(f)
                if progress:
                    progress(i + 1, len(chunks))
    records.sort(key=_record_key)
    result = SweepResult(spec, records, failures, infeasible)
    if spec.output:
        result.write(spec.output)
    for si, cfg in enumerate(spec.systems):
        n_run = sum(1 for m in spec.methods if (si, m) not in infeasible) * spec.trials
        for snr in spec.snr_db:
            n_fail = sum(1 for f in failures if f.system == si and f.snr_db == snr)
            if n_run and n_fail / n_run > MAX_FAILURE_RATE:
                err = SweepError(f"{n_fail} of {n_run} runs failed at system {si}, "
                                 f"SNR {snr} dB")
                err.result = result
                raise err
    return result


# ---------------------------------------------------------------------------
# recipes and helpers

def figure_recipes(name: str, trials: int = 500, master_seed: int = 0, **overrides
                   ) -> ExperimentSpec:
    """Configuration behind one of the reference figures.

    ``fig2`` compares Gaussian-codebook rates of PMSE, ZF, BD and the DPC
    bound at ``K = 2, M = 4`` for ``N_k`` of 2 and 4. ``fig3`` and ``fig4``
    simulate adaptive PSK at ``N_k = L_k = 2`` with a 1e-2 BER target;
    ``fig4`` additionally aggregates the BER over all streams.
    """
    opts = SolverOptions(epsilon=1e-6)
    if name == "fig2":
        spec = ExperimentSpec(
            systems=(SystemConfig.symmetric(2, 4, 2, 2), SystemConfig.symmetric(2, 4, 4, 2)),
            trials=trials, n_symbols=0, methods=("pmse", "dpc_bound", "zf", "bd"),
            master_seed=master_seed, solver=opts, name=name)
    elif name in ("fig3", "fig4"):
        spec = ExperimentSpec(
            systems=(SystemConfig.symmetric(2, 4, 2, 2),), trials=trials, n_symbols=2000,
            methods=("pmse", "pmse_probabilistic", "smse"), target_ber=1e-2,
            master_seed=master_seed, solver=opts, aggregate_ber=(name == "fig4"), name=name)
    else:
        raise ValueError(f"unknown figure {name!r}; choose fig2, fig3 or fig4")
    return replace(spec, **overrides) if overrides else spec


def snr_at_rate(snr_db: Sequence[float], rates: Sequence[float], target: float) -> float:
    """SNR (dB) at which a rate curve first reaches ``target`` (linear interpolation).

    Returns NaN when the curve never reaches the target on the grid.
    """
    snr = np.asarray(snr_db, dtype=float)
    r = np.asarray(rates, dtype=float)
    above = np.flatnonzero(r >= target)
    if above.size == 0:
        return math.nan
    i = int(above[0])
    if i == 0:
        return float(snr[0]) if r[0] == target else math.nan
    t = (target - r[i - 1]) / (r[i] - r[i - 1])
    return float(snr[i - 1] + t * (snr[i] - snr[i - 1]))


def parse_config(text: str) -> Dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise StructuralError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise StructuralError(f"line {n}: empty key")
        out[key] = value
    return out


def load_config(path) -> Dict[str, str]:
    return parse_config(Path(path).read_text())


def _ints(v):
    return tuple(int(x) for x in v.split(",") if x.strip())


def _floats(v):
    return tuple(float(x) for x in v.split(",") if x.strip())


def system_from_config(conf: Dict[str, str]) -> SystemConfig:
    """Build a :class:`SystemConfig` from parsed config keys.

    Keys: ``n_users``, ``n_tx``, ``n_rx`` and ``n_streams`` (one value or a
    per-user comma list), ``p_max`` (default 1) and either ``noise_power``
    or a single ``snr_db``.
    """
    try:
        K = int(conf["n_users"])
        M = int(conf["n_tx"])
        n_rx, n_streams = _ints(conf["n_rx"]), _ints(conf["n_streams"])
    except KeyError as exc:
        raise StructuralError(f"missing config key {exc.args[0]!r}") from None
    n_rx = n_rx * K if len(n_rx) == 1 else n_rx
    n_streams = n_streams * K if len(n_streams) == 1 else n_streams
    p_max = float(conf.get("p_max", 1.0))
    if "noise_power" in conf:
        noise = float(conf["noise_power"])
    elif "snr_db" in conf:
        snr = _floats(conf["snr_db"])
        if len(snr) != 1:
            raise StructuralError("a design config needs exactly one snr_db value")
        noise = p_max * 10 ** (-snr[0] / 10)
    else:
        noise = 1.0
    return SystemConfig(K, M, n_rx, n_streams, noise, p_max)


def spec_from_config(conf: Dict[str, str]) -> ExperimentSpec:
    """Build a sweep, optionally starting from ``figure = fig2|fig3|fig4``."""
    # The sweep sets the noise power per SNR point, so the system ignores snr_db.
    sys_conf = {k: v for k, v in conf.items() if k != "snr_db"}
    if "figure" in conf:
        spec = figure_recipes(conf["figure"])
    else:
        spec = ExperimentSpec(systems=(system_from_config(sys_conf),))
    changes = {}
    if "n_users" in conf:
        changes["systems"] = (system_from_config(sys_conf),)
    for key, conv in (("trials", int), ("n_symbols", int), ("target_ber", float),
                      ("b_max", int), ("workers", int), ("output", str)):
        if key in conf:
            changes[key] = conv(conf[key])
    if "seed" in conf:
        changes["master_seed"] = int(conf["seed"])
    if "snr_db" in conf:
        changes["snr_db"] = _floats(conf["snr_db"])
    if "methods" in conf:
        changes["methods"] = tuple(m.strip() for m in conf["methods"].split(",") if m.strip())
    solver = {}
    for key, conv in (("epsilon", float), ("max_outer_iterations", int),
                      ("initialization", str)):
        if key in conf:
            solver[key] = conv(conf[key])
    if solver:
        changes["solver"] = replace(spec.solver, **solver)
    return replace(spec, **changes)


def read_complex_csv(path, n_cols: Optional[int] = None) -> np.ndarray:
    """Complex matrix from rows of interleaved ``re, im`` values."""
    rows = [r for r in csv.reader(Path(path).read_text().splitlines()) if r]
    try:
        x = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise StructuralError(f"{path}: {exc}") from None
    if x.ndim != 2 or x.shape[1] % 2:
        raise StructuralError(f"{path}: rows need an even, equal number of values")
    z = x[:, 0::2] + 1j * x[:, 1::2]
    if n_cols is not None and z.shape[1] != n_cols:
        raise StructuralError(f"{path}: expected {n_cols} complex columns, got {z.shape[1]}")
    return z


def write_complex_csv(path, Z: np.ndarray) -> None:
    Z = np.atleast_2d(np.asarray(Z, dtype=complex))
    x = np.empty((Z.shape[0], 2 * Z.shape[1]))
    x[:, 0::2], x[:, 1::2] = Z.real, Z.imag
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in x:
            w.writerow([repr(float(v)) for v in row])
