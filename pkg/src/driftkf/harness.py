"""Monte Carlo experiments, error metrics and the step/lambda grid search.

Every Monte Carlo run of an experiment is advanced in one vectorised filter
call: the ensembles of all runs (and, for the grid search, of all seeds)
are stacked on leading batch axes.  Each seed owns its random streams, so a
seed's result does not depend on which other seeds share the batch.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import enkf, rls
from .mill import (
    X5CRNI18_10,
    CoefficientSet,
    EngagementSample,
    ProcessSpec,
    ToolSpec,
    engagement_arc,
    summed_force,
)
from .simulate import (
    CASES,
    DEFAULT_REVS,
    PLOUGHING_THRESHOLD,
    NoiseSpec,
    SignalSeries,
    TrajectoryCase,
    add_noise,
    noise_sigma,
    ploughing_filter,
    simulate_run,
)

log = logging.getLogger(__name__)

METHODS = ("rls", "enkf", "enkf_star")
DIVERGENCE_CAP = 1e6  # N, envelope clipping for divergent RLS runs only

# stream labels for np.random.default_rng([seed, label, ...])
_INIT, _PERTURB, _INFLATE = 1, 2, 3


@dataclass(frozen=True)
class Benchmark:
    """Fixed simulation setup shared by all experiments."""

    tool: ToolSpec = ToolSpec()
    process: ProcessSpec = ProcessSpec()
    base: CoefficientSet = X5CRNI18_10
    n_rev: int = DEFAULT_REVS
    snr: float = 15.0
    h_th: float = PLOUGHING_THRESHOLD
    ensemble_size: int = 100
    subset_fraction: float = 0.10
    rho: float = 0.98
    p0_scale: float = 1e5

    def __post_init__(self):
        engagement_arc(self.process, self.tool)  # a_e must fit the tool
        if self.n_rev < 1 or self.ensemble_size < 2:
            raise ValueError("need n_rev >= 1 and ensemble_size >= 2")
        if not self.snr > 0 or self.h_th < 0:
            raise ValueError("snr must be positive and h_th non-negative")
        if not 0 < self.rho <= 1 or not self.p0_scale > 0:
            raise ValueError("need 0 < rho <= 1 and p0_scale > 0")
        if not 0 < self.subset_fraction <= 1:
            raise ValueError("subset_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    case: str = "static"
    method: str = "enkf_star"
    n_init: int = 50
    step: int = 50
    lam: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")


@dataclass
class Envelope:
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo


def envelope(values, cap=None) -> Envelope:
    """Monte Carlo mean +- 2 std per sample; ``values`` is (n, runs)."""
    v = np.asarray(values, dtype=float)
    if cap is not None:
        v = np.clip(v, -cap, cap)
    mu = v.mean(axis=1)
    sd = v.std(axis=1)
    return Envelope(mean=mu, lo=mu - 2.0 * sd, hi=mu + 2.0 * sd)


@dataclass
class ErrorSeries:
    """Force errors per corrected sample and run, shape (n, n_init)."""

    dft: np.ndarray
    dfr: np.ndarray
    cap: float | None = None

    @property
    def envelope(self) -> Envelope:
        return envelope(self.dft, self.cap)

    @property
    def envelope_r(self) -> Envelope:
        return envelope(self.dfr, self.cap)

    def rms(self) -> float:
        """RMS over samples of the Monte Carlo mean tangential error."""
        return rms_of_mean(self.dft)


def rms_of_mean(errors) -> float:
    mean = np.asarray(errors, dtype=float).mean(axis=1)
    return float(np.sqrt(np.mean(mean ** 2)))


@dataclass
class ExperimentResult:
    config: ExperimentConfig | None
    errors: ErrorSeries
    kt: np.ndarray  # (n, n_init) estimated k_t
    mt: np.ndarray
    kr: np.ndarray
    mr: np.ndarray
    truth: np.ndarray  # (n, 4) as (k_t, k_r, m_t, m_r)
    divergent: int = 0
    singular: int = 0
    inflated_at: list[int] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return len(self.truth)


def force_error(est: CoefficientSet, truth: CoefficientSet, eng: EngagementSample) -> tuple[float, float]:
    """Force difference between estimated and true coefficients on one geometry."""
    h = eng.per_disk_h
    b = eng.b_disk
    d_t = summed_force(est.k_t, est.m_t, b, h) - summed_force(truth.k_t, truth.m_t, b, h)
    d_r = summed_force(est.k_r, est.m_r, b, h) - summed_force(truth.k_r, truth.m_r, b, h)
    return float(d_t), float(d_r)


def _force_errors(h, b, k_hat, m_hat, k_true, m_true):
    """Vectorised force error over samples; estimates are (n, *batch)."""
    out = np.empty(k_hat.shape)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(len(h)):
            out[i] = (summed_force(k_hat[i], m_hat[i], b, h[i])
                      - summed_force(k_true[i], m_true[i], b, h[i]))
    return out


# -- setup -----------------------------------------------------------------

@lru_cache(maxsize=32)
def clean_signal(bench: Benchmark, case: str) -> SignalSeries:
    return simulate_run(bench.tool, bench.process, TrajectoryCase(case), bench.n_rev, bench.base)


def measured_signal(bench: Benchmark, case: str, seed: int) -> SignalSeries:
    """Noisy, ploughing-filtered signal of one seed."""
    noisy = add_noise(clean_signal(bench, case), NoiseSpec(bench.snr, seed))
    return ploughing_filter(noisy, bench.h_th)


def measurement_cov(bench: Benchmark, case: str) -> np.ndarray:
    """Observation perturbation covariance: the generator's noise variance."""
    sigma = noise_sigma(clean_signal(bench, case), bench.snr)
    return np.diag(np.square(sigma))


def initial_ensembles(bench: Benchmark, seed: int, n_init: int):
    """The ``n_init`` initial ensembles of a seed, identical for every case.

    Returns ``(X0, P0)`` of shapes (n_init, J, 6) and (n_init, 4, 4).
    """
    Xs, Ps = [], []
    for r in range(n_init):
        X, P = enkf.init_ensemble(bench.ensemble_size, np.random.default_rng([seed, _INIT, r]))
        Xs.append(X)
        Ps.append(P)
    return np.stack(Xs), np.stack(Ps)


# -- running ---------------------------------------------------------------

def _estimate(method, series_h, b, y, X0, P0, gamma, seeds, policy, bench):
    """Coefficient traces for a batch (seeds, runs); y is (n, seeds, 2).

    Returns ``(traces, divergent, singular, inflated_at)`` with ``traces``
    of shape (n, seeds, runs, 4) ordered (k_t, k_r, m_t, m_r).
    """
    if method == "rls":
        x0 = enkf.member_mean(X0[..., enkf.PARAMS])  # (seeds, runs, 4)
        tr_t, st_t = rls.rls_run(series_h, b, y[:, :, None, 0], x0[..., [0, 2]],
                                 bench.p0_scale, bench.rho)
        tr_r, st_r = rls.rls_run(series_h, b, y[:, :, None, 1], x0[..., [1, 3]],
                                 bench.p0_scale, bench.rho)
        traces = np.stack([tr_t[..., 0], tr_r[..., 0], tr_t[..., 1], tr_r[..., 1]], axis=-1)
        divergent = (st_t.divergent | st_r.divergent).sum(axis=-1)
        return traces, divergent, np.zeros_like(divergent), []
    perturb_rngs = [np.random.default_rng([s, _PERTURB]) for s in seeds]
    inflate_rngs = [np.random.default_rng([s, _INFLATE]) for s in seeds]
    trace = enkf.enkf_run(
        series_h, b, y[:, :, None, :], X0, gamma, perturb_rngs,
        policy=policy, P0=P0, inflate_rng=inflate_rngs, record_spread=False,
    )
    return trace.mean, np.zeros(len(seeds), dtype=int), trace.singular.sum(axis=-1), trace.inflated_at


def _assemble(signals, seeds, method, n_init, step, lam, bench, gamma, configs):
    ref = signals[0]
    h, b = ref.h, ref.b_disk
    y = np.stack([np.stack([s.ft_noisy, s.fr_noisy], axis=1) for s in signals], axis=1)
    ens = [initial_ensembles(bench, s, n_init) for s in seeds]
    X0 = np.stack([e[0] for e in ens])
    P0 = np.stack([e[1] for e in ens])
    policy = None
    if method == "enkf_star":
        policy = enkf.InflationPolicy(step=step, lam=lam, subset_fraction=bench.subset_fraction)
    traces, divergent, singular, inflated_at = _estimate(
        method, h, b, y, X0, P0, gamma, seeds, policy, bench)
    truth = ref.coeffs
    dft = _force_errors(h, b, traces[..., 0], traces[..., 2], truth[:, 0, None, None], truth[:, 2, None, None])
    dfr = _force_errors(h, b, traces[..., 1], traces[..., 3], truth[:, 1, None, None], truth[:, 3, None, None])
    cap = DIVERGENCE_CAP if method == "rls" else None
    results = []
    for i, s in enumerate(seeds):
        results.append(ExperimentResult(
            config=configs[i],
            errors=ErrorSeries(dft=dft[:, i], dfr=dfr[:, i], cap=cap),
            kt=traces[:, i, :, 0], kr=traces[:, i, :, 1],
            mt=traces[:, i, :, 2], mr=traces[:, i, :, 3],
            truth=truth, divergent=int(divergent[i]), singular=int(singular[i]),
            inflated_at=list(inflated_at),
        ))
        if divergent[i]:
            log.warning("%s seed %d: %d divergent run(s)", method, s, divergent[i])
    return results


def run_batch(bench: Benchmark, case: str, method: str, seeds, n_init: int,
              step: int = 50, lam: float = 10.0) -> list[ExperimentResult]:
    """One experiment per seed, all seeds advanced together."""
    seeds = [int(s) for s in seeds]
    signals = [measured_signal(bench, case, s) for s in seeds]
    configs = [ExperimentConfig(case=case, method=method, n_init=n_init, step=step, lam=lam, seed=s)
               for s in seeds]
    return _assemble(signals, seeds, method, n_init, step, lam, bench,
                     measurement_cov(bench, case), configs)


def identify(series: SignalSeries, method: str, gamma, seed: int = 0, n_init: int = 1,
             step: int = 50, lam: float = 10.0, bench: Benchmark = Benchmark()) -> ExperimentResult:
    """Identify coefficients on an already filtered signal (e.g. read from CSV).

    ``config`` of the result is ``None`` since the trajectory case is unknown.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if len(series) == 0:
        raise ValueError("no corrected samples to identify from")
    return _assemble([series], [int(seed)], method, n_init, step, lam, bench,
                     np.asarray(gamma, dtype=float), [None])[0]


def run_experiment(cfg: ExperimentConfig, bench: Benchmark = Benchmark()) -> ExperimentResult:
    return run_batch(bench, cfg.case, cfg.method, [cfg.seed], cfg.n_init, cfg.step, cfg.lam)[0]


# -- grid search -------------------------------------------------------------

GRID_STEPS = (50, 100, 200)
GRID_LAMBDAS = (1.0, 1.5, 2.0, 5.0, 10.0)


@dataclass
class RmsRow:
    method: str
    step: float
    lam: float | None
    rms: dict[str, float]


@dataclass
class RmsTable:
    rows: list[RmsRow]

    def get(self, method, step=math.inf, lam=None) -> RmsRow:
        for row in self.rows:
            if row.method == method and row.step == step and row.lam == lam:
                return row
        raise KeyError((method, step, lam))

    @property
    def classic(self) -> RmsRow:
        return self.get("enkf")

    def star_rows(self):
        return [r for r in self.rows if r.method == "enkf_star"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "step", "lambda", *CASES])
            for row in self.rows:
                step = "inf" if math.isinf(row.step) else str(int(row.step))
                lam = "" if row.lam is None else repr(float(row.lam))
                w.writerow([row.method, step, lam,
                            *(repr(row.rms[c]) if c in row.rms else "" for c in CASES)])


@dataclass
class GridResult:
    tables: dict[int, RmsTable]  # per seed
    envelopes: dict[tuple, list[Envelope]]  # (method, step, lam, case) -> per seed

    def mean_table(self) -> RmsTable:
        seeds = sorted(self.tables)
        first = self.tables[seeds[0]]
        rows = []
        for i, row in enumerate(first.rows):
            rms = {c: float(np.mean([self.tables[s].rows[i].rms[c] for s in seeds])) for c in row.rms}
            rows.append(RmsRow(row.method, row.step, row.lam, rms))
        return RmsTable(rows)


def grid_search(bench: Benchmark = Benchmark(), seeds=(0,), n_init: int = 50,
                steps=GRID_STEPS, lambdas=GRID_LAMBDAS, cases=CASES) -> GridResult:
    """RMS of the Monte Carlo mean tangential error for every grid cell.

    The classic filter contributes one row with ``step = inf``.
    """
    seeds = [int(s) for s in seeds]
    cells = [("enkf_star", float(s), float(l)) for s in steps for l in lambdas]
    cells.append(("enkf", math.inf, None))
    per_seed = {s: {cell: {} for cell in cells} for s in seeds}
    envelopes = {}
    for case in cases:
        for method, step, lam in cells:
            log.info("grid %s step=%s lambda=%s case=%s", method, step, lam, case)
            results = run_batch(bench, case, method, seeds, n_init,
                                step=int(step) if math.isfinite(step) else 0,
                                lam=lam if lam is not None else 1.0)
            envelopes[(method, step, lam, case)] = [r.errors.envelope for r in results]
            for s, r in zip(seeds, results):
                per_seed[s][(method, step, lam)][case] = r.errors.rms()
    tables = {
        s: RmsTable([RmsRow(m, st, l, per_seed[s][(m, st, l)]) for m, st, l in cells])
        for s in seeds
    }
    return GridResult(tables=tables, envelopes=envelopes)


def table_orderings(table: RmsTable) -> dict[str, bool]:
    """Qualitative structure expected of the RMS table.

    a: classic filter has the lowest static RMS
    b: classic filter has the highest alternating RMS
    c: for every lambda, alternating RMS grows with the inflation step
    d: for every lambda, static RMS shrinks with the inflation step
    """
    classic = table.classic
    star = table.star_rows()
    checks = {}
    if "static" in classic.rms:
        checks["a"] = all(classic.rms["static"] < r.rms["static"] for r in star)
    if "alternating" in classic.rms:
        checks["b"] = all(classic.rms["alternating"] > r.rms["alternating"] for r in star)
    lambdas = sorted({r.lam for r in star})

    def monotone(case, increasing):
        for lam in lambdas:
            vals = [r.rms[case] for r in sorted(star, key=lambda r: r.step) if r.lam == lam]
            pairs = zip(vals, vals[1:])
            if not all((a < b) if increasing else (a > b) for a, b in pairs):
                return False
        return True

    if "alternating" in classic.rms:
        checks["c"] = monotone("alternating", True)
    if "static" in classic.rms:
        checks["d"] = monotone("static", False)
    return checks


# -- CSV ---------------------------------------------------------------------

def write_envelope_csv(env: Envelope, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "mean", "lo", "hi"])
        for i in range(len(env.mean)):
            w.writerow([i, repr(float(env.mean[i])), repr(float(env.lo[i])), repr(float(env.hi[i]))])


def write_experiment_csvs(result: ExperimentResult, out_dir, tag=None) -> list:
    """``eF_``, ``ki_`` and ``mi_`` envelope files of one experiment."""
    out_dir = Path(out_dir)
    if tag is None:
        tag = f"{result.config.method}_{result.config.case}"
    cap = result.errors.cap
    files = {
        f"eF_{tag}.csv": result.errors.envelope,
        f"ki_{tag}.csv": envelope(result.kt, cap),
        f"mi_{tag}.csv": envelope(result.mt, cap),
    }
    written = []
    for name, env in files.items():
        write_envelope_csv(env, out_dir / name)
        written.append(out_dir / name)
    return written
