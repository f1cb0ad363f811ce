"""Monte Carlo experiments: functional sampling over a t-grid, moment and
distance-to-normal estimates, scaling fits, Mecke and p-Poincaré checks."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ArgumentError, DegenerateInputError, NumericError
from .functionals import FunctionalSpec, add_one_cost_fast, evaluate
from .geometry import ConvexBody
from .sampling import MarkedPointConfig, RngStream, derive_stream_id, find_degenerate, sample_poisson

BOOTSTRAP_RESAMPLES = 200
STREAM_TAGS = {
    "simulate": 1,
    "variance-scan": 2,
    "clt-distance": 3,
    "verify": 4,
    "mecke": 5,
    "poincare": 6,
    "compound": 7,
    "conditional": 8,
}


# ---------------------------------------------------------------------------
# experiment specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    """A t-grid experiment.

    Gilbert experiments follow the intensity scaling: a Poisson process of
    intensity ``intensity * t`` on the fixed window ``body`` with radius
    epsilon_t. All other families use the window scaling: intensity
    ``intensity`` on ``body.scale(t)``.

    ``epsilon_rule`` is ``("constant", eps)`` or ``("power", theta)`` with
    eps_t^d = t^-theta.
    """

    functional: FunctionalSpec
    body: ConvexBody
    t_grid: Tuple[float, ...]
    replicates: int
    base_seed: int = 0
    intensity: float = 1.0
    epsilon_rule: Optional[Tuple[str, float]] = None
    stream_tag: int = STREAM_TAGS["simulate"]

    def __post_init__(self):
        grid = tuple(float(t) for t in self.t_grid)
        object.__setattr__(self, "t_grid", grid)
        if not grid:
            raise ArgumentError("t_grid is empty")
        if any(t <= 0 for t in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ArgumentError("t_grid must be positive and strictly increasing")
        if int(self.replicates) != self.replicates or self.replicates < 2:
            raise ArgumentError("replicates must be an integer >= 2")
        if not self.intensity > 0:
            raise ArgumentError("intensity must be positive")
        if self.family == "gilbert":
            rule = self.epsilon_rule
            if rule is None:
                rule = ("constant", float(self.functional.graph_params["epsilon"]))
                object.__setattr__(self, "epsilon_rule", rule)
            if rule[0] not in ("constant", "power") or not rule[1] > 0:
                raise ArgumentError("epsilon_rule must be ('constant', eps>0) or ('power', theta>0)")

    @property
    def family(self) -> str:
        return self.functional.family

    @property
    def dimension(self) -> int:
        return self.body.dimension

    def epsilon(self, t: float) -> Optional[float]:
        if self.family != "gilbert":
            return None
        kind, value = self.epsilon_rule
        if kind == "constant":
            return float(value)
        return float(t ** (-value / self.dimension))

    def window(self, t: float) -> Tuple[ConvexBody, float]:
        """(body, intensity) of the Poisson process at parameter t."""
        if self.family == "gilbert":
            return self.body, self.intensity * t
        return self.body.scale(t), self.intensity

    def functional_at(self, t: float) -> FunctionalSpec:
        if self.family != "gilbert":
            return self.functional
        params = dict(self.functional.graph_params, epsilon=self.epsilon(t))
        f = self.functional
        return FunctionalSpec(f.family, f.weight, f.alpha, f.phi, f.phi_a, params)

    def to_dict(self) -> dict:
        return {
            "functional": self.functional.to_dict(),
            "body": self.body.to_dict(),
            "t_grid": list(self.t_grid),
            "replicates": int(self.replicates),
            "base_seed": int(self.base_seed),
            "intensity": self.intensity,
            "epsilon_rule": list(self.epsilon_rule) if self.epsilon_rule else None,
            "stream_tag": self.stream_tag,
        }


def _replicate(task) -> Tuple[int, float]:
    spec, t_index, rep, max_points = task
    t = spec.t_grid[t_index]
    body, intensity = spec.window(t)
    stream = RngStream(spec.base_seed, derive_stream_id(spec.stream_tag, t_index, rep))
    config = sample_poisson(body, intensity, spec.family == "onng", stream, max_points)
    fspec = spec.functional_at(t)
    return config.n, evaluate(fspec, fspec.build(config))


def _run_tasks(fn, tasks: list, workers: int) -> list:
    """Map ``fn`` over ``tasks`` keeping task order, inline or on a process pool."""
    if workers <= 1 or len(tasks) < 2:
        return [fn(task) for task in tasks]
    chunk = max(1, len(tasks) // (8 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


# ---------------------------------------------------------------------------
# summary statistics
# ---------------------------------------------------------------------------

def _standardize(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < 2:
        raise ArgumentError("need at least two samples")
    sd = x.std()
    if not sd > 0 or not math.isfinite(sd):
        raise NumericError("samples have zero variance")
    # ddof=0 so that the standardized sample has unit second moment
    return np.sort((x - x.mean()) / sd)


def kolmogorov_to_normal(samples) -> float:
    """sup_z |F_n(z) - Phi(z)| after standardizing by sample mean and std."""
    z = _standardize(samples)
    n = len(z)
    cdf = ndtr(z)
    i = np.arange(1, n + 1)
    return float(min(1.0, max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n))))


def wasserstein1_to_normal(samples) -> float:
    """Quantile-coupling estimate (1/n) sum |X_(i) - Phi^-1((i - 1/2)/n)|."""
    z = _standardize(samples)
    n = len(z)
    q = ndtri((np.arange(1, n + 1) - 0.5) / n)
    return float(np.mean(np.abs(z - q)))


def jackknife_variance_se(samples) -> float:
    """Jackknife standard error of the unbiased sample variance.

    Uses the closed-form leave-one-out variances; for two samples, where the
    jackknife is undefined, falls back to the normal-theory value var*sqrt(2).
    """
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n < 2:
        raise ArgumentError("need at least two samples")
    dev2 = (x - x.mean()) ** 2
    ss = dev2.sum()
    if n == 2:
        return float(ss * math.sqrt(2.0))
    loo = (ss - n / (n - 1) * dev2) / (n - 2)
    return float(math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def bootstrap_se(samples, statistic, seed: int, resamples: int = BOOTSTRAP_RESAMPLES) -> float:
    x = np.asarray(samples, dtype=float)
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(resamples):
        try:
            vals.append(statistic(x[rng.integers(0, len(x), len(x))]))
        except NumericError:
            continue
    return float(np.std(vals, ddof=1)) if len(vals) > 1 else float("nan")


@dataclass
class TRow:
    t: float
    n_mean: float
    mean: float
    mean_se: float
    var: float
    var_se: float
    dK: float
    dK_se: float
    dW: float


CSV_FIELDS = ("t", "n_mean", "mean", "mean_se", "var", "var_se", "dK", "dW")


def summarize(t: float, values, counts=None, seed: int = 0, bootstrap: bool = True) -> TRow:
    x = np.asarray(values, dtype=float)
    n = len(x)
    if n < 2:
        raise ArgumentError("need at least two replicates")
    var = float(x.var(ddof=1))
    mean_se = math.sqrt(var / n)
    try:
        dk = kolmogorov_to_normal(x)
        dw = wasserstein1_to_normal(x)
        dk_se = bootstrap_se(x, kolmogorov_to_normal, seed) if bootstrap and n > 2 else float("nan")
    except NumericError:
        dk = dw = dk_se = float("nan")
    n_mean = float(np.mean(counts)) if counts is not None else float("nan")
    return TRow(float(t), n_mean, float(x.mean()), mean_se, var, jackknife_variance_se(x), dk, dk_se, dw)


@dataclass
class EstimateReport:
    rows: List[TRow]
    samples: List[np.ndarray]
    counts: List[np.ndarray]
    spec: Optional[dict] = None
    fits: Dict[str, object] = field(default_factory=dict)

    @property
    def t_grid(self) -> np.ndarray:
        return np.array([r.t for r in self.rows])

    @property
    def variances(self) -> np.ndarray:
        return np.array([r.var for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            w.writerow([format(float(getattr(r, f)), ".17g") for f in CSV_FIELDS])
        return buf.getvalue()

    def samples_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "replicate", "n_points", "value"])
        for row, vals, cnts in zip(self.rows, self.samples, self.counts):
            for k, (v, c) in enumerate(zip(vals, cnts)):
                w.writerow([format(row.t, ".17g"), k, int(c), format(float(v), ".17g")])
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "spec": self.spec,
            "rows": [{k: _json_float(v) for k, v in vars(r).items()} for r in self.rows],
            "fits": _jsonable(self.fits),
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _json_float(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return _json_float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def report_from_samples(t_grid, samples, counts=None, spec=None, seed: int = 0) -> EstimateReport:
    counts = counts if counts is not None else [np.full(len(s), -1) for s in samples]
    rows = [summarize(t, s, c, seed=seed + k) for k, (t, s, c) in enumerate(zip(t_grid, samples, counts))]
    return EstimateReport(rows, [np.asarray(s, dtype=float) for s in samples], [np.asarray(c) for c in counts], spec)


def run_experiment(spec: ExperimentSpec, workers: int = 1, max_points: Optional[int] = None) -> EstimateReport:
    """Sample the functional for every (t, replicate) on independent streams.

    Results are aggregated in replicate order, so the report does not
    depend on ``workers``.
    """
    tasks = [(spec, ti, rep, max_points) for ti in range(len(spec.t_grid)) for rep in range(spec.replicates)]
    out = _run_tasks(_replicate, tasks, workers)
    r = spec.replicates
    counts = [np.array([n for n, _ in out[k * r:(k + 1) * r]]) for k in range(len(spec.t_grid))]
    values = [np.array([v for _, v in out[k * r:(k + 1) * r]]) for k in range(len(spec.t_grid))]
    return report_from_samples(spec.t_grid, values, counts, spec.to_dict(), seed=spec.base_seed)


# ---------------------------------------------------------------------------
# scaling fits
# ---------------------------------------------------------------------------

def fit_variance_scaling(t_grid, variances, d: int = 1) -> dict:
    """Least-squares slope of log var on log t, plus var / (t^d log t^d)."""
    t = np.asarray(t_grid, dtype=float)
    v = np.asarray(variances, dtype=float)
    if len(t) < 3:
        raise ArgumentError("need at least three grid points")
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise NumericError("variance must be positive at every t")
    x, y = np.log(t), np.log(v)
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = len(t) - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    sxx = float(np.sum((x - x.mean()) ** 2))
    td = t**d
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = v / (td * np.log(td))
    return {
        "slope": float(coef[0]),
        "intercept": float(coef[1]),
        "slope_stderr": math.sqrt(s2 / sxx),
        "log_corrected_ratio": ratio.tolist(),
    }


def fit_report(report: EstimateReport, d: int) -> dict:
    fit = fit_variance_scaling(report.t_grid, report.variances, d)
    report.fits["variance"] = fit
    return fit


def ratio_spread(values) -> float:
    """(max - min) / min of a positive sequence."""
    v = np.asarray(values, dtype=float)
    return float((v.max() - v.min()) / v.min())


# ---------------------------------------------------------------------------
# compound Poisson example
# ---------------------------------------------------------------------------

def compound_poisson_sample(T: float, stream: RngStream) -> float:
    """F_T = sum_{i <= N(T)} X_i with X_i = +-1: a unit-rate marked Poisson
    process on [0, T] whose marks below 1/2 carry -1."""
    body = ConvexBody.box([0.0], [float(T)])
    # no graph is built, so only positions and marks need to be distinct
    config = sample_poisson(body, 1.0, True, stream, pairwise_check=False)
    return float(np.sum(np.where(config.marks < 0.5, -1.0, 1.0)))


def _compound_task(task):
    T, seed, t_index, rep = task
    return compound_poisson_sample(T, RngStream(seed, derive_stream_id(STREAM_TAGS["compound"], t_index, rep)))


def compound_poisson_experiment(T_grid: Sequence[float], replicates: int, seed: int, workers: int = 1) -> EstimateReport:
    tasks = [(float(T), seed, ti, rep) for ti, T in enumerate(T_grid) for rep in range(replicates)]
    out = _run_tasks(_compound_task, tasks, workers)
    samples = [np.array(out[k * replicates:(k + 1) * replicates]) for k in range(len(T_grid))]
    return report_from_samples(T_grid, samples, spec={"compound_poisson": list(T_grid), "replicates": replicates}, seed=seed)


# ---------------------------------------------------------------------------
# Mecke formula
# ---------------------------------------------------------------------------

MECKE_CATALOGUE = ("one", "nn_distance_capped", "neighbour_indicator")
NEIGHBOUR_RADIUS = 0.3


def _mecke_h(h_id: str, positions: np.ndarray, w_index: int) -> float:
    """h(chi, w) for w = positions[w_index], a point of chi."""
    if h_id == "one":
        return 1.0
    others = np.delete(positions, w_index, axis=0)
    if len(others) == 0:
        nn = math.inf
    else:
        nn = float(np.min(np.linalg.norm(others - positions[w_index], axis=1)))
    if h_id == "nn_distance_capped":
        return min(1.0, nn)
    if h_id == "neighbour_indicator":
        return 1.0 if nn < NEIGHBOUR_RADIUS else 0.0
    raise ArgumentError(f"unknown Mecke test function {h_id!r}; choose from {MECKE_CATALOGUE}")


@dataclass(frozen=True)
class CheckResult:
    lhs: float
    rhs: float
    lhs_se: float
    rhs_se: float

    @property
    def pooled_se(self) -> float:
        return math.hypot(self.lhs_se, self.rhs_se)

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    def equal_within(self, k: float = 3.0) -> bool:
        return abs(self.lhs - self.rhs) <= k * self.pooled_se

    def inequality_holds(self, k: float = 3.0) -> bool:
        return self.margin >= -k * self.pooled_se

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "lhs_se": self.lhs_se, "rhs_se": self.rhs_se,
                "pooled_se": self.pooled_se, "margin": self.margin}


def _mean_se(x) -> Tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


def mecke_check(
    h_id: str,
    body: ConvexBody,
    intensity: float,
    replicates: int,
    seed: int,
    probes: int = 8,
) -> CheckResult:
    """Both sides of E sum_{w in chi} h(chi, w) = E ∫ h(chi + delta_w, w) nu(dw)."""
    if h_id not in MECKE_CATALOGUE:
        raise ArgumentError(f"unknown Mecke test function {h_id!r}")
    mass = intensity * body.volume
    lhs, rhs = [], []
    for rep in range(replicates):
        stream = RngStream(seed, derive_stream_id(STREAM_TAGS["mecke"], 0, rep))
        config = sample_poisson(body, intensity, False, stream)
        pos = config.positions
        lhs.append(math.fsum(_mecke_h(h_id, pos, i) for i in range(config.n)))
        rng = RngStream(seed, derive_stream_id(STREAM_TAGS["mecke"], 1, rep)).generator()
        ws = body.sample_uniform(rng, probes)
        vals = [_mecke_h(h_id, np.vstack([pos, w[None, :]]), config.n) for w in ws]
        rhs.append(mass * float(np.mean(vals)))
    l, lse = _mean_se(lhs)
    r, rse = _mean_se(rhs)
    return CheckResult(l, r, lse, rse)


# ---------------------------------------------------------------------------
# p-Poincaré inequality
# ---------------------------------------------------------------------------

def poincare_check(
    functional: Union[FunctionalSpec, str],
    p: float,
    body: ConvexBody,
    intensity: float,
    replicates: int,
    seed: int,
    probes: int = 4,
) -> CheckResult:
    """E|F|^p - |E F|^p versus 2^(2-p) E ∫ |D_x F|^p lambda(dx).

    ``functional`` is a FunctionalSpec or ``"count"`` (F = number of points,
    for which D_x F = 1). For the ONNG the probe marks are uniform, so the
    integral runs over body x [0, 1].
    """
    if not 1.0 <= p <= 2.0:
        raise ArgumentError("p must lie in [1, 2]")
    count = functional == "count"
    marked = not count and functional.family == "onng"
    mass = intensity * body.volume
    f_vals, d_vals = [], []
    for rep in range(replicates):
        stream = RngStream(seed, derive_stream_id(STREAM_TAGS["poincare"], 0, rep))
        config = sample_poisson(body, intensity, marked, stream)
        if count:
            f_vals.append(float(config.n))
            d_vals.append(mass * 1.0)
            continue
        graph = functional.build(config)
        f_vals.append(evaluate(functional, graph))
        rng = RngStream(seed, derive_stream_id(STREAM_TAGS["poincare"], 1, rep)).generator()
        ws = body.sample_uniform(rng, probes)
        marks = rng.random(probes) if marked else [None] * probes
        costs = []
        for w, m in zip(ws, marks):
            try:
                costs.append(abs(add_one_cost_fast(functional, config, graph, w, m).first_order) ** p)
            except DegenerateInputError:
                continue
        d_vals.append(mass * float(np.mean(costs)) if costs else 0.0)
    f = np.asarray(f_vals)
    n = len(f)
    m1 = float(f.mean())
    absp = np.abs(f) ** p
    mp = float(absp.mean())
    lhs = mp - abs(m1) ** p
    # delta-method standard error of mean|F|^p - |mean F|^p
    grad = absp - p * abs(m1) ** (p - 1) * math.copysign(1.0, m1) * f
    lhs_se = float(np.std(grad, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    r, rse = _mean_se(d_vals)
    factor = 2.0 ** (2.0 - p)
    return CheckResult(lhs, factor * r, lhs_se, factor * rse)


# ---------------------------------------------------------------------------
# conditional add-one cost
# ---------------------------------------------------------------------------

def conditional_cost_estimator(
    spec: FunctionalSpec,
    config: MarkedPointConfig,
    probe,
    s: float,
    inner_replicates: int,
    seed: int,
    intensity: float = 1.0,
) -> float:
    """Nested Monte Carlo estimate of E[|D_(x,s) F| | points with mark < s].

    The past (marks < s) is kept; the future is redrawn as a Poisson process
    of intensity ``intensity * (1 - s)`` with marks uniform on [s, 1].
    """
    if spec.family != "onng" or not config.marked:
        raise ArgumentError("conditional cost estimator needs a marked ONNG configuration")
    if not 0.0 < s <= 1.0:
        raise ArgumentError("probe mark must lie in (0, 1]")
    if inner_replicates < 1:
        raise ArgumentError("inner_replicates must be positive")
    past = config.subset(config.marks < s)
    total = []
    for rep in range(inner_replicates):
        stream = RngStream(seed, derive_stream_id(STREAM_TAGS["conditional"], 0, rep))
        future = sample_poisson(config.body, intensity * (1.0 - s), True, stream)
        pos = np.vstack([past.positions, future.positions])
        marks = np.concatenate([past.marks, s + (1.0 - s) * future.marks])
        if find_degenerate(pos, marks) is not None:
            raise DegenerateInputError("resampled future is not generic")
        full = MarkedPointConfig(pos, config.body, marks, config.seed_record)
        total.append(abs(add_one_cost_fast(spec, full, None, probe, s).first_order))
    return float(np.mean(total))
