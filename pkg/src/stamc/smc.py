"""Statistical query evaluation over Monte Carlo engine runs.

The five query forms (probability estimation, hypothesis testing,
probability comparison, expected extrema, multi-trajectory simulation)
plus the dual-route runner for weakly-hard timing constraints.

Statistics: Chernoff-Hoeffding run count for estimation, Clopper-Pearson
exact confidence intervals, Wald SPRT with an indifference region for
hypothesis tests.  Every result records the seed that reproduces it.

Concurrency: runs are dispatched to a process pool and merged strictly in
run-index order, so verdicts and estimates do not depend on the worker
count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import scipy.stats

from . import expr as E
from . import monitors
from .engine import CompiledNetwork, RngStream, RunConfig, run
from .model import Model, Network, instantiate
from .queries import (Compare, ConstraintQuery, Estimate, Expected,
                      Hypothesis, PathFormula, Simulate)


class QueryError(Exception):
    pass


@dataclass
class StatConfig:
    alpha: float = 0.05  # significance level
    epsilon: float = 0.05  # estimation half-width
    delta_indiff: float = 0.01  # SPRT indifference half-width
    max_runs: int = 10 ** 6
    seed: int = 0
    workers: int = 1
    histogram_bins: int = 20

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise QueryError("need 0 < alpha < 1")
        if not 0 < self.epsilon < 0.5:
            raise QueryError("need 0 < epsilon < 0.5")
        if self.delta_indiff <= 0:
            raise QueryError("need delta_indiff > 0")


@dataclass
class SmcResult:
    name: Optional[str]
    verdict: str  # valid | invalid | estimate-only | undecided
    p_hat: Optional[float]
    ci: Optional[tuple]  # (lo, hi)
    runs: int
    wall_ms: float
    seed: int
    histogram: Optional[tuple] = None  # (bin edges, counts)
    details: dict = field(default_factory=dict)


@dataclass
class ConstraintResult:
    """Both routes for one weakly-hard constraint, side by side."""

    observer: SmcResult  # hypothesis test on the observer's fail location
    oracle_fraction: float  # share of runs the trace oracle accepts
    oracle_verdict: str  # same SPRT applied to the oracle outcomes
    runs: int


def chernoff_runs(alpha: float, epsilon: float) -> int:
    """Runs needed so |p_hat - p| <= epsilon with probability 1 - alpha."""
    return math.ceil(math.log(2.0 / alpha) / (2.0 * epsilon * epsilon))


def clopper_pearson(successes: int, n: int, alpha: float) -> tuple:
    """Exact binomial confidence interval at level 1 - alpha."""
    if n <= 0:
        raise QueryError("need n > 0")
    lo = 0.0 if successes == 0 else float(
        scipy.stats.beta.ppf(alpha / 2, successes, n - successes + 1))
    hi = 1.0 if successes == n else float(
        scipy.stats.beta.ppf(1 - alpha / 2, successes + 1, n - successes))
    return (lo, hi)


class Sprt:
    """Wald sequential test of H0: p >= p0 + delta vs H1: p <= p0 - delta."""

    def __init__(self, p0: float, delta: float, alpha: float, beta: float):
        pA = min(p0 + delta, 1.0 - 1e-12)
        pB = max(p0 - delta, 1e-12)
        self._l1 = math.log(pB / pA)  # per-success increment
        self._l0 = math.log((1 - pB) / (1 - pA))  # per-failure increment
        self.upper = math.log((1 - beta) / alpha)  # cross -> accept H1
        self.lower = math.log(beta / (1 - alpha))  # cross -> accept H0
        self.llr = 0.0
        self.decision = None  # "valid" (H0) | "invalid" (H1)
        self.n = 0

    def feed(self, outcome: bool) -> Optional[str]:
        if self.decision is not None:
            return self.decision
        self.n += 1
        self.llr += self._l1 if outcome else self._l0
        if self.llr >= self.upper:
            self.decision = "invalid"
        elif self.llr <= self.lower:
            self.decision = "valid"
        return self.decision


# --- per-run evaluation ----------------------------------------------------


def evaluate_path_formula(trace, f: PathFormula, bound: float) -> bool:
    """Truth of <> / [] over the visited states of one trace.

    States are the watched snapshots: initial, before and after every event,
    and at the bound.  The state expression must be among the trace's
    watched expressions.
    """
    key = E.to_text(f.state_expr)
    want = f.op == "eventually"
    for t, snap in trace.samples():
        if t > bound + 1e-12:
            break
        if key not in snap:
            raise QueryError(f"expression {key!r} not watched on this trace")
        if bool(snap[key]) == want:
            return want
    return not want


def _extremum(trace, key: str, mode: str) -> float:
    pick = max if mode == "max" else min
    best = None
    for _, snap in trace.samples():
        v = float(snap[key])
        best = v if best is None else pick(best, v)
    return best


def _trajectory(trace, keys, bound: float, step: Optional[float]) -> list:
    """Rows (t, v1, ...) at every sample plus a regular grid.

    Grid values between events come from linear interpolation of the
    surrounding snapshots, which is exact for constant-rate clocks.
    """
    samples = [(t, [float(snap[k]) for k in keys])
               for t, snap in trace.samples()]
    rows = [(t, *vals) for t, vals in samples]
    if step:
        n = len(samples)
        j = 0
        t = 0.0
        while t <= bound + 1e-9:
            while j + 1 < n and samples[j + 1][0] <= t:
                j += 1
            t0, v0 = samples[j]
            if j + 1 < n and samples[j + 1][0] > t0:
                t1, v1 = samples[j + 1]
                w = (t - t0) / (t1 - t0)
                vals = [a + w * (b - a) for a, b in zip(v0, v1)]
            else:
                vals = v0
            rows.append((t, *vals))
            t += step
        rows.sort(key=lambda r: r[0])
    return rows


# --- worker plumbing -------------------------------------------------------


@dataclass
class _Job:
    model: Model
    bound: float
    kind: str  # formula | extremum | trajectory | constraint
    watch: tuple  # expression texts
    seed: int
    run_config: RunConfig
    formula: Optional[PathFormula] = None
    mode: str = "max"
    value_key: Optional[str] = None
    sample_step: Optional[float] = None
    constraint: Optional[monitors.WhConstraint] = None
    observer_name: Optional[str] = None


def _run_one(job: _Job, net: CompiledNetwork, index: int):
    rng = RngStream(job.seed, index)
    trace = run(net, job.bound, rng, watch=job.watch, config=job.run_config)
    if job.kind == "formula":
        return evaluate_path_formula(trace, job.formula, job.bound)
    if job.kind == "extremum":
        return _extremum(trace, job.value_key, job.mode)
    if job.kind == "trajectory":
        return _trajectory(trace, job.watch, job.bound, job.sample_step)
    if job.kind == "constraint":
        failed = monitors.observer_failed(trace, job.observer_name)
        oracle = monitors.check_trace(trace, job.constraint)
        return (not failed, oracle.wh_holds)
    raise QueryError(f"unknown job kind {job.kind!r}")


_W_JOB = None
_W_NET = None


def _worker_init(job: _Job):
    global _W_JOB, _W_NET
    _W_JOB = job
    _W_NET = CompiledNetwork(instantiate(job.model))


def _worker_chunk(indices):
    return [_run_one(_W_JOB, _W_NET, i) for i in indices]


class _Runner:
    """Yields per-run outcomes in run-index order, inline or pooled."""

    CHUNK = 32

    def __init__(self, job: _Job, workers: int):
        self.job = job
        self.workers = max(1, workers)
        self._pool = None
        if self.workers == 1:
            self._net = CompiledNetwork(instantiate(job.model))
        else:
            self._pool = ProcessPoolExecutor(
                max_workers=self.workers, initializer=_worker_init,
                initargs=(job,))

    def outcomes(self, total: int):
        if self._pool is None:
            for i in range(total):
                yield _run_one(self.job, self._net, i)
            return
        chunks = [list(range(s, min(s + self.CHUNK, total)))
                  for s in range(0, total, self.CHUNK)]
        window = self.workers * 2
        pending = []
        nxt = 0
        while nxt < len(chunks) or pending:
            while nxt < len(chunks) and len(pending) < window:
                pending.append(self._pool.submit(_worker_chunk, chunks[nxt]))
                nxt += 1
            fut = pending.pop(0)
            yield from fut.result()

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(cancel_futures=True)
            self._pool = None


def _coerce_network(network) -> Model:
    if isinstance(network, Model):
        return network
    if isinstance(network, Network):
        return network.model
    raise QueryError("expected a Model or Network")


def _formula_job(network, f: PathFormula, bound: float, cfg: StatConfig,
                 run_config) -> _Job:
    return _Job(model=_coerce_network(network), bound=bound, kind="formula",
                watch=(E.to_text(f.state_expr),), seed=cfg.seed,
                run_config=run_config or RunConfig(), formula=f)


# --- the five query forms --------------------------------------------------


def estimate_probability(network, f: PathFormula, bound: float,
                         cfg: StatConfig, run_config=None,
                         name=None) -> SmcResult:
    t0 = time.perf_counter()
    n = chernoff_runs(cfg.alpha, cfg.epsilon)
    capped = n > cfg.max_runs
    n = min(n, cfg.max_runs)
    runner = _Runner(_formula_job(network, f, bound, cfg, run_config),
                     cfg.workers)
    try:
        successes = sum(1 for ok in runner.outcomes(n) if ok)
    finally:
        runner.close()
    p_hat = successes / n
    return SmcResult(
        name=name, verdict="undecided" if capped else "estimate-only",
        p_hat=p_hat, ci=clopper_pearson(successes, n, cfg.alpha), runs=n,
        wall_ms=(time.perf_counter() - t0) * 1e3, seed=cfg.seed,
        details={"successes": successes})


def hypothesis_test(network, f: PathFormula, bound: float, p0: float,
                    cfg: StatConfig, run_config=None, name=None) -> SmcResult:
    if not 0 < p0 < 1:
        raise QueryError("need 0 < p0 < 1")
    t0 = time.perf_counter()
    sprt = Sprt(p0, cfg.delta_indiff, cfg.alpha, cfg.alpha)
    runner = _Runner(_formula_job(network, f, bound, cfg, run_config),
                     cfg.workers)
    successes = 0
    try:
        for ok in runner.outcomes(cfg.max_runs):
            successes += bool(ok)
            if sprt.feed(bool(ok)) is not None:
                break
    finally:
        runner.close()
    n = sprt.n
    return SmcResult(
        name=name, verdict=sprt.decision or "undecided",
        p_hat=successes / n if n else None,
        ci=clopper_pearson(successes, n, cfg.alpha) if n else None,
        runs=n, wall_ms=(time.perf_counter() - t0) * 1e3, seed=cfg.seed,
        details={"p0": p0, "successes": successes})


def compare_probabilities(network, f1: PathFormula, b1: float,
                          f2: PathFormula, b2: float, cfg: StatConfig,
                          run_config=None, name=None) -> SmcResult:
    """SPRT on discordant pairs of H0: p1 >= p2 (indifference delta).

    Pairs use independent run sets (distinct seed substreams).  Concordant
    pairs carry no sign information and are skipped.  If the test is still
    open after the estimation run budget it falls back to the indifference
    rule on the point estimates: valid when p1_hat + delta >= p2_hat.
    """
    t0 = time.perf_counter()
    rc = run_config or RunConfig()
    model = _coerce_network(network)
    job1 = _formula_job(model, f1, b1, cfg, rc)
    job2 = replace(_formula_job(model, f2, b2, cfg, rc),
                   seed=cfg.seed + 0x9E3779B9)  # independent substream
    budget = min(chernoff_runs(cfg.alpha, cfg.epsilon), cfg.max_runs)
    sprt = Sprt(0.5, cfg.delta_indiff, cfg.alpha, cfg.alpha)
    r1, r2 = _Runner(job1, cfg.workers), _Runner(job2, cfg.workers)
    s1 = s2 = pairs = 0
    try:
        for x1, x2 in zip(r1.outcomes(budget), r2.outcomes(budget)):
            pairs += 1
            s1 += bool(x1)
            s2 += bool(x2)
            if x1 != x2 and sprt.feed(bool(x1)) is not None:
                break
    finally:
        r1.close()
        r2.close()
    verdict = sprt.decision
    p1_hat, p2_hat = s1 / pairs, s2 / pairs
    if verdict is None:
        if p1_hat + cfg.delta_indiff >= p2_hat:
            verdict = "valid"
        elif pairs < cfg.max_runs:
            verdict = "invalid"
        else:
            verdict = "undecided"
    return SmcResult(
        name=name, verdict=verdict, p_hat=p1_hat - p2_hat, ci=None,
        runs=pairs, wall_ms=(time.perf_counter() - t0) * 1e3, seed=cfg.seed,
        details={"p1_hat": p1_hat, "p2_hat": p2_hat,
                 "discordant": sprt.n})


def expected_value(network, expr, bound: float, n_runs: int, mode: str,
                   cfg: StatConfig, run_config=None, name=None) -> SmcResult:
    if n_runs < 2:
        raise QueryError("need n_runs >= 2")
    if mode not in ("max", "min"):
        raise QueryError("mode is max or min")
    t0 = time.perf_counter()
    key = E.to_text(expr) if not isinstance(expr, str) else expr
    job = _Job(model=_coerce_network(network), bound=bound, kind="extremum",
               watch=(key,), seed=cfg.seed,
               run_config=run_config or RunConfig(), mode=mode, value_key=key)
    runner = _Runner(job, cfg.workers)
    try:
        values = list(runner.outcomes(n_runs))
    finally:
        runner.close()
    import numpy as np
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / math.sqrt(n_runs))
    t_crit = float(scipy.stats.t.ppf(1 - cfg.alpha / 2, n_runs - 1))
    counts, edges = np.histogram(arr, bins=cfg.histogram_bins)
    return SmcResult(
        name=name, verdict="estimate-only", p_hat=mean,
        ci=(mean - t_crit * se, mean + t_crit * se), runs=n_runs,
        wall_ms=(time.perf_counter() - t0) * 1e3, seed=cfg.seed,
        histogram=(edges.tolist(), counts.tolist()),
        details={"mode": mode, "values": values})


def simulate(network, n_runs: int, bound: float, exprs, cfg: StatConfig,
             sample_step: Optional[float] = None, run_config=None) -> list:
    """Trajectory set: per run, rows (t, v1, ...) on a regular grid plus at
    every event."""
    if sample_step is not None and sample_step <= 0:
        raise QueryError("need sample_step > 0")
    keys = tuple(E.to_text(e) if not isinstance(e, str) else e for e in exprs)
    job = _Job(model=_coerce_network(network), bound=bound, kind="trajectory",
               watch=keys, seed=cfg.seed,
               run_config=run_config or RunConfig(), sample_step=sample_step)
    runner = _Runner(job, cfg.workers)
    try:
        return list(runner.outcomes(n_runs))
    finally:
        runner.close()


def trajectories_to_csv(trajectories, exprs) -> str:
    keys = [E.to_text(e) if not isinstance(e, str) else e for e in exprs]
    lines = ["run,t," + ",".join(keys)]
    for i, rows in enumerate(trajectories):
        for row in rows:
            lines.append(f"{i}," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def histogram_to_csv(histogram) -> str:
    edges, counts = histogram
    lines = ["bin_lo,bin_hi,count"]
    for lo, hi, c in zip(edges, edges[1:], counts):
        lines.append(f"{lo!r},{hi!r},{c}")
    return "\n".join(lines) + "\n"


# --- weakly-hard constraints (dual route) ----------------------------------


def check_constraint(network, cq: ConstraintQuery, cfg: StatConfig,
                     run_config=None, name=None) -> ConstraintResult:
    """Hypothesis test Pr[[] !Obs.fail] >= m/k on the observer route, with
    the independent sliding-window trace oracle tallied on the same runs."""
    c = cq.constraint
    model = _coerce_network(network)
    inst = f"_obs_{name or c.kind}"
    observed = monitors.attach_observer(model, c, inst)
    watch = [f"{inst}.fail"]
    for _, b in c.bindings:
        if b.predicate is not None:
            watch.append(E.to_text(b.predicate))
    t0 = time.perf_counter()
    p0 = c.m / c.k
    obs_sprt = Sprt(p0, cfg.delta_indiff, cfg.alpha, cfg.alpha)
    orc_sprt = Sprt(p0, cfg.delta_indiff, cfg.alpha, cfg.alpha)
    job = _Job(model=observed, bound=cq.bound, kind="constraint",
               watch=tuple(watch), seed=cfg.seed,
               run_config=run_config or RunConfig(), constraint=c,
               observer_name=inst)
    runner = _Runner(job, cfg.workers)
    obs_ok = orc_ok = n = 0
    try:
        for obs, orc in runner.outcomes(cfg.max_runs):
            n += 1
            obs_ok += bool(obs)
            orc_ok += bool(orc)
            obs_done = obs_sprt.feed(bool(obs)) is not None
            orc_sprt.feed(bool(orc))
            if obs_done:
                break
    finally:
        runner.close()
    observer = SmcResult(
        name=name, verdict=obs_sprt.decision or "undecided",
        p_hat=obs_ok / n if n else None,
        ci=clopper_pearson(obs_ok, n, cfg.alpha) if n else None, runs=n,
        wall_ms=(time.perf_counter() - t0) * 1e3, seed=cfg.seed,
        details={"p0": p0, "constraint": c.kind})
    return ConstraintResult(
        observer=observer, oracle_fraction=orc_ok / n if n else 0.0,
        oracle_verdict=orc_sprt.decision or "undecided", runs=n)


# --- dispatch --------------------------------------------------------------


def evaluate_query(network, query, cfg: StatConfig, run_config=None,
                   name=None):
    if isinstance(query, Estimate):
        return estimate_probability(network, query.formula, query.bound, cfg,
                                    run_config, name)
    if isinstance(query, Hypothesis):
        return hypothesis_test(network, query.formula, query.bound, query.p0,
                               cfg, run_config, name)
    if isinstance(query, Compare):
        return compare_probabilities(network, query.formula1, query.bound1,
                                     query.formula2, query.bound2, cfg,
                                     run_config, name)
    if isinstance(query, Expected):
        return expected_value(network, query.expr, query.bound, query.n_runs,
                              query.mode, cfg, run_config, name)
    if isinstance(query, Simulate):
        trajectories = simulate(network, query.n_runs, query.bound,
                                query.exprs, cfg, query.sample_step,
                                run_config)
        return SmcResult(name=name, verdict="estimate-only", p_hat=None,
                         ci=None, runs=query.n_runs, wall_ms=0.0,
                         seed=cfg.seed,
                         details={"trajectories": trajectories})
    if isinstance(query, ConstraintQuery):
        return check_constraint(network, query, cfg, run_config, name)
    raise QueryError(f"unsupported query {type(query).__name__}")
