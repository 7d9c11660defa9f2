"""Seeded simulation and replication experiments.

Replication ``i`` of an experiment seeded with ``seed`` draws from its own
Philox stream keyed by ``(seed, i)``, so results do not depend on how
replications are scheduled. Normal variates come from the inverse normal CDF
applied to 53-bit uniforms that never hit 0 or 1.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .exceptions import ConfigurationError, UCError
from .series import MonthIndex, TimeSeries

__all__ = [
    "replication_rng",
    "standard_normal",
    "simulate_ssm",
    "cvm_statistic_draws",
    "critical_value_table",
    "SimulationPlan",
    "ExperimentReport",
    "run_experiment",
    "CRITVALS_SCHEMA",
]

CRITVALS_SCHEMA = 1
_TWO53 = float(2**53)


def replication_rng(seed, index=0):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def standard_normal(rng, size):
    u = (rng.integers(0, 2**53, size=size, dtype=np.uint64).astype(float) + 0.5) / _TWO53
    return ndtri(u)


def simulate_ssm(system, n, seed, initial_state=None, replication=0, start=None,
                 label="simulated", return_states=False):
    """Draw ``y_1..y_n`` from a state-space system.

    Diffuse states start at ``initial_state`` (default ``system.a1``); the
    proper part ``P_star`` of the initial covariance is sampled.
    """
    n = int(n)
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    rng = replication_rng(seed, replication)
    m = system.m
    r = system.R.shape[1]
    draws = standard_normal(rng, (n, r + 1))
    a = np.array(system.a1 if initial_state is None else initial_state, dtype=float)
    if a.shape != (m,):
        raise ConfigurationError(f"initial_state must have length {m}")
    Ps = np.asarray(system.P_star)
    if np.any(Ps != 0):
        w, V = np.linalg.eigh(0.5 * (Ps + Ps.T))
        a = a + V @ (np.sqrt(np.clip(w, 0, None)) * standard_normal(rng, m))
    q_sd = np.sqrt(np.clip(np.diag(system.Q), 0, None))
    h_sd = math.sqrt(max(system.H, 0.0))
    Z, T, R = system.Z, system.T, system.R
    y = np.empty(n)
    states = np.empty((n, m))
    for t in range(n):
        states[t] = a
        y[t] = Z @ a + h_sd * draws[t, 0]
        a = T @ a + R @ (q_sd * draws[t, 1:])
    ts = TimeSeries(start or MonthIndex(2000, 1), y, "level", label)
    return (ts, states) if return_states else ts


def _cvm_components(rng, n_comp, T, detrend):
    """``n_comp`` independent finite-T Cramer-von Mises functionals."""
    e = standard_normal(rng, (n_comp, T))
    if detrend:
        t = np.arange(1, T + 1, dtype=float)
        X = np.column_stack([np.ones(T), t])
        beta = np.linalg.lstsq(X, e.T, rcond=None)[0]
        e = e - (X @ beta).T
    else:
        e = e - e.mean(axis=1, keepdims=True)
    S = np.cumsum(e, axis=1)
    s2 = np.mean(e * e, axis=1)
    return np.sum(S * S, axis=1) / (T * T * s2)


def cvm_statistic_draws(replications, df_max, T=2000, seed=0, detrend=False):
    """Matrix ``(replications, df_max)`` of cumulated functional draws.

    Column ``k - 1`` is a draw from the generalized Cramer-von Mises law with
    ``k`` degrees of freedom (the sum of ``k`` independent one-df draws).
    """
    out = np.empty((int(replications), int(df_max)))
    for i in range(int(replications)):
        rng = replication_rng(seed, i)
        out[i] = np.cumsum(_cvm_components(rng, df_max, int(T), detrend))
    return out


def critical_value_table(replications=100_000, df_max=12, T=2000, seed=20240601,
                         levels=(0.10, 0.05, 0.01), detrend=False, batches=10):
    """Upper-tail quantiles of the generalized Cramer-von Mises law.

    Returns ``{"values": {df: {level: q}}, "mcse": {...}}``; standard errors
    come from batch means over ``batches`` equal blocks.
    """
    draws = cvm_statistic_draws(replications, df_max, T, seed, detrend)
    vals, mcse = {}, {}
    for k in range(df_max):
        col = draws[:, k]
        vals[str(k + 1)] = {f"{lv:.2f}": float(np.quantile(col, 1.0 - lv)) for lv in levels}
        blocks = np.array_split(col, batches)
        mcse[str(k + 1)] = {
            f"{lv:.2f}": float(np.std([np.quantile(b, 1.0 - lv) for b in blocks], ddof=1) / math.sqrt(batches))
            for lv in levels
        }
    return {"values": vals, "mcse": mcse}


@dataclass(frozen=True)
class SimulationPlan:
    """Description of a replication experiment.

    ``kind`` is one of ``simulate``, ``critvals``, ``size_power``,
    ``recovery`` or ``coverage``. Experiment-specific settings go in
    ``options``.
    """

    kind: str
    T: int = 150
    replications: int = 1000
    seed: int = 0
    system: object = None
    spec: object = None
    params: object = None
    initial_state: tuple = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("simulate", "critvals", "size_power", "recovery", "coverage"):
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}")
        if int(self.replications) < 1:
            raise ConfigurationError("replications must be >= 1")
        if int(self.T) < 10:
            raise ConfigurationError("T must be >= 10")

    def resolve_system(self):
        from .model_spec import assemble

        if self.system is not None:
            return self.system
        if self.spec is None or self.params is None:
            raise ConfigurationError(f"{self.kind} plan needs a system or spec+params")
        return assemble(self.spec, self.params)


@dataclass(frozen=True)
class ExperimentReport:
    kind: str
    summary: dict
    per_replication: list
    failures: int
    replications: int

    def to_dict(self):
        return {
            "kind": self.kind,
            "summary": self.summary,
            "failures": self.failures,
            "replications": self.replications,
        }


def _rate(hits):
    hits = np.asarray(hits, dtype=float)
    p = float(hits.mean()) if hits.size else float("nan")
    return p, (math.sqrt(p * (1 - p) / hits.size) if hits.size else float("nan"))


def _run_test(name, y, period, options):
    from . import residual_diagnostics as rd
    from . import variance_tests as vt

    if name == "level":
        return vt.level_test(y, seasonal_period=options.get("seasonal_period")).reject(0.05)
    if name == "slope":
        return vt.slope_test(y, seasonal_period=options.get("seasonal_period")).reject(0.05)
    if name.startswith("seasonal:"):
        target = name.split(":", 1)[1]
        target = target if target == "all" else int(target)
        return vt.seasonal_test(y, target, period=period).reject(0.05)
    if name == "lobato_velasco":
        return rd.lobato_velasco(y).p < 0.05
    if name == "cusum":
        return not rd.cusum(y).stable
    raise ConfigurationError(f"unknown test {name!r}")


def run_experiment(plan, progress=None):
    """Execute ``plan`` and summarise; replication failures are counted."""
    kind, R, seed = plan.kind, int(plan.replications), int(plan.seed)
    opts = dict(plan.options)
    per, failures = [], 0

    if kind == "critvals":
        table = critical_value_table(
            R, int(opts.get("df_max", 12)), int(opts.get("discretization", plan.T)), seed,
            tuple(opts.get("levels", (0.10, 0.05, 0.01))), bool(opts.get("detrend", False)),
        )
        return ExperimentReport(kind, table, [], 0, R)

    if kind == "simulate":
        system = plan.resolve_system()
        init = None if plan.initial_state is None else np.asarray(plan.initial_state, float)
        for i in range(R):
            per.append(simulate_ssm(system, plan.T, seed, init, replication=i))
        return ExperimentReport(kind, {"T": plan.T}, per, 0, R)

    if kind == "size_power":
        system = plan.resolve_system()
        init = None if plan.initial_state is None else np.asarray(plan.initial_state, float)
        tests = list(opts.get("tests", ["level"]))
        period = int(opts.get("period", 12))
        hits = {t: [] for t in tests}
        for i in range(R):
            y = simulate_ssm(system, plan.T, seed, init, replication=i).values
            row = {}
            for t in tests:
                try:
                    row[t] = bool(_run_test(t, y, period, opts))
                except UCError:
                    failures += 1
                    continue
                hits[t].append(row[t])
            per.append(row)
            if progress:
                progress(i)
        summary = {}
        for t, h in hits.items():
            p, se = _rate(h)
            summary[t] = {"rate": p, "mcse": se, "n": len(h)}
        return ExperimentReport(kind, summary, per, failures, R)

    if kind in ("recovery", "coverage"):
        from .estimation import fit
        from .kalman import forecast, kalman_filter

        system = plan.resolve_system()
        spec = plan.spec
        if spec is None:
            raise ConfigurationError(f"{kind} plan needs a spec")
        init = None if plan.initial_state is None else np.asarray(plan.initial_state, float)
        restarts = int(opts.get("restarts", 2))
        horizons = list(opts.get("horizons", [1, 12, 36]))
        H = max(horizons) if kind == "coverage" else 0
        alpha = float(opts.get("alpha", 0.05))
        for i in range(R):
            y = simulate_ssm(system, plan.T + H, seed, init, replication=i).values
            try:
                res = fit(spec, y[: plan.T], restarts=restarts, seed=seed + i)
            except UCError:
                failures += 1
                continue
            if kind == "recovery":
                per.append({
                    "variances": spec.variances_of(res.params).tolist(),
                    "drift": res.params.drift,
                })
            else:
                fo = kalman_filter(res.system, y[: plan.T])
                fc = forecast(res.system, fo, H, alpha)
                fut = y[plan.T :]
                per.append({h: bool(fc.lower[h - 1] <= fut[h - 1] <= fc.upper[h - 1]) for h in horizons})
            if progress:
                progress(i)
        if kind == "recovery":
            truth = spec.variances_of(plan.params)
            est = np.array([r["variances"] for r in per]) if per else np.empty((0, truth.size))
            rel = np.abs(est - truth) / truth
            summary = {
                "parameters": spec.free_parameters(),
                "truth": truth.tolist(),
                "median_abs_rel_error": np.median(rel, axis=0).tolist() if per else [],
                "within_30pct": np.mean(rel <= 0.30, axis=0).tolist() if per else [],
            }
            drifts = [r["drift"] for r in per if r["drift"] is not None]
            if drifts:
                summary["drift_mean"] = float(np.mean(drifts))
                summary["drift_mcse"] = float(np.std(drifts, ddof=1) / math.sqrt(len(drifts)))
        else:
            summary = {}
            for h in horizons:
                p, se = _rate([r[h] for r in per])
                summary[str(h)] = {"coverage": p, "mcse": se}
        return ExperimentReport(kind, summary, per, failures, R)

    raise ConfigurationError(f"unknown experiment kind {kind!r}")


def build_critvals(replications=100_000, T=2000, df_max=12, seed=20240601,
                   levels=(0.10, 0.05, 0.01)):
    """Full shipped critical-value document (demeaned and detrended tables)."""
    doc = {
        "schema_version": CRITVALS_SCHEMA,
        "generator": {
            "replications": int(replications),
            "discretization": int(T),
            "df_max": int(df_max),
            "seed": int(seed),
            "levels": [float(lv) for lv in levels],
        },
        "tables": {},
    }
    for kind, detrend in (("level", False), ("trend", True)):
        doc["tables"][kind] = critical_value_table(
            replications, df_max, T, seed + (1 if detrend else 0), levels, detrend
        )
    return doc
