"""Quasi-maximum-likelihood estimation of the disturbance variances.

Variances are optimised on the log scale, ``theta = log(sigma^2)``, bounded
below by -30. Each start runs a bounded Nelder-Mead search followed by an
L-BFGS-B polish driven by central finite-difference gradients. The drift of a
random-walk-plus-drift trend is not a free parameter: it is the slope state,
initialised diffusely, and reported from the smoother.
"""
import hashlib
import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from .exceptions import ComparisonError, InsufficientDataError, NonConvergenceError
from .kalman import kalman_filter, loglike, smooth
from .model_spec import ModelSpec, ParamVector, assemble

__all__ = [
    "FitOptions",
    "FitResult",
    "fit",
    "information_criteria",
    "compare_models",
    "ModelComparison",
    "LOG_VARIANCE_FLOOR",
]

LOG_VARIANCE_FLOOR = -30.0
_FD_STEP = np.finfo(float).eps ** (1.0 / 3.0)
_START_WEIGHTS = {"irregular": 0.5, "level": 0.5, "slope": 0.01, "cycle": 0.05}


@dataclass(frozen=True)
class FitOptions:
    restarts: int = 8
    tolerance: float = 1e-3
    max_iter: int = 4000
    seed: int = 0
    perturbation: float = 1.0


def information_criteria(loglik, k, n):
    """AIC, BIC and AICc for log-likelihood ``loglik`` with ``k`` parameters.

    Raises
    ------
    ValueError
        If ``n <= k + 1`` (AICc undefined).
    """
    if n <= k + 1:
        raise ValueError(f"AICc undefined for n={n} <= k+1={k + 1}")
    aic = -2.0 * loglik + 2.0 * k
    bic = -2.0 * loglik + k * math.log(n)
    aicc = aic + 2.0 * k * (k + 1) / (n - k - 1)
    return {"AIC": aic, "BIC": bic, "AICc": aicc}


def sample_key(y):
    """Fingerprint of an observation vector (values and missing pattern)."""
    arr = np.ascontiguousarray(np.asarray(y, dtype=float))
    return hashlib.sha256(np.nan_to_num(arr, nan=np.inf).tobytes()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of :func:`fit`.

    ``params.drift`` carries the smoothed drift estimate for trends with a
    fixed slope; the likelihood itself was evaluated with that slope
    initialised diffusely (see :attr:`system`).
    """

    spec: ModelSpec
    params: ParamVector
    loglik: float
    k: int
    n: int
    ics: dict
    converged: bool
    iterations: int
    grad_norm: float
    restarts_used: int
    theta: np.ndarray
    n_hyper: int
    n_diffuse: int
    drift_se: float = None
    failed_starts: int = 0
    sample: str = ""
    start_logliks: tuple = ()

    @property
    def system(self):
        return assemble(self.spec, replace(self.params, drift=None))

    @property
    def AIC(self):
        return self.ics["AIC"]

    @property
    def BIC(self):
        return self.ics["BIC"]

    @property
    def AICc(self):
        return self.ics["AICc"]

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "params": self.params.to_dict(),
            "free_parameters": dict(zip(self.spec.free_parameters(), self.spec.variances_of(self.params).tolist())),
            "theta": [float(x) for x in self.theta],
            "drift_se": self.drift_se,
            "loglik": self.loglik,
            "k": self.k,
            "n": self.n,
            "n_hyper": self.n_hyper,
            "n_diffuse": self.n_diffuse,
            "information_criteria": dict(self.ics),
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "restarts_used": self.restarts_used,
            "failed_starts": self.failed_starts,
            "sample": self.sample,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def _values(ts):
    if hasattr(ts, "values") and hasattr(ts, "scale"):
        return np.asarray(ts.values, dtype=float)
    return np.asarray(ts, dtype=float).reshape(-1)


def _base_variance(y):
    obs = y[~np.isnan(y)]
    dy = np.diff(obs)
    base = float(np.var(dy)) if dy.size > 1 else 0.0
    if not base > 0:
        base = float(np.var(obs)) if obs.size > 1 else 0.0
    return base


def _start_theta(spec, y):
    base = _base_variance(y)
    out = []
    for name in spec.free_parameters():
        w = _START_WEIGHTS.get(name.split(".")[0], 0.05)
        v = base * w
        out.append(math.log(v) if v > 0 else LOG_VARIANCE_FLOOR)
    return np.clip(np.array(out), LOG_VARIANCE_FLOOR, None)


def _upper_bound(y):
    base = _base_variance(y)
    obs = y[~np.isnan(y)]
    scale = max(base, float(np.var(obs)) if obs.size > 1 else 0.0, 1e-300)
    return max(math.log(scale) + math.log(1e4), LOG_VARIANCE_FLOOR + 10.0)


class _Objective:
    """Negative log-likelihood in log-variance coordinates."""

    def __init__(self, spec, y):
        self.spec = spec
        self.y = np.ascontiguousarray(y)
        self.nfev = 0

    def params(self, theta):
        return self.spec.params_from_variances(np.exp(np.maximum(theta, LOG_VARIANCE_FLOOR)))

    def loglik(self, theta):
        self.nfev += 1
        ll = loglike(assemble(self.spec, self.params(theta)), self.y)
        return ll if np.isfinite(ll) else -np.inf

    def __call__(self, theta):
        ll = self.loglik(theta)
        return -ll if np.isfinite(ll) else 1e300

    def gradient(self, theta, lo, hi):
        theta = np.asarray(theta, dtype=float)
        g = np.empty_like(theta)
        for i in range(theta.size):
            h = _FD_STEP * max(1.0, abs(theta[i]))
            up, dn = theta.copy(), theta.copy()
            up[i] = min(theta[i] + h, hi)
            dn[i] = max(theta[i] - h, lo)
            g[i] = (self(up) - self(dn)) / (up[i] - dn[i])
        return g


def _projected_norm(theta, grad, lo, hi):
    # gradient components pushing against an active bound do not count
    g = np.array(grad, dtype=float)
    at_lo = theta <= lo + 1e-8
    at_hi = theta >= hi - 1e-8
    g[at_lo & (g > 0)] = 0.0
    g[at_hi & (g < 0)] = 0.0
    return float(np.linalg.norm(g))


def _one_start(obj, theta0, lo, hi, options):
    k = theta0.size
    bounds = [(lo, hi)] * k
    nm = minimize(
        obj,
        np.clip(theta0, lo, hi),
        method="Nelder-Mead",
        bounds=bounds,
        options={
            "maxiter": options.max_iter,
            "maxfev": 2 * options.max_iter,
            "xatol": 1e-6,
            "fatol": 1e-9,
            "adaptive": k > 3,
        },
    )
    polish = minimize(
        obj,
        np.clip(nm.x, lo, hi),
        jac=lambda th: obj.gradient(th, lo, hi),
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": options.max_iter, "gtol": options.tolerance * 1e-3, "ftol": 1e-15},
    )
    best = polish if polish.fun <= nm.fun else nm
    x = np.clip(best.x, lo, hi)
    grad = obj.gradient(x, lo, hi)
    gnorm = _projected_norm(x, grad, lo, hi)
    return x, -float(best.fun), gnorm, bool(nm.success), int(nm.nit) + int(polish.nit)


def fit(spec, ts, restarts=8, tolerance=1e-3, max_iter=4000, seed=0, start=None):
    """Estimate the variances of ``spec`` on ``ts`` by maximum likelihood.

    Parameters
    ----------
    spec : ModelSpec
    ts : TimeSeries or array_like
        Observations (NaN for missing), usually log market cap.
    restarts : int
        Number of starts. Start 0 is the data-driven default (or ``start``);
        the others perturb it with seeded Gaussian noise.
    tolerance : float
        Convergence threshold on the projected gradient norm of the
        log-likelihood with respect to the log-variances.
    max_iter : int
    seed : int
    start : array_like, optional
        Starting log-variances ordered as ``spec.free_parameters()``.

    Returns
    -------
    FitResult

    Raises
    ------
    InsufficientDataError
        Fewer than ``m + #hyperparameters + 5`` non-missing observations.
    NonConvergenceError
        No start reached the convergence criteria.
    """
    options = FitOptions(max(int(restarts), 1), float(tolerance), int(max_iter), int(seed))
    y = _values(ts)
    names = spec.free_parameters()
    n_obs = int(np.sum(~np.isnan(y)))
    need = spec.n_states + len(names) + 5
    if n_obs < need:
        raise InsufficientDataError(f"need at least {need} non-missing observations, got {n_obs}")

    obj = _Objective(spec, y)
    lo, hi = LOG_VARIANCE_FLOOR, _upper_bound(y)
    theta_default = _start_theta(spec, y) if start is None else np.asarray(start, dtype=float)
    theta_default = np.clip(theta_default, lo, hi)

    runs = []
    failed = 0
    for r in range(options.restarts):
        if r == 0:
            th0 = theta_default
        else:
            rng = np.random.default_rng(np.random.SeedSequence(options.seed, spawn_key=(r,)))
            th0 = theta_default + options.perturbation * rng.standard_normal(theta_default.size)
        try:
            x, ll, gnorm, collapsed, nit = _one_start(obj, th0, lo, hi, options)
        except (FloatingPointError, ValueError, ArithmeticError):
            failed += 1
            continue
        if not np.isfinite(ll):
            failed += 1
            continue
        runs.append((r, x, ll, gnorm, collapsed, nit))
    if not runs:
        raise NonConvergenceError("all optimizer starts failed", best=None)

    # best log-likelihood, then lowest restart index
    r_best, x, ll, gnorm, collapsed, nit = max(runs, key=lambda t: (t[2], -t[0]))
    converged = bool(collapsed and gnorm < options.tolerance)
    any_converged = any(c and g < options.tolerance for _, _, _, g, c, _ in runs)

    params = obj.params(x)
    system = assemble(spec, params)
    fo = kalman_filter(system, y)
    drift, drift_se = None, None
    if spec.trend.allows_drift:
        sm = smooth(system, fo)
        j = system.layout["slope"][0]
        drift = float(sm.states[0, j])
        drift_se = float(math.sqrt(max(sm.covariances[0, j, j], 0.0)))
    params = replace(params, drift=drift)
    n_diffuse = system.n_diffuse
    k = len(names) + n_diffuse
    try:
        ics = information_criteria(fo.loglik, k, n_obs)
    except ValueError:
        ics = {"AIC": float("nan"), "BIC": float("nan"), "AICc": float("nan")}
    result = FitResult(
        spec=spec,
        params=params,
        loglik=float(fo.loglik),
        k=k,
        n=n_obs,
        ics=ics,
        converged=converged,
        iterations=int(nit),
        grad_norm=float(gnorm),
        restarts_used=len(runs),
        theta=np.maximum(x, lo),
        n_hyper=len(names),
        n_diffuse=n_diffuse,
        drift_se=drift_se,
        failed_starts=failed,
        sample=sample_key(y),
        start_logliks=tuple(float(t[2]) for t in runs),
    )
    if not any_converged:
        raise NonConvergenceError(
            f"no start converged (best gradient norm {gnorm:.3g} >= {options.tolerance})", best=result
        )
    return result


@dataclass(frozen=True)
class ModelComparison:
    rankings: dict
    agree: bool
    best: dict

    def to_dict(self):
        return {"rankings": self.rankings, "agree": self.agree, "best": self.best}


def compare_models(fits, labels=None):
    """Rank fits by AIC, BIC and AICc (lower is better; ties go to fewer parameters).

    Rankings are lists of indices (or labels) into ``fits``.
    """
    fits = list(fits)
    if not fits:
        raise ComparisonError("no fits to compare")
    keys = {(f.sample, f.n) for f in fits}
    if len(keys) > 1:
        raise ComparisonError("fits were estimated on different observation samples")
    labels = list(range(len(fits))) if labels is None else list(labels)
    rankings = {}
    for ic in ("AIC", "BIC", "AICc"):
        order = sorted(range(len(fits)), key=lambda i: (fits[i].ics[ic], fits[i].k, i))
        rankings[ic] = [labels[i] for i in order]
    first = rankings["AIC"]
    agree = all(r == first for r in rankings.values())
    return ModelComparison(rankings, agree, {ic: r[0] for ic, r in rankings.items()})
