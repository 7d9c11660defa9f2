"""Exact-diffuse Kalman filter, fixed-interval smoother and forecasting.

The initial state covariance is split into a proper part ``P_star`` and a
diffuse indicator part ``P_inf``; the filter carries both until the diffuse
part vanishes (Koopman's exact initialisation). The diffuse log-likelihood is

    -n/2 log(2 pi) - 1/2 sum_{diffuse t} log F_inf,t
                   - 1/2 sum_{other t} (log F_t + v_t^2 / F_t)

where missing observations contribute nothing.
"""
from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import ndtri

from .exceptions import InsufficientDataError, NumericalFailure

__all__ = [
    "FilterOutput",
    "SmootherOutput",
    "ForecastResult",
    "kalman_filter",
    "loglike",
    "smooth",
    "forecast",
    "normal_quantile",
    "KAPPA",
]

LOG2PI = float(np.log(2.0 * np.pi))
KAPPA = 1e7

# step kinds recorded by the filter
MISSING, DIFFUSE, STANDARD, DEGENERATE, DIFFUSE_PROPER = 0, 1, 2, 3, 4

_STATUS_OK, _STATUS_NEG_F, _STATUS_INCONSISTENT = 0, 1, 2


@numba.njit(cache=True)
def _matvec(A, x, out):
    m = x.shape[0]
    for i in range(m):
        acc = 0.0
        for j in range(m):
            acc += A[i, j] * x[j]
        out[i] = acc


@numba.njit(cache=True)
def _sandwich(T, P, add, tmp, out):
    # out = T P T' + add, symmetrised
    m = T.shape[0]
    for i in range(m):
        for j in range(m):
            acc = 0.0
            for k in range(m):
                acc += T[i, k] * P[k, j]
            tmp[i, j] = acc
    for i in range(m):
        for j in range(i, m):
            acc = 0.0
            for k in range(m):
                acc += tmp[i, k] * T[j, k]
            if add is not None:
                acc += 0.5 * (add[i, j] + add[j, i])
            out[i, j] = acc
            out[j, i] = acc


@numba.njit(cache=True)
def _filter_kernel(y, Z, T, RQR, H, a1, Pstar1, Pinf1, tol_inf):
    n = y.shape[0]
    m = Z.shape[0]
    a_pred = np.empty((n + 1, m))
    P_pred = np.empty((n + 1, m, m))
    Pinf_pred = np.zeros((n + 1, m, m))
    v = np.full(n, np.nan)
    F = np.full(n, np.nan)
    Finf = np.zeros(n)
    kinds = np.zeros(n, dtype=np.int64)
    ll = np.zeros(n)

    a = a1.copy()
    an = np.empty(m)
    P = Pstar1.copy()
    Pinf = Pinf1.copy()
    Pn = np.empty((m, m))
    tmp = np.empty((m, m))
    Ms = np.empty(m)
    Mi = np.empty(m)
    diffuse = False
    for i in range(m):
        for j in range(m):
            if Pinf[i, j] != 0.0:
                diffuse = True
    d = 0
    status = _STATUS_OK
    bad_step = -1

    for t in range(n):
        a_pred[t] = a
        P_pred[t] = P
        if diffuse:
            Pinf_pred[t] = Pinf
        yt = y[t]
        if np.isnan(yt):
            kinds[t] = MISSING
        else:
            _matvec(P, Z, Ms)
            Fs = H
            vt = yt
            for i in range(m):
                Fs += Z[i] * Ms[i]
                vt -= Z[i] * a[i]
            v[t] = vt
            fi = 0.0
            if diffuse:
                _matvec(Pinf, Z, Mi)
                for i in range(m):
                    fi += Z[i] * Mi[i]
            if diffuse and fi > tol_inf:
                Finf[t] = fi
                F[t] = Fs
                kinds[t] = DIFFUSE
                ll[t] = -0.5 * (LOG2PI + np.log(fi))
                c1 = Fs / (fi * fi)
                for i in range(m):
                    a[i] += Mi[i] * (vt / fi)
                for i in range(m):
                    for j in range(m):
                        P[i, j] += Mi[i] * Mi[j] * c1 - (Ms[i] * Mi[j] + Mi[i] * Ms[j]) / fi
                        Pinf[i, j] -= Mi[i] * Mi[j] / fi
            else:
                ref = 1.0
                for i in range(m):
                    if abs(P[i, i]) > ref:
                        ref = abs(P[i, i])
                if abs(H) > ref:
                    ref = abs(H)
                F[t] = Fs
                if Fs < -1e-8 * ref:
                    status = _STATUS_NEG_F
                    bad_step = t
                    break
                if Fs <= 1e-15 * ref:
                    # variance vanished: the observation carries no new information
                    kinds[t] = DEGENERATE
                    if abs(vt) > 1e-7 * (1.0 + abs(yt)):
                        status = _STATUS_INCONSISTENT
                        bad_step = t
                        break
                else:
                    kinds[t] = DIFFUSE_PROPER if diffuse else STANDARD
                    ll[t] = -0.5 * (LOG2PI + np.log(Fs) + vt * vt / Fs)
                    for i in range(m):
                        a[i] += Ms[i] * (vt / Fs)
                    for i in range(m):
                        for j in range(m):
                            P[i, j] -= Ms[i] * Ms[j] / Fs
        # prediction
        _matvec(T, a, an)
        a[:] = an
        _sandwich(T, P, RQR, tmp, Pn)
        P[:, :] = Pn
        if diffuse:
            _sandwich(T, Pinf, None, tmp, Pn)
            Pinf[:, :] = Pn
            mx = 0.0
            for i in range(m):
                for j in range(m):
                    if abs(Pinf[i, j]) > mx:
                        mx = abs(Pinf[i, j])
            if mx <= tol_inf:
                diffuse = False
                Pinf[:, :] = 0.0
                d = t + 1
    if diffuse:
        d = n + 1
    a_pred[n] = a
    P_pred[n] = P
    if diffuse:
        Pinf_pred[n] = Pinf
    return a_pred, P_pred, Pinf_pred, v, F, Finf, kinds, ll, d, status, bad_step


@dataclass(frozen=True, eq=False)
class FilterOutput:
    """Kalman filter results.

    ``a_pred[t]``/``P_pred[t]`` are the one-step predictions of the state at
    time ``t`` (row ``n`` is the first out-of-sample prediction). ``F`` is the
    proper innovation variance; during diffuse steps ``F_inf`` holds the
    diffuse part.
    """

    system: object
    y: np.ndarray
    a_pred: np.ndarray
    P_pred: np.ndarray
    Pinf_pred: np.ndarray
    v: np.ndarray
    F: np.ndarray
    F_inf: np.ndarray
    kinds: np.ndarray
    loglik_terms: np.ndarray
    d: int
    scale: str = "level"

    @property
    def loglik(self):
        return float(np.sum(self.loglik_terms))

    @property
    def nobs(self):
        return int(self.y.size)

    @property
    def n_observed(self):
        return int(np.sum(self.kinds != MISSING))

    @property
    def usable(self):
        """Mask of steps carrying standardized innovations."""
        return (self.kinds == STANDARD) | (self.kinds == DIFFUSE_PROPER)

    @property
    def n_diffuse_obs(self):
        return int(np.sum(self.kinds == DIFFUSE))

    @property
    def std_innovations(self):
        e = np.full(self.v.shape, np.nan)
        ok = self.usable
        e[ok] = self.v[ok] / np.sqrt(self.F[ok])
        return e

    @property
    def residuals(self):
        """Standardized innovations at usable steps, in time order."""
        return self.std_innovations[self.usable]

    @property
    def predicted_signal(self):
        return self.a_pred[:-1] @ self.system.Z

    @property
    def filtered_state(self):
        """Updated means a_{t|t}."""
        Z = self.system.Z
        out = self.a_pred[:-1].copy()
        for t, k in enumerate(self.kinds):
            if k == DIFFUSE:
                Mi = self.Pinf_pred[t] @ Z
                out[t] += Mi * (self.v[t] / self.F_inf[t])
            elif k in (STANDARD, DIFFUSE_PROPER):
                Ms = self.P_pred[t] @ Z
                out[t] += Ms * (self.v[t] / self.F[t])
        return out


def _prepare(system, y):
    if hasattr(y, "values") and hasattr(y, "scale"):
        scale = y.scale
        y = y.values
    else:
        scale = "level"
    y = np.ascontiguousarray(np.asarray(y, dtype=float).reshape(-1))
    return y, scale


def kalman_filter(system, y, diffuse="exact", kappa=KAPPA, check=True):
    """Run the Kalman filter.

    Parameters
    ----------
    system : StateSpaceSystem
    y : array_like or TimeSeries
        Observations; NaN marks a missing value.
    diffuse : {'exact', 'approximate'}
        ``'approximate'`` replaces the diffuse part by ``kappa * P_inf`` and
        runs the plain filter. It exists for cross-checking only.
    check : bool
        Require at least ``m + 1`` non-missing observations.

    Returns
    -------
    FilterOutput
    """
    y, scale = _prepare(system, y)
    if check and np.sum(~np.isnan(y)) < system.m + 1:
        raise InsufficientDataError(
            f"need at least m + 1 = {system.m + 1} non-missing observations, "
            f"got {int(np.sum(~np.isnan(y)))}"
        )
    Z = np.ascontiguousarray(system.Z)
    T = np.ascontiguousarray(system.T)
    RQR = np.ascontiguousarray(system.RQR)
    a1 = np.ascontiguousarray(system.a1)
    if diffuse == "exact":
        Pstar, Pinf = np.array(system.P_star), np.array(system.P_inf)
    elif diffuse == "approximate":
        Pstar, Pinf = np.array(system.P_star + kappa * system.P_inf), np.zeros_like(system.P_inf)
    else:
        raise ValueError(f"unknown diffuse mode {diffuse!r}")
    out = _filter_kernel(y, Z, T, RQR, system.H, a1, Pstar, Pinf, 1e-8)
    a_pred, P_pred, Pinf_pred, v, F, Finf, kinds, ll, d, status, bad = out
    if status == _STATUS_NEG_F:
        raise NumericalFailure(f"non-positive innovation variance F={F[bad]:.3g} at step {bad}", step=int(bad))
    if status == _STATUS_INCONSISTENT:
        raise NumericalFailure(
            f"zero innovation variance with non-zero innovation {v[bad]:.3g} at step {bad}",
            step=int(bad),
        )
    return FilterOutput(system, y, a_pred, P_pred, Pinf_pred, v, F, Finf, kinds, ll, int(d), scale)


def loglike(system, y):
    """Exact-diffuse log-likelihood; ``-inf`` on numerical failure."""
    y, _ = _prepare(system, y)
    out = _filter_kernel(
        y, np.ascontiguousarray(system.Z), np.ascontiguousarray(system.T),
        np.ascontiguousarray(system.RQR), system.H, np.ascontiguousarray(system.a1),
        np.array(system.P_star), np.array(system.P_inf), 1e-8,
    )
    if out[9] != _STATUS_OK:
        return -np.inf
    return float(np.sum(out[7]))


@dataclass(frozen=True, eq=False)
class SmootherOutput:
    states: np.ndarray
    covariances: np.ndarray

    @property
    def variances(self):
        return np.diagonal(self.covariances, axis1=1, axis2=2)


def smooth(system, fo):
    """Fixed-interval state smoother with exact diffuse initialisation.

    Returns smoothed means ``E[a_t | y_1..y_n]`` and covariances.
    """
    Z, T = system.Z, system.T
    n, m = fo.y.size, system.m
    states = np.empty((n, m))
    covs = np.empty((n, m, m))
    r0 = np.zeros(m)
    r1 = np.zeros(m)
    N0 = np.zeros((m, m))
    N1 = np.zeros((m, m))
    N2 = np.zeros((m, m))
    ZZ = np.outer(Z, Z)
    for t in range(n - 1, -1, -1):
        a, P, Pinf = fo.a_pred[t], fo.P_pred[t], fo.Pinf_pred[t]
        k = fo.kinds[t]
        in_diffuse = t < fo.d
        if k == DIFFUSE:
            fi, fs, vt = fo.F_inf[t], fo.F[t], fo.v[t]
            Mi, Ms = Pinf @ Z, P @ Z
            K0 = T @ Mi / fi
            K1 = T @ Ms / fi - T @ Mi * (fs / fi**2)
            L0 = T - np.outer(K0, Z)
            L1 = -np.outer(K1, Z)
            f1, f2 = 1.0 / fi, -fs / fi**2
            r1_new = Z * (vt * f1) + L0.T @ r1 + L1.T @ r0
            r0_new = L0.T @ r0
            N2_new = ZZ * f2 + L0.T @ N2 @ L0 + L0.T @ N1 @ L1 + L1.T @ N1.T @ L0 + L1.T @ N0 @ L1
            N1_new = ZZ * f1 + L0.T @ N1 @ L0 + L1.T @ N0 @ L0
            N0_new = L0.T @ N0 @ L0
        elif k in (STANDARD, DIFFUSE_PROPER):
            fs, vt = fo.F[t], fo.v[t]
            Ms = P @ Z
            K = T @ Ms / fs
            L0 = T - np.outer(K, Z)
            r0_new = Z * (vt / fs) + L0.T @ r0
            N0_new = ZZ / fs + L0.T @ N0 @ L0
            if in_diffuse:
                r1_new = T.T @ r1
                N1_new = L0.T @ N1 @ T
                N2_new = T.T @ N2 @ T
        else:
            r0_new = T.T @ r0
            N0_new = T.T @ N0 @ T
            if in_diffuse:
                r1_new = T.T @ r1
                N1_new = T.T @ N1 @ T
                N2_new = T.T @ N2 @ T
        r0, N0 = r0_new, 0.5 * (N0_new + N0_new.T)
        if in_diffuse:
            r1, N1, N2 = r1_new, N1_new, 0.5 * (N2_new + N2_new.T)
            states[t] = a + P @ r0 + Pinf @ r1
            PN1P = Pinf @ N1 @ P
            V = P - P @ N0 @ P - PN1P.T - PN1P - Pinf @ N2 @ Pinf
        else:
            states[t] = a + P @ r0
            V = P - P @ N0 @ P
        V = 0.5 * (V + V.T)
        dg = np.arange(m)
        diag = V[dg, dg]
        V[dg, dg] = np.where((diag < 0) & (diag > -1e-10 * (1 + np.abs(np.diag(P)))), 0.0, diag)
        covs[t] = V
    return SmootherOutput(states, covs)


def normal_quantile(p):
    """Standard normal quantile (accurate to machine precision)."""
    return ndtri(p)


@dataclass(frozen=True, eq=False)
class ForecastResult:
    horizon: int
    mean: np.ndarray
    variance: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    scale: str = "level"

    @property
    def std(self):
        return np.sqrt(self.variance)

    @property
    def level(self):
        return 1.0 - self.alpha


def forecast(system, fo, horizon, alpha=0.05):
    """Multi-step forecasts ``h = 1..horizon`` beyond the filtered sample.

    ``mean[h-1] = Z a_{n+h|n}``, ``variance[h-1] = Z P_{n+h|n} Z' + H`` and the
    bands are ``mean -/+ z_{1-alpha/2} sqrt(variance)``.
    """
    horizon = int(horizon)
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if horizon and fo.d > fo.nobs:
        raise NumericalFailure("diffuse initialisation not completed within the sample")
    Z, T, RQR, H = system.Z, system.T, system.RQR, system.H
    a = fo.a_pred[-1].copy()
    P = fo.P_pred[-1].copy()
    mean = np.empty(horizon)
    var = np.empty(horizon)
    for h in range(horizon):
        mean[h] = Z @ a
        var[h] = max(Z @ P @ Z + H, 0.0)
        a = T @ a
        P = T @ P @ T.T + RQR
        P = 0.5 * (P + P.T)
    z = 0.0 if alpha >= 1.0 else float(normal_quantile(1.0 - alpha / 2.0))
    sd = np.sqrt(var)
    return ForecastResult(horizon, mean, var, mean - z * sd, mean + z * sd, float(alpha), fo.scale)
