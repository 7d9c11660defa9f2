"""Estimator-style wrapper around specification, fitting and forecasting."""
import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import DataError, NotFittedError
from .kalman import forecast, kalman_filter, smooth
from .model_spec import CycleSpec, ModelSpec, SeasonalSpec, extract_components
from .series import TimeSeries

__all__ = ["UnobservedComponents", "check_series", "check_is_fitted"]


def check_series(X, min_length=1):
    """Validate a univariate series and return it as a float vector.

    Accepts a :class:`TimeSeries`, a 1-d array or an ``(n, 1)`` column.
    ``NaN`` marks a missing month; infinities are rejected.
    """
    if isinstance(X, TimeSeries):
        y = np.array(X.values, dtype=float)
    else:
        try:
            y = np.asarray(X, dtype=float)
        except (TypeError, ValueError) as exc:
            raise DataError(f"series is not numeric: {exc}") from None
        if y.ndim == 2 and y.shape[1] == 1:
            y = y[:, 0]
        if y.ndim != 1:
            raise DataError(f"expected a univariate series, got shape {y.shape}")
    if np.isinf(y).any():
        raise DataError(f"series contains infinite values at {np.flatnonzero(np.isinf(y)).tolist()}")
    if y.size < min_length:
        raise DataError(f"series has {y.size} entries, need at least {min_length}")
    return y


def check_is_fitted(est):
    if not hasattr(est, "result_"):
        raise NotFittedError(f"{type(est).__name__} is not fitted; call fit first")


class UnobservedComponents(BaseEstimator):
    """Structural time-series model estimated by exact-diffuse maximum likelihood.

    Parameters
    ----------
    trend : str
        One of ``deterministic``, ``local_level``, ``random_walk_drift``,
        ``integrated_random_walk``, ``local_linear_trend``.
    seasonal_period : int or None
        ``None`` drops the seasonal component.
    harmonics : tuple of int or None
        Seasonal harmonics to keep; ``None`` keeps all.
    seasonal_variance : {'common', 'per_harmonic'}
    cycle : bool
    cycle_period, cycle_damping : float
    restarts, tolerance, seed
        Passed to :func:`ucimpact.estimation.fit`.

    Attributes
    ----------
    spec_ : ModelSpec
    result_ : FitResult
    system_ : StateSpaceSystem
    filter_ : FilterOutput
        Filter run on the training data.
    """

    def __init__(self, trend="random_walk_drift", seasonal_period=12, harmonics=None,
                 seasonal_variance="common", cycle=False, cycle_period=96.0, cycle_damping=1.0,
                 restarts=8, tolerance=1e-3, seed=0):
        self.trend = trend
        self.seasonal_period = seasonal_period
        self.harmonics = harmonics
        self.seasonal_variance = seasonal_variance
        self.cycle = cycle
        self.cycle_period = cycle_period
        self.cycle_damping = cycle_damping
        self.restarts = restarts
        self.tolerance = tolerance
        self.seed = seed

    def build_spec(self):
        seasonal = None
        if self.seasonal_period:
            seasonal = SeasonalSpec(self.seasonal_period, self.harmonics, self.seasonal_variance)
        cyc = CycleSpec(self.cycle_period, self.cycle_damping) if self.cycle else None
        return ModelSpec(self.trend, seasonal, cyc)

    def fit(self, X, y=None):
        from .estimation import fit as fit_model

        data = check_series(X)
        self.spec_ = self.build_spec()
        self.result_ = fit_model(self.spec_, data, self.restarts, self.tolerance, seed=self.seed)
        self.system_ = self.result_.system
        self.filter_ = kalman_filter(self.system_, data)
        self.n_train_ = data.size
        return self

    def forecast(self, horizon, alpha=0.05):
        """Forecast ``horizon`` months past the training sample."""
        check_is_fitted(self)
        return forecast(self.system_, self.filter_, horizon, alpha)

    def predict(self, horizon):
        """Point forecasts for ``h = 1..horizon``."""
        return self.forecast(horizon).mean

    def transform(self, X):
        """Smoothed components of ``X`` under the fitted parameters.

        Returns an ``(n, 4)`` array with columns trend, seasonal, cycle and
        irregular.
        """
        check_is_fitted(self)
        data = check_series(X)
        fo = kalman_filter(self.system_, data)
        comp = extract_components(self.system_, smooth(self.system_, fo).states, data)
        return np.column_stack([comp["trend"], comp["seasonal"], comp["cycle"], comp["irregular"]])

    def score(self, X, y=None):
        """Exact-diffuse log-likelihood of ``X`` under the fitted parameters."""
        check_is_fitted(self)
        return float(kalman_filter(self.system_, check_series(X)).loglik)

    def residuals(self, X=None):
        """Standardized innovations (``NaN`` at diffuse and missing steps)."""
        check_is_fitted(self)
        fo = self.filter_ if X is None else kalman_filter(self.system_, check_series(X))
        return fo.std_innovations
