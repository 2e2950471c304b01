"""
ARIMA Core - time-recursive differencing, conditional-sum-of-squares
estimation, AIC order selection and one-step forecasting

All functions are pure; series are 1-D float64 numpy arrays, oldest first.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, signal

from config.config import (
    OPTIMIZER_TOLERANCE, OPTIMIZER_MAX_ITERATIONS, MULTI_START_VALUES,
    MA_COEFFICIENT_BOUND, VARIANCE_FLOOR, RECORD_PRECISION, MIN_INNOVATIONS_PER_PARAMETER
)
from core.exceptions import (
    InvalidInputError, InsufficientHistoryError, InvalidModelError, FormatError
)

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

# ============================================================================
# MODEL TYPES
# ============================================================================

@dataclass(frozen=True)
class Order:
    """ARIMA order (p, d, q)"""

    p: int = 0
    d: int = 0
    q: int = 0

    def __post_init__(self):
        if min(self.p, self.d, self.q) < 0:
            raise InvalidInputError(f"Order components must be >= 0, got {self}")

    @property
    def total(self) -> int:
        return self.p + self.d + self.q

    def fits_window(self, window: int) -> bool:
        """True when p + d < window and q < window"""
        return self.p + self.d < window and self.q < window

    def __str__(self):
        return f"({self.p},{self.d},{self.q})"


@dataclass(frozen=True)
class ArimaModel:
    """
    Parameter tuple (p, q, d, a_1..a_p, b_1..b_q, c) plus noise variance

    The point forecast is
        s_n = a_1 s_{n-1} + ... + a_p s_{n-p} + b_1 e_{n-1} + ... + b_q e_{n-q} + c
    with the current innovation taken at its expectation (zero).
    """

    order: Order
    ar: Tuple[float, ...] = ()
    ma: Tuple[float, ...] = ()
    intercept: float = 0.0
    noise_variance: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'ar', tuple(float(a) for a in self.ar))
        object.__setattr__(self, 'ma', tuple(float(b) for b in self.ma))
        object.__setattr__(self, 'intercept', float(self.intercept))
        object.__setattr__(self, 'noise_variance', float(self.noise_variance))

        if len(self.ar) != self.order.p or len(self.ma) != self.order.q:
            raise InvalidModelError(
                f"Order {self.order} needs {self.order.p} AR and {self.order.q} MA "
                f"coefficients, got {len(self.ar)} and {len(self.ma)}"
            )
        values = self.ar + self.ma + (self.intercept, self.noise_variance)
        if not all(math.isfinite(v) for v in values):
            raise InvalidModelError("Model coefficients must be finite")
        if self.noise_variance < 0:
            raise InvalidModelError("Noise variance must be >= 0")

    @property
    def stationary(self) -> bool:
        """AR polynomial 1 - a_1 z - ... - a_p z^p has all roots outside the unit circle"""
        if not self.ar:
            return True
        roots = np.roots(np.r_[-np.asarray(self.ar)[::-1], 1.0])
        return bool(np.all(np.abs(roots) > 1.0))

    @property
    def invertible(self) -> bool:
        """MA polynomial 1 + b_1 z + ... + b_q z^q has all roots outside the unit circle"""
        if not self.ma:
            return True
        roots = np.roots(np.r_[np.asarray(self.ma)[::-1], 1.0])
        return bool(np.all(np.abs(roots) > 1.0))

    @classmethod
    def constant(cls, value: float, variance: float = 0.0) -> 'ArimaModel':
        return cls(Order(), intercept=value, noise_variance=variance)

    def to_record(self) -> str:
        """Serialize as flat ``key = value`` lines (lossless at 17 significant digits)"""
        fmt = f".{RECORD_PRECISION}g"
        lines = [
            f"p = {self.order.p}",
            f"d = {self.order.d}",
            f"q = {self.order.q}",
            f"ar = {','.join(format(a, fmt) for a in self.ar)}",
            f"ma = {','.join(format(b, fmt) for b in self.ma)}",
            f"intercept = {format(self.intercept, fmt)}",
            f"noise_variance = {format(self.noise_variance, fmt)}",
        ]
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_record(cls, record) -> 'ArimaModel':
        """
        Parse a record produced by ``to_record``

        Args:
            record (str | dict): Record text, or already-split key/value strings

        Returns:
            ArimaModel: Parsed model
        """
        if isinstance(record, str):
            fields = {}
            for line_no, raw in enumerate(record.splitlines(), start=1):
                line = raw.strip()
                if not line or line.startswith('#'):
                    continue
                if '=' not in line:
                    raise FormatError("Model record line without '='", line=line_no)
                key, value = (part.strip() for part in line.split('=', 1))
                fields[key] = value
        else:
            fields = {k: str(v) for k, v in record.items()}

        try:
            order = Order(int(fields['p']), int(fields['d']), int(fields['q']))
            ar = [float(v) for v in fields.get('ar', '').split(',') if v.strip()]
            ma = [float(v) for v in fields.get('ma', '').split(',') if v.strip()]
            return cls(order, ar, ma, float(fields['intercept']),
                       float(fields['noise_variance']))
        except KeyError as e:
            raise FormatError(f"Model record missing key {e}")
        except ValueError as e:
            raise FormatError(f"Model record has a malformed value: {e}")


def _as_series(x) -> np.ndarray:
    values = np.asarray(x, dtype=np.float64).ravel()
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("Series contains non-finite values")
    return values

# ============================================================================
# DIFFERENCING AND FORECASTING
# ============================================================================

def difference(x, d: int) -> np.ndarray:
    """
    Apply (1 - L)^d, the d-th order time-recursive difference

    Args:
        x: Series, oldest first
        d (int): Differencing order

    Returns:
        np.ndarray: len(x) - d samples
    """
    x = _as_series(x)
    if d < 0:
        raise InvalidInputError(f"Differencing order must be >= 0, got {d}")
    if len(x) <= d:
        raise InsufficientHistoryError(f"Need more than {d} samples to difference, got {len(x)}")
    if d == 0:
        return x.copy()
    return np.diff(x, n=d)


def forecast_one_step(model: ArimaModel, s_hist, e_hist) -> float:
    """
    One-step point forecast of the next (differenced) sample

    Args:
        model (ArimaModel): Fitted model
        s_hist: Differenced history, most recent last (>= p entries)
        e_hist: Innovation history, most recent last (>= q entries)

    Returns:
        float: Predicted value
    """
    p, q = model.order.p, model.order.q
    s_hist = np.asarray(s_hist, dtype=np.float64)
    e_hist = np.asarray(e_hist, dtype=np.float64)
    if len(s_hist) < p or len(e_hist) < q:
        raise InsufficientHistoryError(
            f"Forecast needs {p} samples and {q} innovations, "
            f"got {len(s_hist)} and {len(e_hist)}"
        )

    value = model.intercept
    if p:
        value += float(np.dot(model.ar, s_hist[::-1][:p]))
    if q:
        value += float(np.dot(model.ma, e_hist[::-1][:q]))
    return float(value)

# ============================================================================
# CONDITIONAL SUM OF SQUARES
# ============================================================================

def _css_residuals(s, intercept, ar, ma, condition):
    n = len(s)
    target = s[condition:] - intercept
    for lag, a in enumerate(ar, start=1):
        target = target - a * s[condition - lag:n - lag]
    if len(ma):
        # e_t = y_t - b_1 e_{t-1} - ... ; pre-sample innovations are zero
        return signal.lfilter([1.0], np.r_[1.0, ma], target)
    return target


def residuals(model: ArimaModel, s, condition: Optional[int] = None) -> np.ndarray:
    """
    Innovations of a differenced series under the model

    The first ``condition`` samples (default p) are conditioned on and
    produce no innovation.
    """
    s = _as_series(s)
    p = model.order.p
    condition = p if condition is None else condition
    if condition < p:
        raise InvalidInputError(f"Cannot condition on fewer than p={p} samples")
    if len(s) <= condition:
        raise InsufficientHistoryError(
            f"Need more than {condition} samples for residuals, got {len(s)}"
        )
    return _css_residuals(s, model.intercept, np.asarray(model.ar),
                          np.asarray(model.ma), condition)


def css_log_likelihood(model: ArimaModel, s, condition: Optional[int] = None) -> float:
    """
    Gaussian conditional-sum-of-squares log-likelihood of a differenced series

    Args:
        model (ArimaModel): Model with noise_variance > 0
        s: Differenced series
        condition (int): Leading samples conditioned on (default p)

    Returns:
        float: -(T/2) ln(2 pi sigma^2) - sum(e_t^2) / (2 sigma^2)
    """
    if not model.noise_variance > 0:
        raise InvalidModelError("Likelihood needs a positive noise variance")
    e = residuals(model, s, condition)
    var = model.noise_variance
    return float(-0.5 * len(e) * (LOG_2PI + math.log(var)) - np.dot(e, e) / (2.0 * var))


def _concentrated_log_likelihood(e) -> float:
    # sigma^2 replaced by its maximizer, the mean squared innovation
    var = max(float(np.dot(e, e)) / len(e), VARIANCE_FLOOR)
    return -0.5 * len(e) * (LOG_2PI + math.log(var) + 1.0)

# ============================================================================
# ESTIMATION
# ============================================================================

def _ols_ar(s, p, condition):
    n = len(s)
    columns = [np.ones(n - condition)]
    columns += [s[condition - lag:n - lag] for lag in range(1, p + 1)]
    design = np.column_stack(columns)
    params, *_ = np.linalg.lstsq(design, s[condition:], rcond=None)
    return params


def _css_least_squares(s, order, condition):
    p, q = order.p, order.q

    def objective(theta):
        return _css_residuals(s, theta[0], theta[1:1 + p], theta[1 + p:], condition)

    lower = np.r_[np.full(1 + p, -np.inf), np.full(q, -MA_COEFFICIENT_BOUND)]
    upper = np.r_[np.full(1 + p, np.inf), np.full(q, MA_COEFFICIENT_BOUND)]

    mean = float(np.mean(s[condition:]))
    starts = [np.r_[_ols_ar(s, p, condition), np.zeros(q)]]
    for value in MULTI_START_VALUES:
        starts.append(np.r_[mean * (1.0 - p * value), np.full(p, value), np.full(q, value)])

    best_theta, best_cost = None, np.inf
    for x0 in starts:
        x0 = np.clip(x0, lower + 1e-9, upper - 1e-9)
        try:
            result = optimize.least_squares(
                objective, x0, bounds=(lower, upper),
                ftol=OPTIMIZER_TOLERANCE, xtol=OPTIMIZER_TOLERANCE,
                max_nfev=OPTIMIZER_MAX_ITERATIONS
            )
        except (ValueError, FloatingPointError) as e:
            logger.debug(f"Start {x0} abandoned for order {order}: {e}")
            continue
        if np.all(np.isfinite(result.x)) and result.cost < best_cost:
            best_theta, best_cost = result.x, result.cost

    if best_theta is None:
        raise InsufficientHistoryError(f"No start converged for order {order}")
    return best_theta


def fit(x, order: Order, condition: Optional[int] = None) -> ArimaModel:
    """
    Fit ARIMA(p, d, q) by conditional sum of squares

    The series is differenced d times; (c, a, b) maximize the CSS
    likelihood and sigma^2 is the mean squared innovation. Pure AR orders
    are solved exactly by least squares, orders with an MA part by bounded
    trust-region least squares from several starts.

    Args:
        x: Undifferenced series
        order (Order): Order to fit
        condition (int): Differenced samples conditioned on (default p)

    Returns:
        ArimaModel: Fitted model
    """
    x = _as_series(x)
    p, d, q = order.p, order.d, order.q
    if len(x) < d + p + q + 2:
        raise InsufficientHistoryError(
            f"Order {order} needs at least {d + p + q + 2} samples, got {len(x)}"
        )

    s = difference(x, d)
    condition = p if condition is None else max(condition, p)
    if len(s) - condition < p + q + 1:
        raise InsufficientHistoryError(
            f"Order {order} leaves {len(s) - condition} conditioned samples"
        )

    if q == 0:
        theta = _ols_ar(s, p, condition)
    else:
        theta = _css_least_squares(s, order, condition)

    intercept, ar, ma = theta[0], theta[1:1 + p], theta[1 + p:]
    e = _css_residuals(s, intercept, ar, ma, condition)
    model = ArimaModel(order, ar, ma, intercept, float(np.dot(e, e)) / len(e))
    if not model.stationary:
        logger.debug(f"Fitted order {order} has AR roots on or inside the unit circle")
    return model

# ============================================================================
# ORDER SELECTION
# ============================================================================

def parameter_count(order: Order) -> int:
    """p + q coefficients, the intercept and the noise variance"""
    return order.p + order.q + 2


def identifiable(order: Order, n: int,
                 per_parameter: int = MIN_INNOVATIONS_PER_PARAMETER) -> bool:
    """
    True when an n-sample series supports fitting ``order``

    The mean-only order needs p + d + q + 2 samples; any other order needs
    ``per_parameter`` innovations for each of its parameters.
    """
    if n < order.total + 2:
        return False
    if order == Order():
        return True
    return n - order.p - order.d >= per_parameter * parameter_count(order)


def aic(loglik: float, k: int) -> float:
    """Akaike information criterion 2k - 2 ln L"""
    if k < 0:
        raise InvalidInputError("Parameter count must be >= 0")
    return 2.0 * k - 2.0 * loglik


def model_aic(model: ArimaModel, x, lag: Optional[int] = None) -> float:
    """
    AIC of a model on an undifferenced series

    Innovations are evaluated on the samples after the first ``lag``
    (default p + d) so that models with different orders are compared on
    the same observations; the variance is concentrated out.
    """
    order = model.order
    lag = order.p + order.d if lag is None else lag
    if lag < order.p + order.d:
        raise InvalidInputError(f"lag {lag} is shorter than p + d of {order}")
    s = difference(x, order.d)
    e = residuals(model, s, condition=lag - order.d)
    return aic(_concentrated_log_likelihood(e), parameter_count(order))


def _selection_key(item):
    value, model = item
    order = model.order
    return (round(value, 9), order.total, order.d, order.p, order.q)


def search_orders(x, candidates: Sequence[Order],
                  extra_models: Iterable[ArimaModel] = (),
                  lag: Optional[int] = None) -> ArimaModel:
    """
    Fit every candidate order and return the minimum-AIC model

    Ties are broken by smallest p + d + q, then smallest d, then smallest p.
    ``extra_models`` are scored without refitting. Candidates the series cannot
    identify are skipped.
    """
    x = _as_series(x)
    extra_models = list(extra_models)
    feasible = [o for o in candidates if identifiable(o, len(x))]
    if lag is None:
        orders = feasible + [m.order for m in extra_models]
        if not orders:
            raise InsufficientHistoryError(f"No candidate order fits {len(x)} samples")
        lag = max(o.p + o.d for o in orders)

    scored = []
    for order in feasible:
        try:
            model = fit(x, order, condition=lag - order.d)
        except InsufficientHistoryError as e:
            logger.debug(f"Skipping order {order}: {e}")
            continue
        scored.append((model_aic(model, x, lag), model))

    for model in extra_models:
        try:
            scored.append((model_aic(model, x, lag), model))
        except InsufficientHistoryError as e:
            logger.debug(f"Skipping reference model {model.order}: {e}")

    if not scored:
        raise InsufficientHistoryError(f"No candidate order could be fitted to {len(x)} samples")

    value, best = min(scored, key=_selection_key)
    logger.debug(f"Selected order {best.order} with AIC {value:.4f} out of {len(scored)} fits")
    return best


def candidate_orders(p_max: int, d_max: int, q_max: int,
                     window: Optional[int] = None):
    """Exhaustive (p, d, q) grid within bounds, optionally restricted to a window"""
    orders = [Order(p, d, q)
              for d in range(d_max + 1)
              for p in range(p_max + 1)
              for q in range(q_max + 1)]
    if window is not None:
        orders = [o for o in orders if o.fits_window(window)]
    return orders


def select_order(x, p_max: int, d_max: int, q_max: int,
                 window: Optional[int] = None) -> Tuple[Order, ArimaModel]:
    """
    Exhaustive AIC order selection

    Args:
        x: Undifferenced series
        p_max, d_max, q_max (int): Inclusive bounds
        window (int): Calibration window F; candidates need p + d < F, q < F

    Returns:
        tuple: (Order, ArimaModel) with minimum AIC
    """
    candidates = candidate_orders(p_max, d_max, q_max, window)
    if not candidates:
        raise InsufficientHistoryError("Empty candidate grid")
    best = search_orders(x, candidates)
    return best.order, best