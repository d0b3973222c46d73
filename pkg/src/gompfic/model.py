"""Gamma-Gompertz lifespan distribution.

Ages are measured in years since the model origin (``y = 0`` is usually
age 60).  The marginal hazard is

    h(y) = a e^{by} / (1 + s G(y)),   G(y) = (a/b)(e^{by} - 1),

with ``s`` the gamma frailty variance.  ``s = 0`` is the Gompertz model.

Every quantity that divides by ``s`` is written in terms of
``u = s G(y)`` and the function ``log1p(u)/u``; for small ``u`` that
function and its first two derivatives are evaluated from their power
series so the Gompertz limit is reached smoothly and exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Series branch is used wherever u = s*G(y) is below this; any sigma2
# under 1e-5 lands there for ages where G(y) < 5000.
U_SERIES_MAX = 0.05
_N_SERIES = 24
EXP_OVERFLOW = 1e300


class ModelDomainError(ValueError):
    """Raised when a model quantity is not finite at the requested age."""


@dataclass(frozen=True)
class ModelParams:
    """Gamma-Gompertz parameters on the origin scale.

    Parameters
    ----------
    a : float
        Baseline hazard at the origin, per year.
    b : float
        Gompertz slope, per year.
    sigma2 : float
        Frailty variance at the origin; 0 gives the Gompertz model.
    """

    a: float
    b: float
    sigma2: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a > 0):
            raise ValueError(f"a must be positive, got {self.a}")
        if not (np.isfinite(self.b) and self.b > 0):
            raise ValueError(f"b must be positive, got {self.b}")
        if not (np.isfinite(self.sigma2) and self.sigma2 >= 0):
            raise ValueError(f"sigma2 must be non-negative, got {self.sigma2}")

    @property
    def is_gompertz(self) -> bool:
        return self.sigma2 == 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.sigma2], dtype=float)


@dataclass(frozen=True)
class AgeScale:
    """Maps calendar ages to years since origin."""

    origin_age: float = 60.0
    truncation_age: float = 90.0

    def __post_init__(self):
        if self.truncation_age < self.origin_age:
            raise ValueError(
                f"truncation_age {self.truncation_age} is below origin_age {self.origin_age}"
            )

    @property
    def truncation(self) -> float:
        return self.truncation_age - self.origin_age

    def to_model(self, age):
        return np.asarray(age, dtype=float) - self.origin_age

    def to_age(self, y):
        return np.asarray(y, dtype=float) + self.origin_age


# Coefficients of log1p(u)/u = sum_k c_k u^k and its first two derivatives.
_K = np.arange(_N_SERIES)
_C0 = (-1.0) ** _K / (_K + 1.0)
_C1 = np.array([(k + 1) * _C0[k + 1] for k in range(_N_SERIES - 1)])
_C2 = np.array([(k + 1) * _C1[k + 1] for k in range(_N_SERIES - 2)])


def _horner(coef, u):
    if u.size == 0:
        return u.copy()
    umax = float(np.max(u))
    # terms beyond u^k with umax^k < 1e-18 cannot change the sum
    k = len(coef) if umax >= 1e-300 and umax > 0.0 else 1
    if 0.0 < umax < 1.0:
        k = min(len(coef), int(np.ceil(-18.0 / np.log10(umax))) + 2)
    out = np.full_like(u, coef[k - 1])
    for c in coef[k - 2::-1]:
        out = out * u + c
    return out


def log1p_ratio(u, deriv: int = 0, branch: str = "auto"):
    """``log1p(u)/u`` (or its first or second derivative) for ``u >= 0``.

    ``branch`` forces the power series or the closed form; only tests
    should need that.
    """
    if deriv not in (0, 1, 2):
        raise ValueError("deriv must be 0, 1 or 2")
    u = np.asarray(u, dtype=float)
    if branch == "auto":
        small = u < U_SERIES_MAX
    else:
        small = np.full(u.shape, branch == "series")
    out = np.empty_like(u)
    us = u[small]
    ul = u[~small]
    out[small] = _horner((_C0, _C1, _C2)[deriv], us)
    if deriv == 0:
        out[~small] = np.log1p(ul) / ul
    elif deriv == 1:
        out[~small] = (ul / (1 + ul) - np.log1p(ul)) / ul**2
    else:
        out[~small] = (2 * np.log1p(ul) - 2 * ul / (1 + ul) - (ul / (1 + ul)) ** 2) / ul**3
    return out


def _exp_by(params: ModelParams, y):
    y = np.asarray(y, dtype=float)
    by = params.b * y
    if np.any(by > np.log(EXP_OVERFLOW)):
        bad = np.max(y)
        raise ModelDomainError(f"e^(b*y) overflows at y={bad}")
    return np.exp(by)


def cumulative_baseline(params: ModelParams, y):
    """Gompertz cumulative hazard ``(a/b)(e^{by} - 1)``."""
    y = np.asarray(y, dtype=float)
    _exp_by(params, y)
    return params.a / params.b * np.expm1(params.b * y)


def cumulative_hazard(params: ModelParams, y):
    """Marginal cumulative hazard ``log1p(s G)/s``."""
    g = cumulative_baseline(params, y)
    return g * log1p_ratio(params.sigma2 * g)


def _check_y(y):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ValueError("y must be finite and non-negative")
    return y


def hazard(params: ModelParams, y):
    y = _check_y(y)
    base = params.a * _exp_by(params, y)
    if params.sigma2 == 0.0:
        return base
    out = base / (1.0 + params.sigma2 * cumulative_baseline(params, y))
    if not np.all(np.isfinite(out)):
        raise ModelDomainError(f"hazard is not finite at y={y}")
    return out


def log_survival(params: ModelParams, y):
    return -cumulative_hazard(params, _check_y(y))


def survival(params: ModelParams, y):
    return np.exp(log_survival(params, y))


def log_density(params: ModelParams, y):
    y = _check_y(y)
    g = cumulative_baseline(params, y)
    u = params.sigma2 * g
    return np.log(params.a) + params.b * y - g * log1p_ratio(u) - np.log1p(u)


def density(params: ModelParams, y):
    return np.exp(log_density(params, y))


def log_hazard_curvature(params: ModelParams, y):
    """Second derivative of ``ln h`` with respect to age.

    Zero for the Gompertz model and negative whenever ``0 < sigma2 < b/a``.
    """
    y = _check_y(y)
    s = params.sigma2
    if s == 0.0:
        return np.zeros_like(y)
    e = _exp_by(params, y)
    g = params.a / params.b * np.expm1(params.b * y)
    # G''(1 + sG) - s G'^2 reduces to a b e^{by} (1 - s a / b)
    num = params.a * params.b * e * (1.0 - s * params.a / params.b)
    return -s * num / (1.0 + s * g) ** 2


def quantile(params: ModelParams, p):
    """Age ``y`` with ``1 - S(y) = p``."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p >= 1)) or not np.all(np.isfinite(p)):
        raise ValueError("p must lie in [0, 1)")
    return _quantile_from_log_survival(params, np.log1p(-p))


def _quantile_from_log_survival(params: ModelParams, log_s):
    # solve G(y) = g for the cumulative baseline g implied by log S
    a, b, s = params.a, params.b, params.sigma2
    if s == 0.0:
        g = -log_s
    else:
        g = np.expm1(-s * log_s) / s
    return np.log1p(b * g / a) / b


def sample_lifespans(params: ModelParams, n: int, rng: np.random.Generator, conditional_on=None):
    """Draw ``n`` lifespans by inversion.

    With ``conditional_on = y_L`` the draws come from ``Y | Y > y_L``:
    the uniform is rescaled by ``S(y_L)`` so no draws are rejected.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    u = rng.random(n)
    # 1 - random() lies in (0, 1]
    log_s = np.log1p(-u)
    if conditional_on is not None:
        if conditional_on < 0:
            raise ValueError("conditional_on must be non-negative")
        log_s = log_s + log_survival(params, conditional_on)
    y = _quantile_from_log_survival(params, log_s)
    if conditional_on is not None:
        y = np.maximum(y, np.nextafter(conditional_on, np.inf))
    return y
