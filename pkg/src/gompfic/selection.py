"""Boundary-aware choice between the Gompertz and gamma-Gompertz models.

The local-misspecification limit of the focus estimators is described by
four numbers: ``tau0`` (null-model spread), ``omega`` (sensitivity of the
focus to the frailty variance), ``delta`` (scaled frailty variance) and
``kappa`` (limiting SD of ``sqrt(n) * sigma2_hat``).  Every criterion here
is a function of their estimates.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import optimize
from scipy.special import erfc, ndtr, ndtri

from . import model
from .inference import FitResult, InfoQuantities, InformationError
from .model import ModelParams

SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))
# delta/kappa above which the full model has smaller limiting MSE
MSE_THRESHOLD = 0.8399
# same for the limiting MAE when the focus is sigma2 (or any focus with
# zero gradient in the Gompertz parameters)
MAE_SIGMA2_THRESHOLD = 0.6399

NULL = "null"
FULL = "full"


def norm_pdf(x):
    with np.errstate(over="ignore"):
        return np.exp(-0.5 * np.square(x)) / np.sqrt(2.0 * np.pi)


def norm_cdf(x):
    return ndtr(x)


def chi2_1_sf(x):
    """Upper tail of the chi-square distribution with one degree of freedom."""
    x = np.asarray(x, dtype=float)
    return erfc(np.sqrt(np.maximum(x, 0.0) / 2.0))


# --- focus registry -------------------------------------------------------

FOCUS_KINDS = ("sigma2", "log_hazard_curvature", "log_hazard", "survival")
_SHORT = {"curvature": "log_hazard_curvature", "loghaz": "log_hazard", "survival": "survival"}
_LONG = {v: k for k, v in _SHORT.items()}


@dataclass(frozen=True)
class FocusSpec:
    """A focus parameter; ``y`` is in years since origin where needed."""

    kind: str
    y: float | None = None

    def __post_init__(self):
        if self.kind not in FOCUS_KINDS:
            raise ValueError(f"unknown focus kind {self.kind!r}")
        if self.kind == "sigma2":
            if self.y is not None:
                raise ValueError("the sigma2 focus takes no age")
        elif self.y is None or not np.isfinite(self.y) or self.y < 0:
            raise ValueError(f"focus {self.kind} needs an age y >= 0")

    def label(self, origin_age: float = 60.0) -> str:
        if self.kind == "sigma2":
            return "sigma2"
        return f"{_LONG[self.kind]}@{self.y + origin_age:g}"

    @classmethod
    def parse(cls, text: str, origin_age: float = 60.0) -> "FocusSpec":
        """Parse ``sigma2``, ``curvature@Y``, ``loghaz@Y`` or ``survival@Y``.

        ``Y`` is a calendar age.
        """
        text = text.strip()
        if text == "sigma2":
            return cls("sigma2")
        m = re.fullmatch(r"(curvature|loghaz|survival)@([0-9]+(?:\.[0-9]*)?)", text)
        if not m:
            raise ValueError(
                f"bad focus {text!r}; expected sigma2, curvature@Y, loghaz@Y or survival@Y"
            )
        return cls(_SHORT[m.group(1)], float(m.group(2)) - origin_age)

    def check_support(self, lifespans, tolerance: float = 10.0):
        """Warn when the focus age lies outside the observed ages."""
        if self.y is None:
            return
        hi = float(np.max(lifespans))
        if self.y > hi + tolerance:
            warnings.warn(
                f"focus age y={self.y:g} lies beyond the largest observed lifespan {hi:g}",
                stacklevel=2,
            )
        elif self.y < 0:
            warnings.warn(f"focus age y={self.y:g} lies before the origin", stacklevel=2)


def focus_value(focus: FocusSpec, params: ModelParams) -> float:
    if focus.kind == "sigma2":
        return float(params.sigma2)
    if focus.kind == "log_hazard_curvature":
        return float(model.log_hazard_curvature(params, focus.y))
    if focus.kind == "log_hazard":
        return float(np.log(model.hazard(params, focus.y)))
    return float(model.survival(params, focus.y))


def focus_gradient(focus: FocusSpec, params: ModelParams):
    """Gradient of the focus at ``(a, b, sigma2 = 0)``.

    Returns ``(d mu / d(a, b), d mu / d sigma2)``.
    """
    a, b = params.a, params.b
    if focus.kind == "sigma2":
        return np.zeros(2), 1.0
    y = focus.y
    e = np.exp(b * y)
    g = a / b * np.expm1(b * y)
    if focus.kind == "log_hazard_curvature":
        return np.zeros(2), float(-a * b * e)
    if focus.kind == "log_hazard":
        return np.array([1.0 / a, y]), float(-g)
    gb = a / b * (y * e - np.expm1(b * y) / b)
    surv = np.exp(-g)
    return np.array([-surv * g / a, -surv * gb]), float(surv * g * g / 2.0)


@dataclass(frozen=True, eq=False)
class FocusGeometry:
    focus: FocusSpec
    mu_null: float
    dmu_dtheta: np.ndarray
    dmu_dgamma: float
    tau0: float
    omega: float


def focus_geometry(focus: FocusSpec, fit_null: FitResult, info: InfoQuantities) -> FocusGeometry:
    params = fit_null.params
    dtheta, dgamma = focus_gradient(focus, params)
    try:
        solved = np.linalg.solve(info.J00, dtheta)
    except np.linalg.LinAlgError as exc:
        raise InformationError("J00 is singular") from exc
    tau0 = float(np.sqrt(max(dtheta @ solved, 0.0)))
    omega = float(info.J10 @ solved - dgamma)
    return FocusGeometry(
        focus=focus,
        mu_null=focus_value(focus, ModelParams(params.a, params.b, 0.0)),
        dmu_dtheta=dtheta,
        dmu_dgamma=float(dgamma),
        tau0=tau0,
        omega=omega,
    )


# --- limiting risks ---------------------------------------------------------


def _cdf_ratio(num, den):
    """Phi(num/den) with the den -> 0+ limit."""
    if den > 0:
        return float(norm_cdf(num / den))
    return 1.0 if num > 0 else (0.0 if num < 0 else 0.5)


def _scaled_pdf_ratio(num, den):
    """den * phi(num/den), which vanishes as den -> 0+."""
    if den > 0:
        return float(den * norm_pdf(num / den))
    return 0.0


def mae_risks(tau0, omega, delta, kappa):
    """Limiting mean absolute errors ``(E|L_null|, E|L_full|)``."""
    _check_kappa(kappa)
    wd = omega * delta
    fold = 2.0 * _scaled_pdf_ratio(wd, tau0) + 2.0 * wd * (_cdf_ratio(wd, tau0) - 0.5)
    r = delta / kappa
    spread = float(np.hypot(tau0, omega * kappa))
    full = (
        fold * (1.0 - float(norm_cdf(r)))
        + spread * SQRT_2_OVER_PI * _cdf_ratio(r * spread, tau0)
        - omega * kappa * float(norm_pdf(r)) * 2.0 * (_cdf_ratio(wd, tau0) - 0.5)
    )
    for name, val in (("null", fold), ("full", full)):
        if not np.isfinite(val):
            raise FloatingPointError(f"MAE risk of the {name} model is not finite")
    return float(fold), float(full)


def mse_risks(tau0, omega, delta, kappa):
    """Limiting mean squared errors ``(E[L_null^2], E[L_full^2])``."""
    _check_kappa(kappa)
    r = delta / kappa
    null = tau0**2 + omega**2 * delta**2
    full = tau0**2 + omega**2 * (
        delta**2 * norm_cdf(-r) - kappa * delta * norm_pdf(r) + kappa**2 * norm_cdf(r)
    )
    return float(null), float(full)


def _check_kappa(kappa):
    if not (np.isfinite(kappa) and kappa > 0):
        raise InformationError(f"kappa must be positive, got {kappa}")


# --- criteria -------------------------------------------------------------


@dataclass(frozen=True)
class SelectionReport:
    criterion: str
    score_null: float
    score_full: float
    chosen: str
    intermediates: dict = field(default_factory=dict)
    focus: str | None = None


def _argmin(score_null, score_full):
    # ties keep the Gompertz model
    return FULL if score_full < score_null else NULL


def fic_mae(geometry: FocusGeometry, info: InfoQuantities, origin_age: float = 60.0) -> SelectionReport:
    kappa = info.kappa
    null, full = mae_risks(geometry.tau0, geometry.omega, info.delta_hat, kappa)
    return SelectionReport(
        criterion="fic_mae",
        score_null=null,
        score_full=full,
        chosen=_argmin(null, full),
        intermediates={
            "delta_hat": info.delta_hat,
            "kappa_hat": kappa,
            "tau0_hat": geometry.tau0,
            "omega_hat": geometry.omega,
        },
        focus=geometry.focus.label(origin_age),
    )


def pretest(info: InfoQuantities) -> SelectionReport:
    """MSE pre-test: the full model iff ``delta_hat/kappa_hat > 0.8399``.

    The scores are the two limiting MSEs for a focus with ``tau0 = 0`` and
    ``|omega| = 1``; the decision itself is focus-free.
    """
    kappa = info.kappa
    null, full = mse_risks(0.0, 1.0, info.delta_hat, kappa)
    ratio = info.delta_hat / kappa
    return SelectionReport(
        criterion="pretest",
        score_null=null,
        score_full=full,
        chosen=FULL if ratio > MSE_THRESHOLD else NULL,
        intermediates={"delta_hat": info.delta_hat, "kappa_hat": kappa, "ratio": ratio},
    )


def aic_star(fit_full: FitResult, fit_null: FitResult, info: InfoQuantities) -> SelectionReport:
    """AIC with the boundary bias of the gamma-Gompertz penalty removed."""
    ratio = info.delta_hat / info.kappa
    correction = 2.0 * float(norm_cdf(-ratio))
    full = -2.0 * fit_full.loglik + 6.0 - correction
    null = -2.0 * fit_null.loglik + 4.0
    return SelectionReport(
        criterion="aic_star",
        score_null=null,
        score_full=full,
        chosen=_argmin(null, full),
        intermediates={"delta_hat": info.delta_hat, "kappa_hat": info.kappa, "correction": correction},
    )


def standard_aic(fit: FitResult) -> float:
    k = 3 if fit.model == FULL else 2
    return -2.0 * fit.loglik + 2.0 * k


class LRTResult(NamedTuple):
    statistic: float
    p_value: float

    def reject(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha


def lrt_from_logliks(loglik_full: float, loglik_null: float) -> LRTResult:
    """Mixture LRT: ``T ~ 0.5 chi2_0 + 0.5 chi2_1`` under the Gompertz model."""
    stat = 2.0 * (loglik_full - loglik_null)
    if stat < -1e-6:
        raise RuntimeError(f"gamma-Gompertz log-likelihood below the Gompertz one (T={stat:.3g})")
    stat = max(stat, 0.0)
    if stat == 0.0:
        return LRTResult(0.0, 1.0)
    return LRTResult(stat, 0.5 * float(chi2_1_sf(stat)))


def lrt(fit_full: FitResult, fit_null: FitResult) -> LRTResult:
    return lrt_from_logliks(fit_full.loglik, fit_null.loglik)


# --- local power ----------------------------------------------------------


def lrt_local_power(alpha, delta_over_kappa):
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    r = np.asarray(delta_over_kappa, dtype=float)
    # 1 - Phi(z_{1-alpha} - r); at r = 0 this is alpha by definition, which
    # ndtr(ndtri(alpha)) reproduces only to a few ulps
    out = np.where(r == 0.0, alpha, norm_cdf(r + ndtri(alpha)))
    return float(out) if out.ndim == 0 else out


def pretest_local_power(delta_over_kappa, threshold: float = MSE_THRESHOLD):
    return norm_cdf(np.asarray(delta_over_kappa, dtype=float) - threshold)


def mae_pretest_local_power(delta_over_kappa):
    """Local power of the sigma2-focus FIC_MAE rule viewed as a test."""
    return pretest_local_power(delta_over_kappa, MAE_SIGMA2_THRESHOLD)


# --- thresholds from first principles --------------------------------------


def _mse_gap(r):
    # E[L_full^2] - E[L_null^2] with tau0 = 0, omega = kappa = 1
    return r * r * norm_cdf(-r) - r * norm_pdf(r) + norm_cdf(r) - r * r


def _mae_sigma2_gap(r):
    # E|L_full| - E|L_null| for the sigma2 focus, kappa = 1
    return SQRT_2_OVER_PI - norm_pdf(-r) + r * norm_cdf(-r) - r


def mse_tolerance_radius(xtol: float = 1e-12) -> float:
    """Largest delta/kappa for which the Gompertz estimator has the smaller MSE."""
    return float(optimize.bisect(_mse_gap, 0.1, 3.0, xtol=xtol))


def mae_sigma2_threshold(xtol: float = 1e-12) -> float:
    return float(optimize.bisect(_mae_sigma2_gap, 0.1, 3.0, xtol=xtol))
