"""Maximum likelihood for the Gompertz and gamma-Gompertz models.

All samples share one left-truncation point ``t`` (years since origin), so
the log-likelihood is

    l(a, b, s) = sum_i [ln f(y_i)] - n ln S(t).

Value, gradient and Hessian are analytic in natural coordinates
``(a, b, s)``.  The optimiser works on ``z = (ln h(t), ln b, ln s)`` where
``ln h(t) = ln a + b t`` is the baseline log-hazard at the truncation age;
that removes most of the correlation between ``a`` and ``b``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import roots_legendre

from .model import ModelParams, log1p_ratio, _quantile_from_log_survival, log_survival

logger = logging.getLogger(__name__)

DEFAULT_SIGMA2_STARTS = (1e-6, 1e-3, 0.01, 0.05, 0.1, 0.25)
GRAD_TOL = 1e-8
# interior optimum must beat the boundary by more than this to count
BOUNDARY_LOGLIK_TOL = 1e-9


class FitError(RuntimeError):
    """No optimisation start converged."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class InformationError(ArithmeticError):
    """The estimated information matrix cannot be used."""


@dataclass(frozen=True, eq=False)
class Sample:
    """Lifespans (years since origin) with a common truncation point."""

    lifespans: np.ndarray
    truncation: float = 0.0

    def __post_init__(self):
        y = np.asarray(self.lifespans, dtype=float).ravel()
        object.__setattr__(self, "lifespans", y)
        if y.size < 1:
            raise ValueError("sample must contain at least one lifespan")
        if self.truncation < 0:
            raise ValueError("truncation must be non-negative")
        if not np.all(np.isfinite(y)) or np.any(y <= self.truncation):
            raise ValueError("every lifespan must be finite and exceed the truncation point")

    @property
    def n(self) -> int:
        return int(self.lifespans.size)

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return self.truncation == other.truncation and np.array_equal(
            self.lifespans, other.lifespans
        )


@dataclass(frozen=True, eq=False)
class FitResult:
    model: str
    params: ModelParams
    loglik: float
    hessian: np.ndarray
    converged: bool
    n_starts_used: int
    boundary_hit: bool = False
    grad_norm: float = 0.0
    candidates: list = field(default_factory=list)

    def standard_errors(self):
        """Asymptotic standard errors from the observed information.

        ``None`` when the full model sits on the boundary, where the
        estimator is not asymptotically normal.
        """
        if self.boundary_hit:
            return None
        cov = np.linalg.inv(-self.hessian)
        return np.sqrt(np.clip(np.diag(cov), 0, None))


@dataclass(frozen=True, eq=False)
class InfoQuantities:
    J_full: np.ndarray
    kappa2: float
    delta_hat: float
    n: int
    evaluated_at: str = "full"

    @property
    def kappa(self) -> float:
        return float(np.sqrt(self.kappa2))

    @property
    def J00(self) -> np.ndarray:
        return self.J_full[:2, :2]

    @property
    def J10(self) -> np.ndarray:
        return self.J_full[2, :2]

    @property
    def ratio(self) -> float:
        """``delta_hat / kappa_hat``."""
        return self.delta_hat / self.kappa


def _baseline_terms(a, b, y):
    """G and its derivatives with respect to (a, b); G_aa is zero."""
    by = b * y
    e = np.exp(by)
    em1 = np.expm1(by)
    g = a / b * em1
    ga = em1 / b
    gb = a / b * (y * e - em1 / b)
    gab = gb / a
    gbb = a / b * (y * y * e - 2.0 * y * e / b + 2.0 * em1 / b**2)
    return g, ga, gb, gab, gbb


def _accumulate(s, g, ga, gb, gab, gbb, death: bool, deriv: int, w=None):
    """Sum of F(s, G) = G l0(sG) [+ log1p(sG) for deaths] and derivatives.

    Returns value, gradient and Hessian in (a, b, s), summed with weights.
    """
    u = s * g
    l0 = log1p_ratio(u, 0)
    val = g * l0
    if death:
        val = val + np.log1p(u)
    if w is None:
        w = 1.0
    total = np.sum(w * val)
    if deriv == 0:
        return total, None, None
    inv = 1.0 / (1.0 + u)
    l1 = log1p_ratio(u, 1)
    if death:
        f_g = (1.0 + s) * inv
        f_s = g * g * l1 + g * inv
    else:
        f_g = inv
        f_s = g * g * l1
    grad = np.array([
        np.sum(w * f_g * ga),
        np.sum(w * f_g * gb),
        np.sum(w * f_s),
    ])
    if deriv == 1:
        return total, grad, None
    inv2 = inv * inv
    l2 = log1p_ratio(u, 2)
    if death:
        f_gg = -s * (1.0 + s) * inv2
        f_sg = (1.0 - g) * inv2
        f_ss = g**3 * l2 - g * g * inv2
    else:
        f_gg = -s * inv2
        f_sg = -g * inv2
        f_ss = g**3 * l2
    h = np.empty((3, 3))
    h[0, 0] = np.sum(w * f_gg * ga * ga)
    h[0, 1] = h[1, 0] = np.sum(w * (f_gg * ga * gb + f_g * gab))
    h[1, 1] = np.sum(w * (f_gg * gb * gb + f_g * gbb))
    h[0, 2] = h[2, 0] = np.sum(w * f_sg * ga)
    h[1, 2] = h[2, 1] = np.sum(w * f_sg * gb)
    h[2, 2] = np.sum(w * f_ss)
    return total, grad, h


def _loglik_arrays(params: ModelParams, y, t, deriv: int, w=None):
    a, b, s = params.a, params.b, params.sigma2
    if w is None:
        n = y.size
        sum_y = float(np.sum(y))
    else:
        n = float(np.sum(w))
        sum_y = float(np.sum(w * y))
    fd, gd, hd = _accumulate(s, *_baseline_terms(a, b, y), death=True, deriv=deriv, w=w)
    ft, gt, ht = _accumulate(
        s, *_baseline_terms(a, b, np.array([float(t)])), death=False, deriv=deriv
    )
    value = n * np.log(a) + b * sum_y - fd + n * ft
    if deriv == 0:
        return value
    grad = np.array([n / a, sum_y, 0.0]) - gd + n * gt
    if deriv == 1:
        return value, grad
    hess = -hd + n * ht
    hess[0, 0] -= n / a**2
    return value, grad, hess


def loglik(params: ModelParams, sample: Sample, deriv: int = 0):
    """Truncated log-likelihood, optionally with gradient and Hessian.

    Parameters
    ----------
    params : ModelParams
    sample : Sample
    deriv : int
        0 returns the value; 1 adds the gradient; 2 adds the Hessian.
        Derivatives are with respect to ``(a, b, sigma2)``.  At
        ``sigma2 = 0`` the sigma2 entries are one-sided derivatives.
    """
    if sample.n < 1:
        raise ValueError("empty sample")
    return _loglik_arrays(params, sample.lifespans, sample.truncation, deriv)


# --- optimiser coordinates -------------------------------------------------
#
# z = (ln h(t), ln b) for the Gompertz fit and (ln h(t), ln b, sigma2) for
# the gamma-Gompertz fit.  sigma2 stays on its natural scale with a bound
# at zero: in ln sigma2 the gradient shrinks like sigma2 and optimisers
# stall at spurious near-boundary points.


def _to_natural(z, t):
    b = np.exp(z[1])
    a = np.exp(z[0] - b * t)
    s = float(z[2]) if len(z) > 2 else 0.0
    return a, b, s


def _to_internal(a, b, s, t):
    z = [np.log(a) + b * t, np.log(b)]
    if s is not None:
        z.append(s)
    return np.array(z, dtype=float)


def _internal_grad_hess(z, t, grad, hess):
    """Chain-rule natural (a, b, s) derivatives to internal coordinates."""
    a, b, _ = _to_natural(z, t)
    k = len(z)
    jac = np.zeros((3, k))
    jac[0, 0] = a
    jac[0, 1] = -a * t * b
    jac[1, 1] = b
    if k > 2:
        jac[2, 2] = 1.0
    gz = jac.T @ grad
    if hess is None:
        return gz, None
    hz = jac.T @ hess @ jac
    hz[0, 0] += grad[0] * a
    hz[0, 1] += grad[0] * (-a * t * b)
    hz[1, 0] += grad[0] * (-a * t * b)
    hz[1, 1] += grad[0] * a * t * b * (t * b - 1.0) + grad[1] * b
    return gz, hz


class _Objective:
    """Negative mean log-likelihood in internal coordinates."""

    def __init__(self, sample: Sample, full: bool):
        self.y = sample.lifespans
        self.t = sample.truncation
        self.n = sample.n
        self.full = full
        self.evaluations = 0

    def params(self, z):
        a, b, s = _to_natural(z, self.t)
        return ModelParams(a, b, s if self.full else 0.0)

    def _natural(self, z, deriv):
        self.evaluations += 1
        try:
            p = self.params(z)
        except ValueError:
            return None
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return _loglik_arrays(p, self.y, self.t, deriv)

    def value(self, z):
        out = self._natural(z, 0)
        if out is None or not np.isfinite(out):
            return np.inf
        return -out / self.n

    def value_grad(self, z):
        out = self._natural(z, 1)
        if out is None or not np.isfinite(out[0]) or not np.all(np.isfinite(out[1])):
            return np.inf, np.zeros(len(z))
        v, g = out
        gz, _ = _internal_grad_hess(z, self.t, g, None)
        return -v / self.n, -gz / self.n

    def value_grad_hess(self, z):
        out = self._natural(z, 2)
        if out is None or not np.isfinite(out[0]) or not np.all(np.isfinite(out[2])):
            return np.inf, None, None
        v, g, h = out
        gz, hz = _internal_grad_hess(z, self.t, g, h)
        return -v / self.n, -gz / self.n, -hz / self.n


def _projected_gradient(z, g):
    pg = g.copy()
    if len(z) > 2 and z[2] <= 0.0 and g[2] > 0.0:
        pg[2] = 0.0
    return pg


def _newton_polish(obj: _Objective, z, max_iter=50):
    """Projected damped Newton; returns (z, projected-gradient inf-norm)."""
    z = np.array(z, dtype=float)
    if len(z) > 2:
        z[2] = max(z[2], 0.0)
    f, g, h = obj.value_grad_hess(z)
    for _ in range(max_iter):
        if g is None or not np.isfinite(f):
            return z, np.inf
        pg = _projected_gradient(z, g)
        gnorm = np.max(np.abs(pg))
        if gnorm < GRAD_TOL:
            return z, gnorm
        free = np.ones(len(z), dtype=bool)
        if len(z) > 2 and z[2] <= 0.0 and g[2] > 0.0:
            free[2] = False
        hf = h[np.ix_(free, free)]
        w, v = np.linalg.eigh(hf)
        # indefinite curvature is flipped so the step stays a descent direction
        w = np.maximum(np.abs(w), 1e-10 * max(1.0, np.max(np.abs(w))))
        step = np.zeros_like(z)
        step[free] = -(v @ ((v.T @ g[free]) / w))
        lam = 1.0
        for _ in range(60):
            z_new = z + lam * step
            if len(z) > 2:
                z_new[2] = max(z_new[2], 0.0)
            f_new = obj.value(z_new)
            if f_new <= f + 1e-4 * (g @ (z_new - z)):
                break
            lam *= 0.5
        else:
            return z, gnorm
        z = z_new
        f, g, h = obj.value_grad_hess(z)
    if g is None:
        return z, np.inf
    return z, float(np.max(np.abs(_projected_gradient(z, g))))


def _optimise(obj: _Objective, z0):
    """Bounded quasi-Newton from ``z0``, derivative-free fallback, Newton polish."""
    bounds = [(None, None), (None, None)] + ([(0.0, None)] if len(z0) > 2 else [])
    res = optimize.minimize(
        obj.value_grad, z0, jac=True, method="L-BFGS-B", bounds=bounds,
        options={"gtol": GRAD_TOL, "ftol": 1e-15, "maxiter": 500},
    )
    z = res.x
    if not np.isfinite(res.fun):
        def folded(x):
            x = np.array(x, dtype=float)
            if len(x) > 2:
                x[2] = abs(x[2])
            return obj.value(x)

        res = optimize.minimize(
            folded, z0, method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": 4000},
        )
        z = res.x
        if len(z) > 2:
            z[2] = abs(z[2])
    return _newton_polish(obj, z)


@dataclass
class StartConfig:
    sigma2_starts: tuple = DEFAULT_SIGMA2_STARTS
    ab_start: tuple | None = None


def occurrence_exposure(lifespans, truncation, width=1.0):
    """Deaths and person-years in intervals of ``width`` above ``truncation``.

    Returns (lower edges, deaths, exposure).
    """
    y = np.asarray(lifespans, dtype=float)
    top = truncation + width * np.ceil((y.max() - truncation) / width + 1e-12)
    edges = np.arange(truncation, top + width / 2, width)
    lo = edges[:-1]
    deaths = np.histogram(y, bins=edges)[0].astype(float)
    exposure = np.array([np.clip(y - x, 0.0, width).sum() for x in lo])
    return lo, deaths, exposure


def gompertz_start(sample: Sample):
    """(a, b) from a deaths-weighted regression of log rates on age."""
    lo, d, e = occurrence_exposure(sample.lifespans, sample.truncation)
    keep = (d > 0) & (e > 0)
    if keep.sum() >= 2:
        mid = lo[keep] + 0.5
        slope, icpt = np.polyfit(mid, np.log(d[keep] / e[keep]), 1, w=np.sqrt(d[keep]))
        if np.isfinite(slope) and 0.005 < slope < 1.0:
            return float(np.exp(icpt)), float(slope)
    b = 0.1
    mean_excess = float(np.mean(sample.lifespans - sample.truncation))
    h_t = 1.0 / max(mean_excess, 1e-3)
    return h_t * np.exp(-b * sample.truncation), b


def _finish(obj: _Objective, sample, z, gnorm, model, n_starts, candidates, boundary=False):
    p = obj.params(z)
    value, _, hess = loglik(p, sample, deriv=2)
    if model == "null":
        hess = hess[:2, :2]
    return FitResult(
        model=model,
        params=p,
        loglik=float(value),
        hessian=hess,
        converged=bool(gnorm < GRAD_TOL * 10),
        n_starts_used=n_starts,
        boundary_hit=boundary,
        grad_norm=float(gnorm),
        candidates=candidates,
    )


def fit_null(sample: Sample, starts: StartConfig | None = None) -> FitResult:
    """Gompertz MLE (sigma2 = 0)."""
    if sample.n < 2:
        raise ValueError("fit_null needs at least two observations")
    starts = starts or StartConfig()
    a0, b0 = starts.ab_start or gompertz_start(sample)
    obj = _Objective(sample, full=False)
    z, gnorm = _optimise(obj, _to_internal(a0, b0, None, sample.truncation))
    if not np.isfinite(gnorm):
        raise FitError("Gompertz fit failed", [{"start": (a0, b0), "grad_norm": gnorm}])
    fit = _finish(obj, sample, z, gnorm, "null", 1, [])
    if not fit.converged:
        raise FitError(
            "Gompertz fit did not converge",
            [{"start": (a0, b0), "grad_norm": gnorm, "params": fit.params}],
        )
    return fit


def fit_full(sample: Sample, starts: StartConfig | None = None, null_fit: FitResult | None = None):
    """Gamma-Gompertz MLE with sigma2 >= 0.

    One bounded optimisation is run from each value in
    ``starts.sigma2_starts``; the Gompertz fit is the boundary candidate.
    The candidate with the largest log-likelihood wins and ties go to the
    boundary.
    """
    if sample.n < 3:
        raise ValueError("fit_full needs at least three observations")
    starts = starts or StartConfig()
    if null_fit is None:
        null_fit = fit_null(sample, starts)
    obj = _Objective(sample, full=True)
    a0, b0 = null_fit.params.a, null_fit.params.b
    best = None
    diagnostics = []
    for s0 in starts.sigma2_starts:
        try:
            z, gnorm = _optimise(obj, _to_internal(a0, b0, s0, sample.truncation))
            value = obj.value(z)
        except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
            diagnostics.append({"sigma2_start": s0, "error": str(exc)})
            continue
        ok = np.isfinite(value) and gnorm < GRAD_TOL * 10
        diagnostics.append({
            "sigma2_start": s0,
            "sigma2": float(z[2]),
            "loglik": float(-value * obj.n),
            "grad_norm": float(gnorm),
            "converged": bool(ok),
        })
        if not ok or z[2] <= 0.0:
            continue
        if best is None or value < best[0]:
            best = (value, z, gnorm)
    n_starts = len(starts.sigma2_starts)
    if best is not None and -best[0] * obj.n > null_fit.loglik + BOUNDARY_LOGLIK_TOL:
        return _finish(obj, sample, best[1], best[2], "full", n_starts, diagnostics)
    if best is None and not null_fit.converged:
        raise FitError("no start converged for the gamma-Gompertz fit", diagnostics)
    # boundary: curvature at (a_null, b_null, 0) with one-sided sigma2 terms
    value, _, hess = loglik(null_fit.params, sample, deriv=2)
    return FitResult(
        model="full",
        params=null_fit.params,
        loglik=float(value),
        hessian=hess,
        converged=null_fit.converged,
        n_starts_used=n_starts,
        boundary_hit=True,
        grad_norm=null_fit.grad_norm,
        candidates=diagnostics,
    )


def score_sigma2(null_fit: FitResult, sample: Sample) -> float:
    """One-sided score for sigma2 at the Gompertz MLE."""
    return float(loglik(null_fit.params, sample, deriv=1)[1][2])


def info_quantities(fit: FitResult, n: int, null_fit: FitResult | None = None,
                    sample: Sample | None = None, at: str = "full") -> InfoQuantities:
    """Information matrix ``-H/n`` and the boundary geometry it implies.

    ``at="null"`` evaluates the Hessian at ``(a_null, b_null, 0)``; that
    needs ``null_fit`` and ``sample``.  The default uses the full fit.
    """
    if at == "full":
        hess = fit.hessian
    elif at == "null":
        if null_fit is None or sample is None:
            raise ValueError("at='null' needs null_fit and sample")
        hess = loglik(null_fit.params, sample, deriv=2)[2]
    else:
        raise ValueError(f"unknown evaluation point {at!r}")
    J = -np.asarray(hess, dtype=float) / n
    J = 0.5 * (J + J.T)
    cond = np.linalg.cond(J[:2, :2])
    if not np.isfinite(cond) or cond > 1e14:
        raise InformationError(f"J00 is singular (condition number {cond:.3g})")
    try:
        Jinv = np.linalg.inv(J)
    except np.linalg.LinAlgError as exc:
        raise InformationError(f"J_full is singular (condition number {np.linalg.cond(J):.3g})") from exc
    kappa2 = float(Jinv[2, 2])
    if not np.isfinite(kappa2) or kappa2 <= 0:
        raise InformationError(
            f"kappa^2 = {kappa2:.6g} is not positive (condition number {np.linalg.cond(J):.3g})"
        )
    delta = 0.0 if fit.boundary_hit else float(np.sqrt(n) * fit.params.sigma2)
    return InfoQuantities(J_full=J, kappa2=kappa2, delta_hat=delta, n=int(n), evaluated_at=at)


def expected_information(params: ModelParams, truncation: float, nodes: int = 400) -> np.ndarray:
    """Per-observation Fisher information in (a, b, sigma2).

    Gauss-Legendre over the conditional survival probability, so the
    heavy right tail is covered without choosing an upper age.
    """
    x, wts = roots_legendre(nodes)
    p = 0.5 * (x + 1.0)
    w = 0.5 * wts
    # conditional quantile: S(y) = S(t) * (1 - p)
    log_s = log_survival(params, truncation) + np.log1p(-p)
    y = _quantile_from_log_survival(params, log_s)
    _, _, hess = _loglik_arrays(params, y, truncation, 2, w=w)
    return -hess
