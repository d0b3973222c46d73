"""Monte Carlo engine for comparing the selection criteria.

Each replication draws a cohort at the origin age, keeps the survivors to
the window age, fits both models and records every criterion's decision
together with the focus estimates.  Replication ``r`` always uses the
random stream seeded by ``(master_seed, r)``, so results do not depend on
the number of worker processes.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from . import selection as sel
from .inference import (
    FitError,
    InformationError,
    Sample,
    StartConfig,
    fit_full,
    fit_null,
    info_quantities,
)
from .model import ModelParams, sample_lifespans, survival
from .selection import FocusSpec

logger = logging.getLogger(__name__)

SCENARIO_PARAMS = {
    "S1": ModelParams(a=0.013, b=0.092, sigma2=0.0625),
    "S2": ModelParams(a=0.013, b=0.092, sigma2=0.03),
    "S3": ModelParams(a=0.0198, b=0.0726, sigma2=0.0),
}
CRITERIA = ("fic_mae", "pretest", "aic_star", "lrt")
MAX_FAILURE_RATE = 0.01
LRT_ALPHA = 0.05


class ScenarioError(RuntimeError):
    pass


@dataclass(frozen=True)
class Scenario:
    """One simulation setting.

    ``target_n`` is the expected number of survivors at ``calibration_age``
    (defaults to ``window_age``); the sample analysed is everyone alive at
    ``window_age``.
    """

    name: str
    params: ModelParams
    target_n: int
    window_age: float = 90.0
    origin_age: float = 60.0
    replications: int = 200
    master_seed: int = 0
    calibration_age: float | None = None

    def __post_init__(self):
        if self.window_age < self.origin_age:
            raise ValueError("window_age must not be below origin_age")
        if self.target_n < 1 or self.replications < 1:
            raise ValueError("target_n and replications must be positive")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    @property
    def truncation(self) -> float:
        return self.window_age - self.origin_age

    @property
    def cohort_size(self) -> int:
        return calibrate_cohort(self)


def make_scenario(name: str, target_n: int, **kwargs) -> Scenario:
    if name not in SCENARIO_PARAMS:
        raise ValueError(f"unknown scenario {name!r}; expected one of {sorted(SCENARIO_PARAMS)}")
    return Scenario(name=name, params=SCENARIO_PARAMS[name], target_n=target_n, **kwargs)


def calibrate_cohort(scenario: Scenario) -> int:
    """Cohort size at the origin giving ``target_n`` expected survivors."""
    age = scenario.window_age if scenario.calibration_age is None else scenario.calibration_age
    return int(round(scenario.target_n / float(survival(scenario.params, age - scenario.origin_age))))


def replication_rng(master_seed: int, rep_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, rep_id]))


def generate_replication(scenario: Scenario, rep_id: int) -> Sample:
    if not 0 <= rep_id < scenario.replications:
        raise ValueError(f"rep_id {rep_id} outside [0, {scenario.replications})")
    rng = replication_rng(scenario.master_seed, rep_id)
    y = sample_lifespans(scenario.params, calibrate_cohort(scenario), rng)
    kept = y[y > scenario.truncation]
    if kept.size < 3:
        raise ScenarioError(
            f"replication {rep_id} of {scenario.name} kept {kept.size} lifespans past age {scenario.window_age}"
        )
    return Sample(kept, scenario.truncation)


@dataclass
class ReplicationResult:
    rep_id: int
    n: int = 0
    failed: bool = False
    error: str = ""
    sigma2_hat: float = float("nan")
    boundary_hit: bool = False
    delta_hat: float = float("nan")
    kappa_hat: float = float("nan")
    lrt_statistic: float = float("nan")
    lrt_p_value: float = float("nan")
    decisions: dict = field(default_factory=dict)
    mu_null: dict = field(default_factory=dict)
    mu_full: dict = field(default_factory=dict)
    mu_selected: dict = field(default_factory=dict)
    fic_scores: dict = field(default_factory=dict)


def criterion_keys(criteria, foci, origin_age=60.0):
    keys = []
    for c in criteria:
        if c == "fic_mae":
            keys.extend(f"fic_mae:{f.label(origin_age)}" for f in foci)
        elif c in CRITERIA:
            keys.append(c)
        else:
            raise ValueError(f"unknown criterion {c!r}")
    return keys


def analyse_sample(sample: Sample, criteria, foci, origin_age=60.0, starts=None, rep_id=0):
    """Fit both models and apply every criterion to one sample."""
    res = ReplicationResult(rep_id=rep_id, n=sample.n)
    fn = fit_null(sample, starts)
    ff = fit_full(sample, starts, null_fit=fn)
    info = info_quantities(ff, sample.n)
    res.sigma2_hat = ff.params.sigma2
    res.boundary_hit = ff.boundary_hit
    res.delta_hat = info.delta_hat
    res.kappa_hat = info.kappa
    test = sel.lrt(ff, fn)
    res.lrt_statistic, res.lrt_p_value = test
    labels = {}
    for f in foci:
        lab = f.label(origin_age)
        labels[lab] = f
        res.mu_null[lab] = sel.focus_value(f, fn.params)
        res.mu_full[lab] = sel.focus_value(f, ff.params)
    for c in criteria:
        if c == "fic_mae":
            for lab, f in labels.items():
                rep = sel.fic_mae(sel.focus_geometry(f, fn, info), info, origin_age)
                key = f"fic_mae:{lab}"
                res.decisions[key] = rep.chosen
                res.fic_scores[lab] = (rep.score_null, rep.score_full)
        elif c == "pretest":
            res.decisions[c] = sel.pretest(info).chosen
        elif c == "aic_star":
            res.decisions[c] = sel.aic_star(ff, fn, info).chosen
        elif c == "lrt":
            res.decisions[c] = sel.FULL if test.reject(LRT_ALPHA) else sel.NULL
    for key, choice in res.decisions.items():
        pick = res.mu_full if choice == sel.FULL else res.mu_null
        if key.startswith("fic_mae:"):
            lab = key.split(":", 1)[1]
            res.mu_selected[key] = {lab: pick[lab]}
        else:
            res.mu_selected[key] = dict(pick)
    return res


def run_replication(scenario: Scenario, rep_id: int, criteria, foci, starts=None) -> ReplicationResult:
    try:
        sample = generate_replication(scenario, rep_id)
        return analyse_sample(sample, criteria, foci, scenario.origin_age, starts, rep_id)
    except (FitError, InformationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        logger.warning("replication %d of %s failed: %s", rep_id, scenario.name, exc)
        return ReplicationResult(rep_id=rep_id, failed=True, error=f"{type(exc).__name__}: {exc}")


def _run_chunk(args):
    scenario, ids, criteria, foci, starts = args
    return [run_replication(scenario, i, criteria, foci, starts) for i in ids]


@dataclass
class ScenarioMetrics:
    scenario: Scenario
    criteria: list
    foci: list
    replications: int
    failures: int
    mean_sample_size: float
    proportion_full: dict
    mc_standard_errors: dict
    mu_true: dict
    empirical_mae_selected: dict
    empirical_mae_selected_se: dict
    empirical_mae_selected_scaled: dict
    empirical_mae_models: dict
    mean_fic_scores: dict
    boundary_fraction: float
    lrt_zero_fraction: float
    results: list = field(default_factory=list, repr=False)


def run_scenario(scenario: Scenario, criteria=CRITERIA, foci=None, workers: int = 1,
                 starts: StartConfig | None = None, keep_results: bool = True) -> ScenarioMetrics:
    """Run every replication and aggregate in ``rep_id`` order."""
    criteria = list(criteria)
    foci = list(foci) if foci is not None else [FocusSpec("log_hazard_curvature", 100.0 - scenario.origin_age)]
    criterion_keys(criteria, foci, scenario.origin_age)
    ids = list(range(scenario.replications))
    if workers <= 1:
        results = _run_chunk((scenario, ids, criteria, foci, starts))
    else:
        chunks = [ids[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_chunk, [(scenario, c, criteria, foci, starts) for c in chunks])
            results = [r for part in parts for r in part]
        results.sort(key=lambda r: r.rep_id)
    failures = sum(r.failed for r in results)
    if failures > MAX_FAILURE_RATE * len(results):
        raise ScenarioError(
            f"{failures} of {len(results)} replications failed in {scenario.name}"
        )
    return aggregate(scenario, criteria, foci, results, keep_results)


def aggregate(scenario, criteria, foci, results, keep_results=True) -> ScenarioMetrics:
    ok = [r for r in results if not r.failed]
    R = len(ok)
    if R == 0:
        raise ScenarioError("no replication succeeded")
    keys = criterion_keys(criteria, foci, scenario.origin_age)
    labels = [f.label(scenario.origin_age) for f in foci]
    mu_true = {f.label(scenario.origin_age): sel.focus_value(f, scenario.params) for f in foci}
    prop, se = {}, {}
    for k in keys:
        p = sum(r.decisions[k] == sel.FULL for r in ok) / R
        prop[k] = p
        se[k] = math.sqrt(p * (1 - p) / R)
    mae, mae_se, mae_scaled = {}, {}, {}
    for k in keys:
        mae[k], mae_se[k], mae_scaled[k] = {}, {}, {}
        for lab in ok[0].mu_selected[k]:
            err = np.array([abs(r.mu_selected[k][lab] - mu_true[lab]) for r in ok])
            root_n = np.sqrt([r.n for r in ok])
            mae[k][lab] = float(err.mean())
            mae_se[k][lab] = float(err.std(ddof=1) / math.sqrt(R)) if R > 1 else float("nan")
            mae_scaled[k][lab] = float(np.mean(root_n * err))
    models = {}
    for lab in labels:
        models[lab] = {
            "null": float(np.mean([abs(r.mu_null[lab] - mu_true[lab]) for r in ok])),
            "full": float(np.mean([abs(r.mu_full[lab] - mu_true[lab]) for r in ok])),
            "null_scaled": float(np.mean([math.sqrt(r.n) * abs(r.mu_null[lab] - mu_true[lab]) for r in ok])),
            "full_scaled": float(np.mean([math.sqrt(r.n) * abs(r.mu_full[lab] - mu_true[lab]) for r in ok])),
        }
    scores = {}
    for lab in labels:
        if ok[0].fic_scores.get(lab) is not None:
            arr = np.array([r.fic_scores[lab] for r in ok])
            scores[lab] = {"null": float(arr[:, 0].mean()), "full": float(arr[:, 1].mean())}
    return ScenarioMetrics(
        scenario=scenario,
        criteria=list(criteria),
        foci=list(foci),
        replications=len(results),
        failures=len(results) - R,
        mean_sample_size=float(np.mean([r.n for r in ok])),
        proportion_full=prop,
        mc_standard_errors=se,
        mu_true=mu_true,
        empirical_mae_selected=mae,
        empirical_mae_selected_se=mae_se,
        empirical_mae_selected_scaled=mae_scaled,
        empirical_mae_models=models,
        mean_fic_scores=scores,
        boundary_fraction=float(np.mean([r.boundary_hit for r in ok])),
        lrt_zero_fraction=float(np.mean([r.lrt_statistic == 0.0 for r in ok])),
        results=results if keep_results else [],
    )


def window_scenarios(base: Scenario, windows=(80.0, 85.0, 90.0)):
    """Same cohort size, different entry ages.

    The cohort stays calibrated to ``base.target_n`` survivors at
    ``base.window_age`` so wider windows see more individuals.
    """
    calib = base.window_age if base.calibration_age is None else base.calibration_age
    return [replace(base, window_age=float(w), calibration_age=calib) for w in windows]


# --- closed-form risks against simulation ------------------------------------


@dataclass(frozen=True)
class Geometry:
    tau0: float
    omega: float
    delta: float
    kappa: float


def random_geometries(count: int, rng: np.random.Generator):
    return [
        Geometry(
            tau0=float(rng.uniform(0.1, 2.0)),
            omega=float(rng.choice([-1, 1]) * rng.uniform(0.2, 2.0)),
            delta=float(rng.uniform(0.0, 3.0)),
            kappa=float(rng.uniform(0.3, 2.0)),
        )
        for _ in range(count)
    ]


def standard_normal_pairs(draws: int, seed: int = 0):
    """Scrambled Sobol points mapped to two independent N(0, 1) columns.

    The count is rounded up to a power of two.
    """
    m = max(1, math.ceil(math.log2(draws)))
    u = qmc.Sobol(d=2, scramble=True, seed=seed).random_base2(m)
    return ndtri(u[:, 0]), ndtri(u[:, 1])


def mae_oracle_study(geometries, draws: int = 1_000_000, seed: int = 0):
    """Compare closed-form risks with simulated limit variables.

    For each geometry, ``L0 ~ N(0, tau0^2)`` and ``D ~ N(delta, kappa^2)``
    are drawn; the Gompertz limit is ``L0 + omega delta`` and the
    gamma-Gompertz limit replaces ``omega delta`` by ``omega (delta - D)``
    when ``D > 0``.
    """
    if draws < 100_000:
        raise ValueError("draws must be at least 1e5")
    z0, z1 = standard_normal_pairs(draws, seed)
    rows = []
    for g in geometries:
        lam0 = g.tau0 * z0
        d = g.delta + g.kappa * z1
        lam_null = lam0 + g.omega * g.delta
        lam_full = np.where(d > 0, lam0 + g.omega * (g.delta - d), lam_null)
        mae_n, mae_f = sel.mae_risks(g.tau0, g.omega, g.delta, g.kappa)
        mse_n, mse_f = sel.mse_risks(g.tau0, g.omega, g.delta, g.kappa)
        sim = {
            "mae_null": float(np.mean(np.abs(lam_null))),
            "mae_full": float(np.mean(np.abs(lam_full))),
            "mse_null": float(np.mean(lam_null**2)),
            "mse_full": float(np.mean(lam_full**2)),
        }
        closed = {"mae_null": mae_n, "mae_full": mae_f, "mse_null": mse_n, "mse_full": mse_f}
        row = {"tau0": g.tau0, "omega": g.omega, "delta": g.delta, "kappa": g.kappa}
        for k in closed:
            row[f"{k}_closed"] = closed[k]
            row[f"{k}_mc"] = sim[k]
        row["max_rel_gap"] = max(abs(sim[k] - closed[k]) / abs(closed[k]) for k in closed)
        rows.append(row)
    return rows
