"""Data ingestion, report documents and rate tables."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import tempfile
import warnings
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import selection as sel
from .inference import (
    FitResult,
    Sample,
    StartConfig,
    DEFAULT_SIGMA2_STARTS,
    fit_full,
    fit_null,
    info_quantities,
)
from .model import ModelParams, hazard, sample_lifespans
from .selection import FocusSpec

SCHEMA_VERSION = 1
DAYS_PER_YEAR = 365.25
Z95 = 1.96


class DataError(ValueError):
    """Input data that cannot be used; ``problems`` lists row-level issues."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = problems or []


@dataclass
class AnalysisConfig:
    origin_age: float = 60.0
    truncation_age: float = 90.0
    criteria: list = field(default_factory=lambda: ["fic_mae", "pretest", "aic_star", "lrt"])
    foci: list | None = None
    sigma2_starts: list = field(default_factory=lambda: list(DEFAULT_SIGMA2_STARTS))
    seed: int = 0
    info_at: str = "full"

    def __post_init__(self):
        if self.truncation_age < self.origin_age:
            raise ValueError("truncation_age must not be below origin_age")
        unknown = set(self.criteria) - set(sel_criteria())
        if unknown:
            raise ValueError(f"unknown criteria {sorted(unknown)}")

    @property
    def truncation(self) -> float:
        return self.truncation_age - self.origin_age

    def resolved_foci(self, sample: Sample):
        """Configured foci, or sigma2 plus curvature at the 99th percentile age."""
        if self.foci is not None:
            foci = list(self.foci)
        else:
            y99 = float(np.percentile(sample.lifespans, 99))
            foci = [FocusSpec("sigma2"), FocusSpec("log_hazard_curvature", round(y99, 2))]
        for f in foci:
            f.check_support(sample.lifespans)
        return foci

    def echo(self, sample: Sample | None = None) -> dict:
        d = asdict(self)
        foci = self.foci if sample is None else self.resolved_foci(sample)
        d["foci"] = None if foci is None else [f.label(self.origin_age) for f in foci]
        return d


def sel_criteria():
    return ("fic_mae", "pretest", "aic_star", "lrt")


# --- ingestion --------------------------------------------------------------


@dataclass
class Dataset:
    sample: Sample
    rejected: list
    sha256: str
    path: str


def read_dataset(path, config: AnalysisConfig) -> Dataset:
    """Read ``id,age_at_death`` rows and convert ages to years since origin.

    Rows at or below the truncation age are dropped and listed in
    ``rejected``; malformed rows and duplicate ids raise ``DataError``.
    """
    path = Path(path)
    raw = path.read_bytes()
    text = raw.decode("utf-8-sig")
    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["id", "age_at_death"]:
        raise DataError(f"{path}: expected header 'id,age_at_death', got {header!r}")
    problems, rejected = [], []
    seen = set()
    ages = []
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            problems.append(f"row {row_no}: expected 2 fields, got {len(row)}")
            continue
        rid, age_text = row[0].strip(), row[1].strip()
        try:
            age = float(age_text)
        except ValueError:
            problems.append(f"row {row_no}: age {age_text!r} is not a number")
            continue
        if not math.isfinite(age) or age < 0:
            problems.append(f"row {row_no}: age {age_text!r} must be finite and non-negative")
            continue
        if rid in seen:
            problems.append(f"row {row_no}: duplicate id {rid!r}")
            continue
        seen.add(rid)
        if age <= config.truncation_age:
            rejected.append(f"row {row_no}: id {rid!r} age {age_text} not above truncation age {config.truncation_age:g}")
            continue
        ages.append(age)
    if problems:
        raise DataError(f"{path}: {len(problems)} malformed row(s); first: {problems[0]}", problems)
    if not ages:
        raise DataError(f"{path}: no usable rows above age {config.truncation_age:g}", rejected)
    y = np.asarray(ages) - config.origin_age
    sample = Sample(y, config.truncation)
    return Dataset(sample, rejected, hashlib.sha256(raw).hexdigest(), str(path))


def ingest(path, config: AnalysisConfig) -> Sample:
    return read_dataset(path, config).sample


def synthetic_cohort(params: ModelParams, n: int, seed: int, origin_age=60.0, truncation_age=90.0):
    """Ages at death (day resolution) of ``n`` people alive at ``truncation_age``."""
    rng = np.random.default_rng(seed)
    y = sample_lifespans(params, n, rng, conditional_on=truncation_age - origin_age)
    days = np.ceil((y + origin_age) * DAYS_PER_YEAR)
    ages = days / DAYS_PER_YEAR
    # a lifespan within a day of the truncation age moves to the next day
    ages = np.where(ages <= truncation_age, (days + 1) / DAYS_PER_YEAR, ages)
    return ages


def write_dataset(path, ages, prefix="P"):
    rows = [(f"{prefix}{i:05d}", f"{a:.8f}") for i, a in enumerate(ages, start=1)]
    _atomic_write(path, _csv_text(["id", "age_at_death"], rows))


# --- analysis ----------------------------------------------------------------


def _clean(x):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _fit_summary(fit: FitResult, origin_age: float) -> dict:
    se = fit.standard_errors()
    p = fit.params
    out = {
        "a": p.a,
        "b": p.b,
        "sigma2": p.sigma2,
        "loglik": fit.loglik,
        "converged": fit.converged,
        "gradient_norm": fit.grad_norm,
        "n_starts": fit.n_starts_used,
        "hessian": fit.hessian,
        "origin_age": origin_age,
    }
    if fit.model == "full":
        out["boundary_hit"] = fit.boundary_hit
        out["se"] = None if se is None else {"a": se[0], "b": se[1], "sigma2": se[2]}
        if fit.boundary_hit:
            out["se_note"] = "sigma2 on the boundary; estimates are not asymptotically normal"
    else:
        out["se"] = {"a": se[0], "b": se[1]}
    return out


def _report_entry(rep: sel.SelectionReport) -> dict:
    return {
        "criterion": rep.criterion,
        "focus": rep.focus,
        "score_gamma_gompertz": rep.score_full,
        "score_gompertz": rep.score_null,
        "chosen": "gamma_gompertz" if rep.chosen == sel.FULL else "gompertz",
        "intermediates": rep.intermediates,
    }


def analyze(sample: Sample, config: AnalysisConfig, source: Dataset | None = None,
            fits=None) -> dict:
    """Fit both models and apply the configured criteria; returns a report dict."""
    starts = StartConfig(sigma2_starts=tuple(config.sigma2_starts))
    if fits is None:
        fn = fit_null(sample, starts)
        ff = fit_full(sample, starts, null_fit=fn)
    else:
        fn, ff = fits
    info = info_quantities(ff, sample.n, null_fit=fn, sample=sample, at=config.info_at)
    test = sel.lrt(ff, fn)
    foci = config.resolved_foci(sample)
    entries, table = [], []
    # rows follow the published table: AIC*, then FIC_MAE per focus, then the pre-test
    for c in [c for c in ("aic_star", "fic_mae", "pretest") if c in config.criteria]:
        if c == "aic_star":
            rep = sel.aic_star(ff, fn, info)
            entries.append(_report_entry(rep))
            table.append({"criterion": "AIC*", "gamma_gompertz": rep.score_full,
                          "gompertz": rep.score_null, "chosen": entries[-1]["chosen"]})
        elif c == "fic_mae":
            for f in foci:
                geo = sel.focus_geometry(f, fn, info)
                rep = sel.fic_mae(geo, info, config.origin_age)
                entries.append(_report_entry(rep))
                table.append({"criterion": f"FIC_MAE: {_focus_title(f, config.origin_age)}",
                              "gamma_gompertz": rep.score_full, "gompertz": rep.score_null,
                              "chosen": entries[-1]["chosen"]})
        elif c == "pretest":
            rep = sel.pretest(info)
            entries.append(_report_entry(rep))
            table.append({"criterion": "pre-test (delta/kappa > 0.8399)",
                          "gamma_gompertz": rep.score_full, "gompertz": rep.score_null,
                          "chosen": entries[-1]["chosen"]})
    report = {
        "schema_version": SCHEMA_VERSION,
        "software": {"name": "gompfic", "version": __version__},
        "config": config.echo(sample),
        "input": None if source is None else {
            "path": os.path.basename(source.path),
            "sha256": source.sha256,
            "rejected_rows": len(source.rejected),
        },
        "sample": {
            "n": sample.n,
            "origin_age": config.origin_age,
            "truncation_age": config.truncation_age,
            "max_age": float(sample.lifespans.max() + config.origin_age),
        },
        "fits": {
            "gompertz": _fit_summary(fn, config.origin_age),
            "gamma_gompertz": _fit_summary(ff, config.origin_age),
        },
        "information": {
            "evaluated_at": info.evaluated_at,
            "J_full": info.J_full,
            "kappa2": info.kappa2,
            "kappa": info.kappa,
            "delta_hat": info.delta_hat,
            "delta_over_kappa": info.ratio,
        },
    }
    if "lrt" in config.criteria:
        report["lrt"] = {"statistic": test.statistic, "p_value": test.p_value}
    if entries:
        report["criteria"] = entries
        report["criteria_table"] = table
    report = _clean(report)
    report["digest"] = report_digest(report)
    report["created"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return report


def _focus_title(f: FocusSpec, origin_age: float) -> str:
    if f.kind == "sigma2":
        return "mu=sigma2"
    age = f"{f.y + origin_age:g}"
    return {
        "log_hazard_curvature": f"mu=[ln h({age})]''",
        "log_hazard": f"mu=ln h({age})",
        "survival": f"mu=S({age})",
    }[f.kind]


def report_digest(report: dict) -> str:
    body = {k: v for k, v in report.items() if k not in ("created", "digest")}
    return hashlib.sha256(dumps(body).encode()).hexdigest()


def dumps(doc) -> str:
    # repr-based float output round-trips exactly
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def loads(text: str):
    return json.loads(text)


# --- rate table --------------------------------------------------------------

RATE_COLUMNS = ("age", "deaths", "exposure", "rate", "ci_lo", "ci_hi", "fitted_gompertz", "fitted_gg")


def rate_table(sample: Sample, fits, config: AnalysisConfig) -> list:
    """Single-year occurrence-exposure rates with model hazards at mid-year.

    ``fits`` is ``(null_fit, full_fit)`` or ``None``.  Confidence limits are
    ``rate * exp(+-1.96 / sqrt(deaths))`` and absent when no one died.
    """
    ages = sample.lifespans + config.origin_age
    entry = config.truncation_age
    first = math.floor(entry)
    last = math.floor(float(ages.max()))
    rows = []
    for k in range(first, last + 1):
        lo, hi = max(float(k), entry), float(k + 1)
        exposure = float(np.sum(np.clip(ages, lo, hi) - lo))
        if exposure <= 0:
            continue
        deaths = int(np.sum((ages >= lo) & (ages < hi)))
        rate = deaths / exposure
        if deaths > 0:
            half = Z95 / math.sqrt(deaths)
            ci_lo, ci_hi = rate * math.exp(-half), rate * math.exp(half)
        else:
            ci_lo = ci_hi = None
        mid = 0.5 * (lo + hi) - config.origin_age
        fg = fgg = None
        if fits is not None:
            fn, ff = fits
            fg = float(hazard(fn.params, mid))
            fgg = float(hazard(ff.params, mid))
        rows.append({"age": k, "deaths": deaths, "exposure": exposure, "rate": rate,
                     "ci_lo": ci_lo, "ci_hi": ci_hi, "fitted_gompertz": fg, "fitted_gg": fgg})
    return rows


# --- file output -----------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(columns, rows) -> str:
    lines = [",".join(columns)]
    for r in rows:
        vals = r if isinstance(r, (list, tuple)) else [r[c] for c in columns]
        lines.append(",".join(_fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def _atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, doc):
    _atomic_write(path, dumps(doc))


def write_csv(path, columns, rows):
    _atomic_write(path, _csv_text(columns, rows))


def read_rate_csv(path) -> list:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append({
                k: (None if v == "" else (int(v) if k in ("age", "deaths") else float(v)))
                for k, v in row.items()
            })
    return out


# --- scenario files and metrics --------------------------------------------

SCENARIO_KEYS = {
    "name", "params", "target_n", "window_age", "origin_age", "replications",
    "master_seed", "calibration_age",
}


def load_scenario_config(path):
    """Read a JSON scenario file; unknown keys are errors."""
    from .simulation import SCENARIO_PARAMS, Scenario

    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise DataError(f"{path}: expected a JSON object")
    unknown = set(doc) - SCENARIO_KEYS
    if unknown:
        raise DataError(f"{path}: unknown scenario keys {sorted(unknown)}")
    name = doc.get("name", "custom")
    params = doc.get("params")
    if params is None:
        if name not in SCENARIO_PARAMS:
            raise DataError(f"{path}: custom scenario needs 'params'")
        mp = SCENARIO_PARAMS[name]
    else:
        extra = set(params) - {"a", "b", "sigma2"}
        if extra:
            raise DataError(f"{path}: unknown parameter keys {sorted(extra)}")
        mp = ModelParams(float(params["a"]), float(params["b"]), float(params.get("sigma2", 0.0)))
    if "target_n" not in doc:
        raise DataError(f"{path}: 'target_n' is required")
    kwargs = {k: doc[k] for k in ("window_age", "origin_age", "replications", "master_seed",
                                   "calibration_age") if k in doc}
    return Scenario(name=name, params=mp, target_n=int(doc["target_n"]), **kwargs)


def metrics_document(metrics) -> dict:
    sc = metrics.scenario
    return _clean({
        "scenario": {
            "name": sc.name,
            "params": {"a": sc.params.a, "b": sc.params.b, "sigma2": sc.params.sigma2},
            "target_n": sc.target_n,
            "window_age": sc.window_age,
            "origin_age": sc.origin_age,
            "calibration_age": sc.calibration_age,
            "replications": sc.replications,
            "master_seed": sc.master_seed,
            "cohort_size": sc.cohort_size,
        },
        "criteria": metrics.criteria,
        "foci": [f.label(sc.origin_age) for f in metrics.foci],
        "failures": metrics.failures,
        "mean_sample_size": metrics.mean_sample_size,
        "proportion_full": metrics.proportion_full,
        "mc_standard_errors": metrics.mc_standard_errors,
        "mu_true": metrics.mu_true,
        "empirical_mae_selected": metrics.empirical_mae_selected,
        "empirical_mae_selected_se": metrics.empirical_mae_selected_se,
        "empirical_mae_selected_scaled": metrics.empirical_mae_selected_scaled,
        "empirical_mae_models": metrics.empirical_mae_models,
        "mean_fic_scores": metrics.mean_fic_scores,
        "boundary_fraction": metrics.boundary_fraction,
        "lrt_zero_fraction": metrics.lrt_zero_fraction,
    })


REPLICATION_COLUMNS = (
    "rep_id", "n", "failed", "sigma2_hat", "boundary_hit", "delta_hat", "kappa_hat",
    "lrt_statistic", "lrt_p_value",
)


def replication_rows(metrics) -> tuple:
    keys = list(metrics.proportion_full)
    cols = list(REPLICATION_COLUMNS) + [f"decision:{k}" for k in keys]
    rows = []
    for r in metrics.results:
        row = [getattr(r, c) for c in REPLICATION_COLUMNS]
        row = [_clean(v) for v in row]
        row += [r.decisions.get(k) for k in keys]
        rows.append(row)
    return cols, rows


def warn_paper_scale():
    warnings.warn(
        "paper-scale simulation: 1,000 replications per setting including 105,000-person "
        "samples; expect hours of run time",
        RuntimeWarning,
        stacklevel=2,
    )
