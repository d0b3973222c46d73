import json
import math
import os

import numpy as np
import pytest

from conftest import S1, truncated_sample
from gompfic import io
from gompfic.inference import Sample, fit_full, fit_null
from gompfic.io import AnalysisConfig, DataError
from gompfic.model import hazard
from gompfic.selection import FocusSpec


def write(tmp_path, text, name="d.csv", newline="\n"):
    p = tmp_path / name
    p.write_bytes(text.replace("\n", newline).encode("utf-8"))
    return p


class TestIngest:
    def test_example_row(self, tmp_path):
        smp = io.ingest(write(tmp_path, "id,age_at_death\nA1,97.43\n"), AnalysisConfig())
        assert smp.lifespans[0] == pytest.approx(37.43, abs=1e-12)
        assert smp.truncation == 30.0

    def test_rejects_below_truncation(self, tmp_path):
        ds = io.read_dataset(write(tmp_path, "id,age_at_death\nA1,97.43\nA2,89.9\nA3,90\n"), AnalysisConfig())
        assert ds.sample.n == 1
        assert len(ds.rejected) == 2
        assert ds.rejected[0].startswith("row 3:") and "89.9" in ds.rejected[0]

    @pytest.mark.parametrize("body,row", [
        ("A1,97.4\nA2,abc\n", 3),
        ("A1,97.4\nA2,95,1\n", 3),
        ("A1,nan\n", 2),
        ("A1,97.4\nA1,95.0\n", 3),
    ])
    def test_malformed(self, tmp_path, body, row):
        with pytest.raises(DataError) as exc:
            io.ingest(write(tmp_path, "id,age_at_death\n" + body), AnalysisConfig())
        assert f"row {row}:" in exc.value.problems[0]

    def test_header_required(self, tmp_path):
        with pytest.raises(DataError, match="header"):
            io.ingest(write(tmp_path, "id,age\nA1,97\n"), AnalysisConfig())

    def test_no_usable_rows(self, tmp_path):
        with pytest.raises(DataError, match="no usable rows"):
            io.ingest(write(tmp_path, "id,age_at_death\nA1,80\n"), AnalysisConfig())

    def test_crlf_and_bom(self, tmp_path):
        p = tmp_path / "crlf.csv"
        p.write_bytes("﻿id,age_at_death\r\nA1,97.43\r\nA2,91.5\r\n".encode("utf-8"))
        assert io.ingest(p, AnalysisConfig()).n == 2

    def test_fixture_sizes(self, females_csv):
        smp = io.ingest(females_csv, AnalysisConfig())
        assert smp.n == 20_917
        males = io.ingest(females_csv.parent / "synthetic_males.csv", AnalysisConfig())
        assert males.n == 10_878

    def test_fixture_is_reproducible(self, tmp_path, females_csv):
        ages = io.synthetic_cohort(S1, 20_917, 1)
        io.write_dataset(tmp_path / "f.csv", ages, prefix="F")
        assert (tmp_path / "f.csv").read_bytes() == females_csv.read_bytes()


@pytest.fixture(scope="module")
def fixture_report(females_csv):
    cfg = AnalysisConfig(foci=[FocusSpec("sigma2"), FocusSpec.parse("curvature@100")])
    ds = io.read_dataset(females_csv, cfg)
    return cfg, ds, io.analyze(ds.sample, cfg, source=ds)


class TestAnalyze:
    def test_contents(self, fixture_report):
        _, ds, rep = fixture_report
        ff = rep["fits"]["gamma_gompertz"]
        assert rep["schema_version"] == io.SCHEMA_VERSION
        assert 0 <= rep["lrt"]["p_value"] <= 1
        assert {c["criterion"] for c in rep["criteria"]} == {"fic_mae", "pretest", "aic_star"}
        assert all(math.isfinite(c["score_gompertz"]) for c in rep["criteria"])
        assert rep["input"]["sha256"] == ds.sha256
        assert abs(ff["sigma2"] - 0.0625) < 3 * ff["se"]["sigma2"]

    def test_layout(self, fixture_report):
        _, _, rep = fixture_report
        rows = [r["criterion"] for r in rep["criteria_table"]]
        assert rows[:3] == ["AIC*", "FIC_MAE: mu=sigma2", "FIC_MAE: mu=[ln h(100)]''"]

    def test_lrt_only(self, fixture_report):
        _, ds, _ = fixture_report
        rep = io.analyze(ds.sample, AnalysisConfig(criteria=["lrt"]))
        assert "criteria" not in rep and "criteria_table" not in rep
        assert "lrt" in rep

    def test_round_trip(self, fixture_report):
        _, _, rep = fixture_report
        assert io.loads(io.dumps(rep)) == rep

    def test_reproducible(self, fixture_report):
        cfg, ds, rep = fixture_report
        again = io.analyze(ds.sample, cfg, source=ds)
        strip = lambda r: {k: v for k, v in r.items() if k != "created"}  # noqa: E731
        assert io.dumps(strip(again)) == io.dumps(strip(rep))
        assert again["digest"] == io.report_digest(again)

    def test_default_foci(self, fixture_report):
        _, ds, _ = fixture_report
        cfg = AnalysisConfig()
        foci = cfg.resolved_foci(ds.sample)
        assert foci[0].kind == "sigma2"
        assert foci[1].y == pytest.approx(round(np.percentile(ds.sample.lifespans, 99), 2))

    def test_unknown_criterion(self):
        with pytest.raises(ValueError):
            AnalysisConfig(criteria=["bic"])


class TestRateTable:
    def test_single_death(self):
        rows = io.rate_table(Sample([30.5], 30.0), None, AnalysisConfig())
        assert rows == [{"age": 90, "deaths": 1, "exposure": 0.5, "rate": 2.0,
                         "ci_lo": 2.0 * math.exp(-1.96), "ci_hi": 2.0 * math.exp(1.96),
                         "fitted_gompertz": None, "fitted_gg": None}]

    def test_no_deaths_no_ci(self):
        rows = io.rate_table(Sample([30.2, 32.5], 30.0), None, AnalysisConfig())
        assert rows[1]["age"] == 91 and rows[1]["deaths"] == 0
        assert rows[1]["ci_lo"] is None and rows[1]["ci_hi"] is None

    def test_totals(self, s1_sample, s1_fits):
        cfg = AnalysisConfig()
        rows = io.rate_table(s1_sample, s1_fits, cfg)
        assert sum(r["deaths"] for r in rows) == s1_sample.n
        total = float(np.sum(s1_sample.lifespans - 30.0))
        assert sum(r["exposure"] for r in rows) == pytest.approx(total, abs=1e-9)
        for r in rows:
            assert r["exposure"] > 0
            assert r["rate"] == r["deaths"] / r["exposure"]
        fn, ff = s1_fits
        assert rows[0]["fitted_gg"] == float(hazard(ff.params, 30.5))

    def test_coverage(self):
        # one sample has only ~25 ages, so pool the ages of 20 samples
        hits = []
        for seed in range(20):
            smp = truncated_sample(S1, 100_000, 1000 + seed)
            rows = io.rate_table(smp, None, AnalysisConfig())
            hits += [r["ci_lo"] <= hazard(S1, r["age"] + 0.5 - 60) <= r["ci_hi"]
                     for r in rows if r["deaths"] > 0]
        assert len(hits) > 400
        assert np.mean(hits) >= 0.93

    def test_csv_round_trip(self, tmp_path):
        rows = io.rate_table(Sample([30.5, 31.7, 31.9], 30.0), None, AnalysisConfig())
        io.write_csv(tmp_path / "r.csv", io.RATE_COLUMNS, rows)
        assert io.read_rate_csv(tmp_path / "r.csv") == rows


class TestScenarioConfig:
    def test_named(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"name": "S2", "target_n": 5000, "replications": 10, "master_seed": 3}))
        sc = io.load_scenario_config(p)
        assert sc.params.sigma2 == 0.03 and sc.target_n == 5000 and sc.master_seed == 3

    def test_custom(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"name": "mine", "params": {"a": 0.01, "b": 0.1, "sigma2": 0.02},
                                 "target_n": 100, "window_age": 85}))
        sc = io.load_scenario_config(p)
        assert sc.params.a == 0.01 and sc.window_age == 85

    @pytest.mark.parametrize("doc", [
        {"name": "S1", "target_n": 10, "replicas": 3},
        {"name": "x", "params": {"a": 0.01, "b": 0.1, "rho": 1}, "target_n": 10},
        {"name": "x", "target_n": 10},
        {"name": "S1"},
    ])
    def test_errors(self, tmp_path, doc):
        p = tmp_path / "s.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(DataError):
            io.load_scenario_config(p)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "out" / "x.json"
    io.write_json(target, {"a": 1.0})
    io.write_json(target, {"a": 2.0})
    assert json.loads(target.read_text()) == {"a": 2.0}
    assert os.listdir(target.parent) == ["x.json"]


def test_atomic_write_keeps_old_file_on_error(tmp_path):
    target = tmp_path / "x.json"
    io.write_json(target, {"a": 1.0})
    with pytest.raises(ValueError):
        io.write_json(target, {"a": float("nan")})
    assert json.loads(target.read_text()) == {"a": 1.0}
    assert os.listdir(tmp_path) == ["x.json"]
