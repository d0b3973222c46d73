import functools
from pathlib import Path

import numpy as np
import pytest

from gompfic.inference import Sample, fit_full, fit_null
from gompfic.model import ModelParams, sample_lifespans

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"

S1 = ModelParams(0.013, 0.092, 0.0625)
S3 = ModelParams(0.0198, 0.0726, 0.0)


def truncated_sample(params, n, seed, truncation=30.0):
    rng = np.random.default_rng(seed)
    return Sample(sample_lifespans(params, n, rng, conditional_on=truncation), truncation)


@pytest.fixture(scope="session")
def females_csv():
    return DATA / "synthetic_females.csv"


@pytest.fixture(scope="session")
def s1_sample():
    return truncated_sample(S1, 5000, 11)


@pytest.fixture(scope="session")
def s1_fits(s1_sample):
    fn = fit_null(s1_sample)
    return fn, fit_full(s1_sample, null_fit=fn)


SIM_SEED = 20240501


@functools.lru_cache(maxsize=None)
def simulate(name, target_n, reps, window=90.0, seed=SIM_SEED):
    """Session-wide cache of desk-scale runs shared by several tests."""
    from gompfic.simulation import make_scenario, run_scenario

    sc = make_scenario(name, target_n, replications=reps, master_seed=seed,
                       window_age=window, calibration_age=90.0)
    return run_scenario(sc)


def first_replications(metrics, count):
    """Metrics of the first ``count`` replications of a cached run."""
    from dataclasses import replace

    from gompfic.simulation import aggregate

    sc = replace(metrics.scenario, replications=count)
    return aggregate(sc, metrics.criteria, metrics.foci, metrics.results[:count])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
