"""Regenerate the synthetic cohort fixtures in ``data/``.

Ages are drawn from the S1 (female-like) and S2 (male-like) scenarios,
conditional on survival to 90, and recorded at day resolution.
"""

from pathlib import Path

from gompfic.io import synthetic_cohort, write_dataset
from gompfic.simulation import SCENARIO_PARAMS

FIXTURES = {
    "synthetic_females.csv": ("S1", 20_917, 1),
    "synthetic_males.csv": ("S2", 10_878, 2),
}


def main(out=Path(__file__).resolve().parent.parent / "data"):
    for fname, (scenario, n, seed) in FIXTURES.items():
        ages = synthetic_cohort(SCENARIO_PARAMS[scenario], n, seed)
        write_dataset(out / fname, ages, prefix=fname[10].upper())
        print(f"{fname}: {n} rows from {scenario}")


if __name__ == "__main__":
    main()
