"""Regenerate the bundled example files in data/."""

from pathlib import Path

import numpy as np

from dpkmeans.cli import main as cli_main
from dpkmeans.core import Dataset, write_dataset
from dpkmeans.datasets import ami_standin

DATA = Path(__file__).resolve().parent.parent / "data"


def main():
    DATA.mkdir(exist_ok=True)
    cli_main(["mixture", "--n", "1000", "--k", "6", "--d", "2", "--seed", "0", "--out", str(DATA / "mixture")])
    write_dataset(DATA / "ami_standin.csv", ami_standin(seed=0))
    # twenty households' daily energy in kWh: passes the 15/15 aggregation rule
    gen = np.random.default_rng(15)
    energy = np.round(gen.uniform(8.0, 20.0, size=(20, 1)), 3)
    write_dataset(DATA / "fifteen_fifteen.csv", Dataset(energy, tuple(f"h{i:02d}" for i in range(20))))


if __name__ == "__main__":
    main()
