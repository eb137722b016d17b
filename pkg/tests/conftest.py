import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from dpkmeans import KmeansConfig, analyze, cluster, load_dataset

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def mixture():
    return load_dataset(DATA / "mixture" / "mixture.csv")


@pytest.fixture(scope="session")
def mixture_fit(mixture):
    cfg = KmeansConfig(6, seed=0)
    base = cluster(mixture, cfg)
    return cfg, base, analyze(mixture, base, cfg)


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the acceptance summary."""

    def _report(tag: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} [{tag}] {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
