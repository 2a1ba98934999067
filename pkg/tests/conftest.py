import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from asvmismatch.catalog import default_catalog  # noqa: E402
from asvmismatch.synth import SynthSpec, generate  # noqa: E402


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def small_synth(catalog):
    """40 speakers x 12 trials with F0 and VQ effects."""
    spec = SynthSpec(n_speakers=40, trials_per_speaker=12, beta=(28.0, -1.0, -0.35),
                     predictors=("F0", "VQ"), sigma_b=4.5, sigma=9.0, seed=11)
    return generate(spec, catalog)


def random_small_design(rng, n_speakers=None, n_pred=2):
    """Random design with <= 20 rows and 2-4 speakers."""
    from asvmismatch.predictors import Design

    k = n_speakers or int(rng.integers(2, 5))
    sizes = rng.integers(3, 7, size=k)
    while sizes.sum() > 20:
        sizes = rng.integers(3, 7, size=k)
    g = np.repeat(np.arange(k), sizes)
    n = len(g)
    X = rng.random((n, n_pred)) * 3
    beta = rng.normal(size=n_pred)
    y = 5 + X @ beta + rng.normal(scale=rng.uniform(0.3, 2.0), size=k)[g] + rng.normal(size=n)
    return Design(y, X, tuple(f"x{j}" for j in range(n_pred)), [f"s{v}" for v in g], np.arange(n)), X, y, g


# (criterion, passed, detail) rows filled in by test_acceptance
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
