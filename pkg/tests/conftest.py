import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from coldpop.data import SyntheticConfig, generate_synthetic, split_dataset  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synthetic():
    cfg = SyntheticConfig(num_users=300, num_items=210, feature_dim=24, interactions_per_user=12, seed=7)
    return generate_synthetic(cfg)


@pytest.fixture(scope="session")
def small_splits(small_synthetic):
    return split_dataset(small_synthetic.table, small_synthetic.features, warm_frac=5 / 7, seed=7)
