import pytest
from hypothesis import settings

from sbmlab import experiments

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# criterion id -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def transition_batch():
    """2000 particle replicates run to extinction (shared by several tests, ~3 min)."""
    return experiments.transition_batch(2000, experiments.ACCEPTANCE_SEED)


@pytest.fixture(scope="session")
def calibration():
    """(checks, batch) from the horizon-limited calibration run (~1 min)."""
    return experiments.particle_calibration(10_000, experiments.ACCEPTANCE_SEED)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        tr.write_line(f"criterion {key:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
