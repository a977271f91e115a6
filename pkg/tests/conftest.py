import numpy as np
import pytest
from hypothesis import settings

from mcpower.config import RunConfig
from mcpower.precision import Fixed
from mcpower.samplers import SamplerSpec
from mcpower.spending import SpendingSchedule
from mcpower.verify import fresh_table

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ALPHA = 0.05
EPS = 1e-4


@pytest.fixture(scope="session")
def sched():
    return SpendingSchedule(EPS, 1000)


@pytest.fixture(scope="session")
def table(sched):
    """Unshared table to step 2000 with every alive distribution kept."""
    return fresh_table(ALPHA, sched, 2000, keep_all=True)


@pytest.fixture
def small_cfg(tmp_path):
    """A run that finishes in well under a second."""
    return RunConfig(
        rule=Fixed(0.2), gamma=0.05, epsilon=1e-3, sampler=SamplerSpec.beta(2.0),
        pilot_n=100, pilot_tmax=200, nopt_reps=20, nopt_grid=5, seed=11,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """``record(n, ok, detail)`` prints and keeps an ``AC<n> PASS/FAIL`` line; ``ok=None`` is a skip."""
    def record(n: int, ok: bool | None, detail: str) -> bool:
        line = f"AC{n} {'SKIP' if ok is None else 'PASS' if ok else 'FAIL'}: {detail}"
        print(line)
        _ACCEPTANCE[n] = line
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
