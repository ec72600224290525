import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from trigcopy.datagen import LengthDistribution, SamplerConfig

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile("default")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def record(k: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[k] = (bool(ok), detail)
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def small_cfg():
    return SamplerConfig(N=8, N_trg=2, L=20)


@pytest.fixture
def cfg32():
    return SamplerConfig(N=32, N_trg=2, L=40)


@pytest.fixture
def unif38():
    return LengthDistribution.uniform(3, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
