import numpy as np
import pytest

from edgecam.energy import synth_solar_trace


@pytest.fixture(scope="session")
def two_day_traces():
    return [synth_solar_trace(2, seed=11, camera=k) for k in range(2)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion id -> list of (part, passed, detail), filled by the acceptance suite
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(number, passed, detail, part=""):
        ACCEPTANCE.setdefault(number, []).append((part, bool(passed), detail))
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[number]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join((f"({p}) " if p else "") + f"{'ok' if ok else 'FAIL'}: {d}"
                           for p, ok, d in parts)
        terminalreporter.write_line(f"criterion {number}: {verdict}  {detail}")
