import numpy as np
import pytest

from hopredict.radiosim import MeasurementSample, Neighbor
from hopredict.scenarios import default_scenario


def make_trace(ue_id, timestamps, ho_ticks=(), rng=None):
    """Synthetic samples on the reporting grid with handover flags at ``ho_ticks``."""
    rng = rng or np.random.default_rng(0)
    out = []
    for ts in timestamps:
        def metric():
            return (float(rng.integers(-140, -43)), float(rng.integers(-39, -5)) / 2,
                    float(rng.integers(-40, 81)) / 2)
        nbs = tuple(Neighbor(f"c{j}", *metric()) for j in range(1, 4))
        out.append(MeasurementSample(int(ts), ue_id, "c0", *metric(), nbs, ts in set(ho_ticks)))
    return out


@pytest.fixture(scope="session")
def default_run():
    return default_scenario().run()


# "PASS C6 ..." lines recorded by test_acceptance.py, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1][1:])):
            terminalreporter.write_line(line)
