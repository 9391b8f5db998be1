import os

import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(max(1, torch.get_num_threads()))


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("acceptance_runs")
    if mod is None:
        return
    terminalreporter.section("acceptance criteria")
    for crit in mod.CRITERIA:
        terminalreporter.write_line(mod.RESULTS.get(crit, f"{crit} NOT RUN"))
