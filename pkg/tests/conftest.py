import sys

import numpy as np
import pytest

from unshade import synth


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(sys.modules.get("test_acceptance"), "REPORT_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_scene():
    return synth.build_scene(synth.SceneSpec())


@pytest.fixture(scope="session")
def ground_truth(default_scene):
    """One rendered view of the default scene, shared across tests."""
    return synth.render_ground_truth(default_scene, 0, sky_samples=96, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
