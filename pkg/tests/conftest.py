import numpy as np
import pytest

from lumen.image import ImageBuffer
from lumen.rng import SeededRng


@pytest.fixture
def rng():
    return SeededRng(1234, "tests")


@pytest.fixture
def random_rgb():
    def make(h=16, w=16, seed=0):
        return ImageBuffer(np.random.default_rng(seed).random((h, w, 3)))
    return make


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
