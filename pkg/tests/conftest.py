import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def textured(h=48, w=48, seed=0):
    """Smooth random texture with enough structure for descriptor matching."""
    r = np.random.default_rng(seed)
    base = r.random((h // 4 + 2, w // 4 + 2, 3))
    img = np.kron(base, np.ones((4, 4, 1)))[:h, :w]
    k = np.ones(3) / 3
    for ax in (0, 1):
        img = np.apply_along_axis(lambda m: np.convolve(np.pad(m, 1, mode="edge"), k, "valid"), ax, img)
    return np.clip(img, 0, 1)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
