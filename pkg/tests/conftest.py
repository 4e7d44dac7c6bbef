"""Shared test helpers and the acceptance summary hook."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from mmorph.grid import GridShape, ScalarImage, VectorField

# One line per acceptance criterion, printed after the terminal summary so
# the pass/fail verdicts are visible in plain `pytest -v` output.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


def smooth_random_field(
    shape: GridShape,
    rng: np.random.Generator,
    amplitude: float,
    smoothing: float = 6.0,
) -> VectorField:
    """Band-limited random velocity field with max |component| = amplitude."""
    vals = np.stack(
        [gaussian_filter(rng.standard_normal(shape.dims), smoothing) for _ in range(shape.ndim)],
        axis=-1,
    )
    peak = np.abs(vals).max()
    if peak > 0:
        vals *= amplitude / peak
    return VectorField(shape, vals)


def random_image(shape: GridShape, rng: np.random.Generator, channels: int = 2) -> ScalarImage:
    return ScalarImage(shape, rng.random(shape.dims + (channels,)))


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)
