import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qsot.otcore import CostSpec, ProblemInstance, Rect, SamplerSpec  # noqa: E402

# The 1D instances live on the x axis; the sampler rect has a negligible height
# so y stays within 1e-9 of zero.
LINE_RECT = Rect(0.0, 0.0, 1.0, 1e-9)
LINE_COST = CostSpec("euclidean", [[0.0, 0.0], [1.0, 0.0]])


def line_instance(p1: float, alpha: float) -> ProblemInstance:
    return ProblemInstance(p=[p1, 1 - p1], cost=LINE_COST, sampler=SamplerSpec("uniform_rect", LINE_RECT),
                           alpha=alpha)


def unit_instance(alpha: float) -> ProblemInstance:
    """K=1 with c(x, 0) = x on the segment."""
    return ProblemInstance(p=[1.0], cost=CostSpec("euclidean", [[0.0, 0.0]]),
                           sampler=SamplerSpec("uniform_rect", LINE_RECT), alpha=alpha)


SPEC_C = np.array([[0.1, 0.9], [0.4, 0.2], [0.8, 0.6]])


@pytest.fixture
def tmp_out(tmp_path):
    return tmp_path / "out"
