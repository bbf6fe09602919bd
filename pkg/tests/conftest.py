import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bregmax import Instance, make_classical, make_entropy_quadratic  # noqa: E402

DATA = Path(__file__).resolve().parent.parent / "data"


def independence() -> Instance:
    """Two bits, counting reference measure, statistic = the two bit indicators."""
    f = np.array([[0, 0, 1, 1], [0, 1, 0, 1]], dtype=float)
    return Instance(("00", "01", "10", "11"), f, make_classical(np.ones(4)))


def point_family(n: int = 3) -> Instance:
    return Instance(tuple(str(i) for i in range(n)), np.zeros((0, n)), make_classical(np.full(n, 1.0 / n)))


def random_instance(rng, kind: str, n: int, d: int) -> Instance:
    f = rng.integers(-2, 3, size=(d, n)).astype(float)
    if kind == "classical":
        beta = make_classical(np.exp(rng.normal(size=n)))
    else:
        beta = make_entropy_quadratic(np.exp(rng.uniform(-2, 2, size=n)))
    return Instance(tuple(str(i) for i in range(n)), f, beta)


@pytest.fixture
def indep() -> Instance:
    return independence()


@pytest.fixture
def point3() -> Instance:
    return point_family(3)


@pytest.fixture
def data_dir() -> Path:
    return DATA
