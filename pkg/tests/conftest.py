import numpy as np
import pytest

from fedledger.features import FeatureLayout
from fedledger.network import ArchitectureSpec, init_model


@pytest.fixture
def tiny_layout():
    # one categorical attribute of width 2, one numerical slot
    return FeatureLayout(cat_segments=((0, 2),), num_slots=(2,), width=3)


@pytest.fixture
def tiny_spec():
    return ArchitectureSpec((3, 4, 2), (2, 4, 3))


@pytest.fixture
def tiny_model(tiny_spec):
    return init_model(tiny_spec, seed=7)


def random_rows(layout, n, rng):
    """Valid encoded rows for a layout: one-hot segments, numerics in [0, 1]."""
    rows = np.zeros((n, layout.width))
    for start, stop in layout.cat_segments:
        hot = rng.integers(start, stop, size=n)
        rows[np.arange(n), hot] = 1.0
    for slot in layout.num_slots:
        rows[:, slot] = rng.uniform(0.0, 1.0, size=n)
    return rows
