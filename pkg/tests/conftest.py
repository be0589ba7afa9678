import numpy as np
import pytest

from calimp.tabular import MISSING, Dataset, Variable


def xy_dataset(n00, n01, n10, n11, mask_x=None):
    """Binary (x, y) dataset from cell counts n_xy; optionally mask the
    x cells at the given row indices."""
    x, y = [], []
    for code_x, code_y, n in ((0, 0, n00), (0, 1, n01),
                              (1, 0, n10), (1, 1, n11)):
        x += [code_x] * n
        y += [code_y] * n
    x = np.array(x, dtype=np.int32)
    y = np.array(y, dtype=np.int32)
    if mask_x is not None:
        x[np.asarray(mask_x)] = MISSING
    return Dataset(
        (Variable("x", ("0", "1"), role="target"),
         Variable("y", ("0", "1"), role="outcome")),
        {"x": x, "y": y},
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)
