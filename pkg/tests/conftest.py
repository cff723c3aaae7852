import numpy as np
import pytest

from elastic import AnalyticDataset, make_linear_schedule, make_procedural_dataset


@pytest.fixture(scope="session")
def sched50():
    return make_linear_schedule(1000, 1e-4, 2e-2, 50)


@pytest.fixture(scope="session")
def ds_default():
    """Four classes, two exemplars each, native 64x64x1."""
    return make_procedural_dataset(0, per_class=2)


@pytest.fixture(scope="session")
def ds_tiny():
    """Four classes at native 4x4, cheap enough for finite differences."""
    return make_procedural_dataset(1, per_class=1, native_h=4, native_w=4)


@pytest.fixture(scope="session")
def ds_single():
    """A dataset holding exactly one exemplar (one class)."""
    base = make_procedural_dataset(0, per_class=1)
    return AnalyticDataset(
        native_h=base.native_h,
        native_w=base.native_w,
        channels=base.channels,
        exemplars=base.exemplars[:1],
        labels=np.zeros(1, dtype=np.int64),
        class_names=(base.class_names[int(base.labels[0])],),
    )


def grid(values):
    """Shorthand: build a (h, w, 1) grid from a nested list."""
    return np.asarray(values, dtype=np.float64)[:, :, None]
