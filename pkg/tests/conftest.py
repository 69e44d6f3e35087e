import numpy as np
import pytest

from deepstereo.autodiff import active_tape, set_default_dtype


@pytest.fixture(autouse=True)
def clean_engine():
    """Every test starts with an empty tape and the float32 default."""
    set_default_dtype(np.float32)
    active_tape().clear()
    yield
    active_tape().clear()
    set_default_dtype(np.float32)


@pytest.fixture
def f64():
    """Switch the engine to 64-bit elements (oracle / gradient checks)."""
    set_default_dtype(np.float64)
    yield np.float64
    set_default_dtype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
