import numpy as np
import pytest


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


@pytest.fixture(params=["numba", "numpy"])
def each_backend(request):
    """Run a test under both kernel backends."""
    from splatseg import backend

    if request.param == "numba" and not backend.HAS_NUMBA:
        pytest.skip("numba not installed")
    with backend.use_backend(request.param):
        yield request.param
