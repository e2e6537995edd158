import pytest

from acpde.backend import set_backend


@pytest.fixture
def numpy_backend():
    """Force the pure-numpy kernels for the duration of one test."""
    old = set_backend("numpy")
    yield
    set_backend(old)
