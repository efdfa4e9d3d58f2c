import numpy as np
import pytest

from icrl.runtime import tune_runtime

tune_runtime()


@pytest.fixture(scope="session")
def rng_factory():
    from icrl.rng import RngStream

    def make(master_seed: int, stream_id: int = 0) -> RngStream:
        return RngStream(master_seed, stream_id)

    return make


def assert_states_equal(a, b):
    np.testing.assert_array_equal(np.asarray(a), np.asarray(b))
