import os

# pin BLAS threading before numpy loads: keeps runs deterministic and makes
# inference timing comparisons single-threaded
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from rrcomm import bundled_library  # noqa: E402


@pytest.fixture(scope="session")
def library():
    return bundled_library()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
