import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from panoptic_nav import _kernels  # noqa: E402

BACKEND_NAMES = sorted(_kernels.BACKENDS)


@pytest.fixture(params=BACKEND_NAMES)
def backend(request):
    return _kernels.get_backend(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
