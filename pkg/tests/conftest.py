import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hiprompt import LatentGrid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_grid(rng, h=16, w=16, c=4, scale=1.0) -> LatentGrid:
    return LatentGrid(scale * rng.standard_normal((h, w, c)))
