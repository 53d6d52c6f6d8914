import numpy as np
import pytest

from scherktower.meshgen import normalized_piece, replicate, symmetry_group
from scherktower.weier import TowerParams

# root of the period residual on the line y = 1e-4 for k = 3 (frozen from the solver)
SOLVED_K3 = TowerParams(3, 1e-4, -0.2533566909822839)
GENERIC = TowerParams(3, 0.3, -0.5)


@pytest.fixture(scope="session")
def solved_k3():
    return SOLVED_K3


@pytest.fixture(scope="session")
def generic():
    return GENERIC


@pytest.fixture(scope="session")
def piece32():
    return normalized_piece(SOLVED_K3, resolution=32)


@pytest.fixture(scope="session")
def piece64():
    return normalized_piece(SOLVED_K3, resolution=64)


@pytest.fixture(scope="session")
def tower64(piece64):
    return replicate(piece64, symmetry_group(SOLVED_K3, 1, piece64.period))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
