import numpy as np
import pytest

from multicac.models import (
    EntropySpec,
    FreeEnergyDensity,
    Grid,
    InteractionMatrix,
    MobilityMatrix,
    SolverConfig,
    YosidaRegularization,
)


def make_free_energy(n_phases: int, chi: float, eps: float = 1e-4, theta: float = 1.0) -> FreeEnergyDensity:
    base = EntropySpec.logarithmic(theta)
    entropy = YosidaRegularization(eps, base) if eps > 0 else base
    return FreeEnergyDensity(entropy, InteractionMatrix.demixing(n_phases, chi))


def tangent_cosine(grid: Grid, n_phases: int, amplitude: float, k: int = 1) -> np.ndarray:
    profile = np.cos(k * np.pi * grid.cell_centers(0) / grid.extent[0])
    d = np.zeros((n_phases,) + grid.shape)
    d[0] = profile
    d[1] = -profile
    return amplitude * d


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.Philox(key=1234))


@pytest.fixture()
def log_entropy():
    return EntropySpec.logarithmic(1.0)


@pytest.fixture()
def grid_1d():
    return Grid.uniform((32,), (1.0,))


@pytest.fixture()
def grid_2d():
    return Grid.uniform((16, 12), (1.0, 0.75))


@pytest.fixture()
def ternary():
    """N=3 demixing mixture with lambda_A = 6 (spinodal at the uniform composition)."""
    return make_free_energy(3, 6.0)


@pytest.fixture()
def binary():
    """N=2, chi=3: a single interface is the only unstable mode on the unit interval for gamma=0.05."""
    return make_free_energy(2, 3.0)


@pytest.fixture()
def mobility3():
    return MobilityMatrix.structured(3, 1.0)


@pytest.fixture()
def mobility2():
    return MobilityMatrix.structured(2, 1.0)


@pytest.fixture()
def small_cfg():
    return SolverConfig(gamma=2e-3, dt=1e-3, t_end=0.05, equilibrium_tol=1e-12)
