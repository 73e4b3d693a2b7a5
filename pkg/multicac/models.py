from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from multicac.constants import (
    DEFAULT_DT,
    DEFAULT_EQUILIBRIUM_TOL,
    DEFAULT_MAX_STEPS,
    DEFAULT_YOSIDA_EPSILON,
    EIGEN_TOL,
    MIN_CELLS,
    SUM_TOL,
    SUPPORTED_DIMS,
    SYMMETRY_TOL,
)

MobilityMode = Literal["structured_M1", "general_psd"]
EntropyVariant = Literal["logarithmic", "custom"]
RunStatus = Literal["running", "reached_t_end", "reached_equilibrium", "max_steps"]

ArrayHook = Callable[[np.ndarray], np.ndarray]


def _vector(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"expected an N-vector, got shape {arr.shape}")
    return arr


# --- Simplex algebra ---

@dataclass(frozen=True, eq=False)
class Composition:
    values: np.ndarray

    def __post_init__(self):
        v = _vector(self.values)
        if v.size < 2:
            raise ValueError("a composition needs at least two phases")
        if abs(v.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"composition must sum to 1, got {v.sum()!r}")
        if np.any(v < -SUM_TOL) or np.any(v > 1.0 + SUM_TOL):
            raise ValueError("composition entries must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def n_phases(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True, eq=False)
class TangentVector:
    values: np.ndarray

    def __post_init__(self):
        v = _vector(self.values)
        if abs(v.sum()) > SUM_TOL * max(1.0, float(np.abs(v).max(initial=0.0))):
            raise ValueError(f"tangent vector must sum to 0, got {v.sum()!r}")
        object.__setattr__(self, "values", v)

    @property
    def n_phases(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True, eq=False)
class MobilityMatrix:
    """Constant mobility. ``structured_M1`` is alpha = xi*(N*I - 11^T)."""

    n_phases: int
    xi: float
    mode: MobilityMode = "structured_M1"
    entries: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n_phases < 2:
            raise ValueError("mobility needs N >= 2")
        if self.mode == "structured_M1":
            if not self.xi > 0:
                raise ValueError("structured mobility requires xi > 0")
            return
        if self.entries is None:
            raise ValueError("general mobility requires explicit entries")
        a = np.array(self.entries, dtype=float)
        if a.shape != (self.n_phases, self.n_phases):
            raise ValueError(f"mobility entries must be {self.n_phases}x{self.n_phases}")
        if not np.allclose(a, a.T, atol=SYMMETRY_TOL, rtol=0.0):
            raise ValueError("mobility must be symmetric")
        object.__setattr__(self, "entries", a)

    @classmethod
    def structured(cls, n_phases: int, xi: float = 1.0) -> "MobilityMatrix":
        return cls(n_phases=n_phases, xi=float(xi), mode="structured_M1")

    @classmethod
    def general(cls, entries) -> "MobilityMatrix":
        a = np.array(entries, dtype=float)
        return cls(n_phases=a.shape[0], xi=float("nan"), mode="general_psd", entries=a)

    @property
    def matrix(self) -> np.ndarray:
        if self.mode == "structured_M1":
            n = self.n_phases
            return self.xi * (n * np.eye(n) - np.ones((n, n)))
        return self.entries

    @property
    def tangent_eigenvalue(self) -> float:
        """xi*N, the eigenvalue of a structured alpha on the tangent space."""
        return self.xi * self.n_phases


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    entries: np.ndarray
    lambda_max: float = float("nan")

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("interaction matrix must be square")
        if not np.allclose(a, a.T, atol=SYMMETRY_TOL, rtol=0.0):
            raise ValueError("interaction matrix must be symmetric")
        lam = float(np.linalg.eigvalsh(a)[-1])
        if np.isfinite(self.lambda_max) and abs(self.lambda_max - lam) > EIGEN_TOL:
            raise ValueError(f"lambda_max {self.lambda_max} disagrees with computed {lam}")
        object.__setattr__(self, "entries", a)
        object.__setattr__(self, "lambda_max", lam)

    @classmethod
    def demixing(cls, n_phases: int, chi: float) -> "InteractionMatrix":
        """A = chi*I, so lambda_A = chi."""
        return cls(entries=chi * np.eye(n_phases))

    @classmethod
    def zero(cls, n_phases: int) -> "InteractionMatrix":
        return cls(entries=np.zeros((n_phases, n_phases)))

    @property
    def n_phases(self) -> int:
        return int(self.entries.shape[0])


# --- Entropy and free energy ---

@dataclass(frozen=True)
class EntropySpec:
    """Singular mixing entropy psi on (0, 1].

    The hooks are only used by the ``custom`` variant; the logarithmic one is
    evaluated in closed form. Build custom entropies through
    ``potential.custom_entropy`` so they are certified.
    """

    theta: float = 1.0
    variant: EntropyVariant = "logarithmic"
    psi: Optional[ArrayHook] = None
    dpsi: Optional[ArrayHook] = None
    d2psi: Optional[ArrayHook] = None
    zeta_floor: float = float("nan")

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.variant == "logarithmic":
            # min of theta/s on (0, 1] is attained at s = 1
            object.__setattr__(self, "zeta_floor", float(self.theta))
        elif None in (self.psi, self.dpsi, self.d2psi):
            raise ValueError("custom entropy needs psi, dpsi and d2psi")
        if not self.zeta_floor > 0:
            raise ValueError("zeta_floor must be positive")

    @classmethod
    def logarithmic(cls, theta: float = 1.0) -> "EntropySpec":
        return cls(theta=float(theta))


@dataclass(frozen=True)
class YosidaRegularization:
    epsilon: float
    base: EntropySpec

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")


@dataclass(frozen=True)
class FreeEnergyDensity:
    entropy: Union[EntropySpec, YosidaRegularization]
    interaction: InteractionMatrix

    @property
    def base(self) -> EntropySpec:
        if isinstance(self.entropy, YosidaRegularization):
            return self.entropy.base
        return self.entropy

    @property
    def epsilon(self) -> float:
        if isinstance(self.entropy, YosidaRegularization):
            return float(self.entropy.epsilon)
        return 0.0

    @property
    def regularization(self) -> Optional[YosidaRegularization]:
        if isinstance(self.entropy, YosidaRegularization) and self.entropy.epsilon > 0:
            return self.entropy
        return None

    @property
    def n_phases(self) -> int:
        return self.interaction.n_phases


# --- Discretization ---

@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered box grid."""

    shape: tuple[int, ...]
    extent: tuple[float, ...]

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        extent = tuple(float(x) for x in self.extent)
        if len(shape) not in SUPPORTED_DIMS:
            raise ValueError(f"only 1D and 2D grids are supported, got dim={len(shape)}")
        if len(extent) != len(shape):
            raise ValueError("extent needs one entry per axis")
        if any(n < MIN_CELLS for n in shape):
            raise ValueError(f"every axis needs at least {MIN_CELLS} cells")
        if any(not x > 0 for x in extent):
            raise ValueError("extent must be positive")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "extent", extent)

    @classmethod
    def uniform(cls, shape, extent) -> "Grid":
        return cls(shape=tuple(shape), extent=tuple(extent))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(x / n for x, n in zip(self.extent, self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def measure(self) -> float:
        return float(np.prod(self.extent))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    def cell_centers(self, axis: int = 0) -> np.ndarray:
        h = self.spacing[axis]
        return (np.arange(self.shape[axis]) + 0.5) * h

    def mesh(self) -> tuple[np.ndarray, ...]:
        axes = [self.cell_centers(i) for i in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))


@dataclass
class ScalarField:
    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != self.grid.shape:
            raise ValueError(f"scalar field shape {self.data.shape} != grid {self.grid.shape}")


@dataclass
class PhaseField:
    """N concentrations per cell, component-major: data.shape == (N, *grid.shape)."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != self.grid.dim + 1 or self.data.shape[1:] != self.grid.shape:
            raise ValueError(f"phase field shape {self.data.shape} does not match grid {self.grid.shape}")
        if self.data.shape[0] < 2:
            raise ValueError("a phase field needs N >= 2 components")

    @property
    def n_phases(self) -> int:
        return int(self.data.shape[0])

    def component(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.data[i])

    def copy(self) -> "PhaseField":
        return PhaseField(self.grid, self.data.copy())


@dataclass
class ChemicalPotentialField:
    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape[1:] != self.grid.shape:
            raise ValueError("chemical potential shape does not match grid")

    @property
    def n_phases(self) -> int:
        return int(self.data.shape[0])


# --- Solver ---

class SolverConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma: float = Field(..., gt=0, description="interface coefficient")
    dt: float = Field(DEFAULT_DT, gt=0)
    stabilization: Optional[float] = Field(None, ge=0, description="None selects the automatic rule")
    yosida_epsilon: float = Field(DEFAULT_YOSIDA_EPSILON, ge=0)
    t_end: float = Field(1.0, ge=0)
    equilibrium_tol: float = Field(DEFAULT_EQUILIBRIUM_TOL, gt=0)
    max_steps: int = Field(DEFAULT_MAX_STEPS, gt=0)
    seed: int = Field(0, ge=0)


@dataclass
class SimulationState:
    t: float
    u: PhaseField
    w: ChemicalPotentialField
    step_count: int
    initial_mean: np.ndarray
    status: RunStatus = "running"
    delta_ref: float = 1.0
    stabilization: float = 0.0
    last_rate: float = float("inf")

    @property
    def grid(self) -> Grid:
        return self.u.grid


# --- Diagnostics ---

@dataclass(frozen=True)
class EnergyReport:
    t: float
    bulk: float
    gradient: float
    total: float
    dissipation: float = 0.0
    step_energy_delta: float = 0.0


@dataclass(frozen=True, eq=False)
class ConservationReport:
    mean_drift: np.ndarray
    constraint_violation: float
    potential_sum_violation: float
    separation_floor: float

    @property
    def mean_drift_max(self) -> float:
        return float(np.max(self.mean_drift))


@dataclass(frozen=True)
class SequenceLemmaParams:
    C: float
    b: float
    eps: float
    y0: float

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not self.b > 1:
            raise ValueError("b must exceed 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.y0 < 0:
            raise ValueError("y0 must be nonnegative")

    @property
    def threshold(self) -> float:
        """C^(-1/eps) * b^(-1/eps^2)."""
        return self.C ** (-1.0 / self.eps) * self.b ** (-1.0 / self.eps ** 2)


@dataclass(frozen=True)
class TimeSeriesRow:
    t: float
    total_energy: float
    bulk_energy: float
    gradient_energy: float
    dissipation: float
    mean_drift_max: float
    constraint_violation: float
    potential_sum_violation: float
    separation_floor: float
    step_energy_delta: float

    def as_dict(self) -> dict:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class SequenceLemmaResult:
    values: np.ndarray
    certified: bool
    saturated: bool = False
    bound_violations: int = 0


@dataclass(frozen=True, eq=False)
class DependenceCurve:
    """||u1(t) - u2(t)|| / ||u1(0) - u2(0)|| along two trajectories."""

    times: np.ndarray
    ratios: np.ndarray
    initial_distance: float

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios))
