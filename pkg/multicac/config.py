from __future__ import annotations

import configparser
import os
from pathlib import Path
from typing import Literal, Optional, Sequence, Union

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from multicac.constants import (
    DEFAULT_DT,
    DEFAULT_EQUILIBRIUM_TOL,
    DEFAULT_MAX_STEPS,
    DEFAULT_YOSIDA_EPSILON,
    MIN_CELLS,
    SUM_TOL,
    SYMMETRY_TOL,
)
from multicac.errors import ConfigError

DEFAULT_LOG_LEVEL = "INFO"
DEFAULT_OUT_DIR = "runs"


def load_environment(path: Optional[str] = None) -> None:
    """Pull MCAC_* settings from a .env file without overriding the real environment."""
    load_dotenv(dotenv_path=path, override=False)


def get_log_level() -> str:
    return os.getenv("MCAC_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper()


def get_output_dir() -> str:
    return os.getenv("MCAC_OUT_DIR", DEFAULT_OUT_DIR)


def _floats(value) -> list[float]:
    if isinstance(value, str):
        return [float(x) for x in value.replace(" ", "").split(",") if x]
    if isinstance(value, (int, float)):
        return [float(value)]
    return [float(x) for x in value]


def _rows(value) -> list[list[float]]:
    if isinstance(value, str):
        return [_floats(row) for row in value.split(";") if row.strip()]
    return [list(map(float, row)) for row in value]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridSpec(_Section):
    dim: int = Field(1, ge=1, le=2)
    shape: list[int] = Field(default_factory=lambda: [128])
    extent: list[float] = Field(default_factory=lambda: [1.0])

    @field_validator("shape", mode="before")
    @classmethod
    def _split_shape(cls, v):
        return [int(x) for x in _floats(v)]

    @field_validator("extent", mode="before")
    @classmethod
    def _split_extent(cls, v):
        return _floats(v)

    @field_validator("shape")
    @classmethod
    def _enough_cells(cls, v):
        if any(n < MIN_CELLS for n in v):
            raise ValueError(f"every axis needs at least {MIN_CELLS} cells")
        return v

    @field_validator("extent")
    @classmethod
    def _positive_extent(cls, v):
        if any(not x > 0 for x in v):
            raise ValueError("extent must be positive")
        return v


class ModelSpec(_Section):
    n_phases: int = Field(..., ge=2)
    theta: float = Field(1.0, gt=0)
    gamma: float = Field(..., gt=0, description="interface coefficient")
    xi: float = 1.0
    interaction: Optional[list[list[float]]] = None
    chi: Optional[float] = None
    epsilon: float = Field(DEFAULT_YOSIDA_EPSILON, ge=0)
    entropy: Literal["logarithmic"] = "logarithmic"

    @field_validator("interaction", mode="before")
    @classmethod
    def _split_rows(cls, v):
        return None if v is None else _rows(v)

    @field_validator("xi")
    @classmethod
    def _positive_mobility(cls, v):
        if not v > 0:
            raise ValueError(
                f"structured mobility alpha = xi*(N I - 1 1^T) is positive definite on the tangent space "
                f"only for xi > 0, got {v!r}"
            )
        return v


class SolverSpec(_Section):
    dt: float = Field(DEFAULT_DT, gt=0)
    stabilization: Union[Literal["auto"], float] = "auto"
    t_end: float = Field(1.0, ge=0)
    equilibrium_tol: float = Field(DEFAULT_EQUILIBRIUM_TOL, gt=0)
    max_steps: int = Field(DEFAULT_MAX_STEPS, gt=0)
    seed: int = Field(0, ge=0)
    init: Literal["uniform_noise", "step"] = "uniform_noise"
    amplitude: float = Field(0.01, ge=0)
    mean: Optional[list[float]] = None

    @field_validator("mean", mode="before")
    @classmethod
    def _split_mean(cls, v):
        return None if v is None else _floats(v)

    @field_validator("stabilization")
    @classmethod
    def _nonnegative(cls, v):
        if v != "auto" and v < 0:
            raise ValueError("stabilization must be >= 0 or 'auto'")
        return v


class OutputSpec(_Section):
    cadence: int = Field(10, ge=1)
    directory: Optional[str] = None
    snapshots: bool = False


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    grid: GridSpec
    model: ModelSpec
    solver: SolverSpec
    output: OutputSpec

    @property
    def interaction_matrix(self) -> np.ndarray:
        n = self.model.n_phases
        if self.model.interaction is not None:
            return np.array(self.model.interaction, dtype=float)
        return (self.model.chi or 0.0) * np.eye(n)

    @property
    def mean_composition(self) -> np.ndarray:
        n = self.model.n_phases
        if self.solver.mean is None:
            return np.full(n, 1.0 / n)
        return np.array(self.solver.mean, dtype=float)

    @property
    def stabilization(self) -> Optional[float]:
        s = self.solver.stabilization
        return None if s == "auto" else float(s)


_SECTIONS = {"grid": GridSpec, "model": ModelSpec, "solver": SolverSpec, "output": OutputSpec}


def _read_table(text: str, violations: list[str]) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(
        comment_prefixes=("#",), inline_comment_prefixes=("#",), delimiters=("=",), interpolation=None
    )
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        violations.append(f"syntax: {exc}".replace("\n", " "))
        return {}
    table: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            violations.append(f"unknown section [{section}]")
            continue
        table[section] = dict(parser.items(section))
    return table


def apply_overrides(table: dict[str, dict[str, str]], overrides: Sequence[str], violations: list[str]) -> None:
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            violations.append(f"override {item!r} must look like section.key=value")
            continue
        if section not in _SECTIONS:
            violations.append(f"override {item!r} names unknown section [{section}]")
            continue
        table.setdefault(section, {})[name.strip()] = value.strip()


def _cross_checks(cfg: ExperimentConfig) -> list[str]:
    out: list[str] = []
    g, m, s = cfg.grid, cfg.model, cfg.solver
    if len(g.shape) != g.dim:
        out.append(f"grid.shape has {len(g.shape)} entries for dim={g.dim}")
    if len(g.extent) != g.dim:
        out.append(f"grid.extent has {len(g.extent)} entries for dim={g.dim}")

    n = m.n_phases
    if m.interaction is not None and m.chi is not None:
        out.append("model: give either interaction or chi, not both")
    if m.interaction is not None:
        a = np.array(m.interaction, dtype=float) if all(len(r) == n for r in m.interaction) else None
        if a is None or a.shape != (n, n):
            out.append(f"model.interaction must be {n}x{n}")
        elif not np.allclose(a, a.T, atol=SYMMETRY_TOL, rtol=0.0):
            out.append("model.interaction must be symmetric")

    if s.mean is not None:
        mean = np.array(s.mean)
        if mean.size != n:
            out.append(f"solver.mean has {mean.size} entries for n_phases={n}")
        else:
            if abs(mean.sum() - 1.0) > SUM_TOL:
                out.append(f"solver.mean must sum to 1 (concentrations are constrained to the simplex), got {mean.sum()!r}")
            if np.any(mean <= 0):
                out.append("solver.mean must be strictly positive in every component")
    return out


def parse_config(text: str, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Parse an INI-style experiment description, reporting every violation at once."""
    violations: list[str] = []
    table = _read_table(text, violations)
    apply_overrides(table, overrides, violations)

    sections = {}
    for name, model in _SECTIONS.items():
        raw = table.get(name, {})
        for key in raw:
            if key not in model.model_fields:
                violations.append(f"unknown key {name}.{key}")
        try:
            sections[name] = model(**{k: v for k, v in raw.items() if k in model.model_fields})
        except ValidationError as exc:
            for err in exc.errors():
                loc = ".".join(str(p) for p in err["loc"]) or "?"
                violations.append(f"{name}.{loc}: {err['msg']}")

    if len(sections) == len(_SECTIONS):
        cfg = ExperimentConfig(**sections)
        violations.extend(_cross_checks(cfg))
        if not violations:
            return cfg
    raise ConfigError(violations)


def load_config(path: Union[str, Path], overrides: Sequence[str] = ()) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    return parse_config(text, overrides)
