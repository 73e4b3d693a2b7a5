from __future__ import annotations

import logging
import math
from dataclasses import replace
from typing import Callable, Iterable, Literal, Optional

import numpy as np

from multicac.errors import InitialConditionError, InvalidFieldError, UnsupportedMobilityError
from multicac.models import (
    ChemicalPotentialField,
    Composition,
    FreeEnergyDensity,
    Grid,
    MobilityMatrix,
    PhaseField,
    SimulationState,
    SolverConfig,
)
from multicac.constants import FIELD_SUM_TOL, REGULARIZED_BOUND_FACTOR
from multicac.services import grid as grid_ops
from multicac.services.potential import curvature, entropy_gradient
from multicac.services.simplex import project_tangent

logger = logging.getLogger(__name__)

InitKind = Literal["uniform_noise", "step", "custom"]
Hook = Callable[[SimulationState], None]


def _bulk_gradient(data: np.ndarray, f: FreeEnergyDensity) -> np.ndarray:
    """P(phi(u) - A u) per cell."""
    return project_tangent(entropy_gradient(f, data))


def assemble_potential(u: PhaseField, gamma: float, f: FreeEnergyDensity) -> np.ndarray:
    """w = -gamma*Delta_h u + P(phi(u) - A u) as a raw (N, *shape) array."""
    return -gamma * grid_ops.laplacian_data(u.data, u.grid) + _bulk_gradient(u.data, f)


def chemical_potential(u: PhaseField, cfg: SolverConfig, f: FreeEnergyDensity) -> ChemicalPotentialField:
    return ChemicalPotentialField(u.grid, assemble_potential(u, cfg.gamma, f))


def relative_potential(w: ChemicalPotentialField) -> np.ndarray:
    """w - w_bar, the driving force of the conserved flow."""
    return w.data - grid_ops.component_means(w.data, w.grid)


def separation_floor(u: PhaseField) -> float:
    return float(np.min(u.data))


def bound_slack(f: FreeEnergyDensity) -> float:
    """How far outside [0, 1] a field may sit and still be a valid state."""
    if f.regularization is None:
        return FIELD_SUM_TOL
    spread = f.base.theta + max(f.interaction.lambda_max, 0.0)
    return FIELD_SUM_TOL + REGULARIZED_BOUND_FACTOR * f.epsilon * spread


def check_phase_field(u: PhaseField, f: FreeEnergyDensity) -> None:
    """Raise InvalidFieldError unless u is finite, sums to 1 pointwise and lies in [0, 1] up to bound_slack."""
    if u.n_phases != f.n_phases:
        raise InvalidFieldError(f"field has {u.n_phases} components, the model has {f.n_phases}")
    data = u.data
    if not np.all(np.isfinite(data)):
        raise InvalidFieldError("field holds non-finite concentrations")
    sum_error = float(np.max(np.abs(data.sum(axis=0) - 1.0)))
    if sum_error > FIELD_SUM_TOL:
        raise InvalidFieldError(f"pointwise sum deviates from 1 by {sum_error:.3e} (tolerance {FIELD_SUM_TOL:g})")
    slack = bound_slack(f)
    lo, hi = float(data.min()), float(data.max())
    if lo < -slack or hi > 1.0 + slack:
        raise InvalidFieldError(f"concentrations span [{lo:.4g}, {hi:.4g}], outside [0, 1] (slack {slack:.2g})")


def initial_state(u: PhaseField, cfg: SolverConfig, f: FreeEnergyDensity, t: float = 0.0,
                  step_count: int = 0) -> SimulationState:
    """Wrap a validated field into a state; restarts pass the stored t and step_count."""
    check_phase_field(u, f)
    w = chemical_potential(u, cfg, f)
    means = grid_ops.component_means(u.data, u.grid).reshape(u.n_phases)
    return SimulationState(
        t=float(t),
        u=u,
        w=w,
        step_count=int(step_count),
        initial_mean=means,
        delta_ref=separation_floor(u),
    )


def stabilization_for(state: SimulationState, cfg: SolverConfig, f: FreeEnergyDensity) -> float:
    """S used for the next step.

    A configured value is used as is. Otherwise S = (lambda_A + psi''_eps(delta_ref)) / 2
    where delta_ref is the running minimum of the separation floor, and S never decreases.
    """
    if cfg.stabilization is not None:
        return float(cfg.stabilization)
    delta = min(state.delta_ref, separation_floor(state.u))
    if f.regularization is None:
        delta = max(delta, np.finfo(float).tiny)
    s = 0.5 * (f.interaction.lambda_max + float(curvature(f, delta)))
    s = max(s, state.stabilization, 0.0)
    if s > 2.0 * state.stabilization > 0:
        logger.warning("auto stabilization grew to S=%.4g (floor %.3e)", s, delta)
    return s


def step(state: SimulationState, cfg: SolverConfig, mobility: MobilityMatrix, f: FreeEnergyDensity) -> SimulationState:
    """One stabilized semi-implicit step of du/dt = -alpha (w - w_bar).

    With alpha = xi*N*P = kappa*P and v = u - u_bar0, the update solves
    (1 + dt*kappa*S) v' - dt*kappa*gamma Delta v' = (1 + dt*kappa*S) v - dt*kappa*(g - g_bar)
    with g = P(phi(u) - A u) taken explicitly.
    """
    if mobility.mode != "structured_M1":
        raise UnsupportedMobilityError("the stepper only supports structured mobility alpha = xi*(N I - 1 1^T)")
    if mobility.n_phases != f.n_phases or state.u.n_phases != f.n_phases:
        raise UnsupportedMobilityError("mobility, free energy and field disagree on N")

    grid = state.grid
    kappa = mobility.tangent_eigenvalue
    dt = cfg.dt
    s = stabilization_for(state, cfg, f)
    mean0 = state.initial_mean.reshape((-1,) + (1,) * grid.dim)

    u = state.u.data
    g = state.w.data + cfg.gamma * grid_ops.laplacian_data(u, grid)
    g = g - grid_ops.component_means(g, grid)
    v = u - mean0
    a = 1.0 + dt * kappa * s
    rhs = a * v - dt * kappa * g
    v_new = grid_ops.helmholtz_data(rhs, grid, a, dt * kappa * cfg.gamma)
    v_new = project_tangent(v_new - grid_ops.component_means(v_new, grid))
    u_new = PhaseField(grid, mean0 + v_new)

    w_new = chemical_potential(u_new, cfg, f)
    rate = grid_ops.l2_norm(u_new.data - u, grid) / dt
    floor = separation_floor(u_new)
    return replace(
        state,
        t=state.t + dt,
        u=u_new,
        w=w_new,
        step_count=state.step_count + 1,
        delta_ref=min(state.delta_ref, floor),
        stabilization=s,
        last_rate=rate,
    )


def run(
    state: SimulationState,
    cfg: SolverConfig,
    mobility: MobilityMatrix,
    f: FreeEnergyDensity,
    hooks: Iterable[Hook] = (),
    cadence: int = 1,
) -> SimulationState:
    """Advance until t_end, equilibrium or max_steps.

    Hooks see the starting state and every state whose step_count is a
    multiple of ``cadence``.
    """
    hooks = list(hooks)
    if cadence < 1:
        raise ValueError("cadence must be >= 1")
    if state.t >= cfg.t_end:
        return replace(state, status="reached_t_end")

    logger.info(
        "run start: t=%.6g -> %.6g, dt=%.3g, N=%d, grid=%s, eps=%.3g",
        state.t, cfg.t_end, cfg.dt, f.n_phases, state.grid.shape, f.epsilon,
    )
    for hook in hooks:
        hook(state)

    status = "max_steps"
    for _ in range(cfg.max_steps):
        state = step(state, cfg, mobility, f)
        reached_end = state.t >= cfg.t_end - 1e-9 * cfg.dt
        at_rest = state.last_rate < cfg.equilibrium_tol
        if state.step_count % cadence == 0:
            logger.debug(
                "step %d t=%.6g rate=%.3e floor=%.3e S=%.4g",
                state.step_count, state.t, state.last_rate, state.delta_ref, state.stabilization,
            )
            for hook in hooks:
                hook(state)
        if at_rest:
            status = "reached_equilibrium"
            break
        if reached_end:
            status = "reached_t_end"
            break

    state = replace(state, status=status)
    logger.info("run end: %s after %d steps at t=%.6g", status, state.step_count, state.t)
    return state


def _rng(seed: int) -> np.random.Generator:
    """64-bit counter-based stream keyed by the config seed."""
    return np.random.Generator(np.random.Philox(key=seed))


def _stripes(n_phases: int, grid: Grid) -> np.ndarray:
    n0 = grid.shape[0]
    owner = (np.arange(n0) * n_phases) // n0
    pert = (np.arange(n_phases)[:, None] == owner[None, :]).astype(float) - 1.0 / n_phases
    return np.broadcast_to(pert.reshape((n_phases, n0) + (1,) * (grid.dim - 1)), (n_phases,) + grid.shape).copy()


def initial_condition(
    kind: InitKind,
    m: Composition,
    amplitude: float,
    seed: int,
    grid: Grid,
    perturbation: Optional[np.ndarray] = None,
) -> PhaseField:
    """A field with spatial mean exactly m and pointwise values in the Gibbs simplex.

    ``uniform_noise`` scales projected, mean-free Philox noise so its largest
    entry equals ``amplitude``; ``step`` lays N stripes along the first axis with
    u = m + amplitude*(e_i - 1/N); ``custom`` uses amplitude * ``perturbation``.
    """
    n = m.n_phases
    if np.any(m.values <= 0):
        raise InitialConditionError(f"mean composition must be interior, got {m.values.tolist()}")
    if amplitude < 0:
        raise InitialConditionError("amplitude must be nonnegative")

    shape = (n,) + grid.shape
    if kind == "uniform_noise":
        pert = project_tangent(_rng(seed).uniform(-1.0, 1.0, size=shape))
        pert -= grid_ops.component_means(pert, grid)
        peak = float(np.max(np.abs(pert)))
        pert = pert * (amplitude / peak) if peak > 0 else pert
    elif kind == "step":
        pert = amplitude * _stripes(n, grid)
    elif kind == "custom":
        if perturbation is None:
            raise InitialConditionError("custom initial data needs a perturbation array")
        pert = np.asarray(perturbation, dtype=float)
        if pert.shape != shape:
            raise InitialConditionError(f"perturbation shape {pert.shape} != {shape}")
        pert = amplitude * project_tangent(pert)
    else:
        raise InitialConditionError(f"unknown initial condition kind {kind!r}")

    pert = pert - grid_ops.component_means(pert, grid)
    data = m.values.reshape((n,) + (1,) * grid.dim) + pert
    lo, hi = float(data.min()), float(data.max())
    if lo < -FIELD_SUM_TOL or hi > 1.0 + FIELD_SUM_TOL:
        raise InitialConditionError(
            f"amplitude {amplitude:g} pushes concentrations to [{lo:.4g}, {hi:.4g}], outside [0, 1]"
        )
    return PhaseField(grid, data)


def steps_for(cfg: SolverConfig, t0: float = 0.0) -> int:
    """Number of steps needed to reach t_end from t0."""
    return max(0, math.ceil((cfg.t_end - t0) / cfg.dt - 1e-9))
