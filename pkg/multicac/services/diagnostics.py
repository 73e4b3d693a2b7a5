from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from multicac.constants import DEFAULT_TAU_FRACTION, FIT_WINDOW
from multicac.errors import DecayFitError
from multicac.models import (
    ChemicalPotentialField,
    ConservationReport,
    DependenceCurve,
    EnergyReport,
    FreeEnergyDensity,
    MobilityMatrix,
    PhaseField,
    SequenceLemmaParams,
    SequenceLemmaResult,
    SimulationState,
    SolverConfig,
    TimeSeriesRow,
)
from multicac.services import grid as grid_ops
from multicac.services import solver
from multicac.services.potential import bulk_density
from multicac.services.simplex import mobility_action, project_tangent

logger = logging.getLogger(__name__)


# --- Energy accounting ---

def energy(u: PhaseField, f: FreeEnergyDensity, gamma: float, t: float = 0.0) -> EnergyReport:
    bulk = float(np.sum(bulk_density(f, u.data)) * u.grid.cell_volume)
    grad = grid_ops.gradient_energy(u, gamma)
    return EnergyReport(t=t, bulk=bulk, gradient=grad, total=bulk + grad)


def dissipation(w: ChemicalPotentialField, mobility: MobilityMatrix) -> float:
    """(alpha (w - w_bar), w - w_bar) in the discrete L2 product."""
    rel = solver.relative_potential(w)
    return grid_ops.inner(mobility_action(mobility, rel), rel, w.grid)


def state_energy(
    state: SimulationState,
    f: FreeEnergyDensity,
    cfg: SolverConfig,
    mobility: MobilityMatrix,
    previous_total: Optional[float] = None,
) -> EnergyReport:
    report = energy(state.u, f, cfg.gamma, t=state.t)
    delta = 0.0 if previous_total is None else report.total - previous_total
    return EnergyReport(
        t=report.t,
        bulk=report.bulk,
        gradient=report.gradient,
        total=report.total,
        dissipation=dissipation(state.w, mobility),
        step_energy_delta=delta,
    )


def dissipation_identity_residual(history: Sequence[tuple[float, EnergyReport]]) -> float:
    """max_n |E^{n+1} - E^n + dt*D^n| / (dt * (1 + |D^n|)), with D taken at the left endpoint."""
    if len(history) < 2:
        raise ValueError("the dissipation identity needs at least two samples")
    worst = 0.0
    for (t0, r0), (t1, r1) in zip(history[:-1], history[1:]):
        dt = t1 - t0
        if not dt > 0:
            raise ValueError("samples must be strictly increasing in time")
        mismatch = abs(r1.total - r0.total + dt * r0.dissipation)
        worst = max(worst, mismatch / (dt * (1.0 + abs(r0.dissipation))))
    return worst


def conservation_report(state: SimulationState) -> ConservationReport:
    u, w = state.u.data, state.w.data
    means = grid_ops.component_means(u, state.grid).reshape(state.u.n_phases)
    return ConservationReport(
        mean_drift=np.abs(means - state.initial_mean),
        constraint_violation=float(np.max(np.abs(u.sum(axis=0) - 1.0))),
        potential_sum_violation=float(np.max(np.abs(w.sum(axis=0)))),
        # clipped: the regularized flow may visit slightly negative values
        separation_floor=max(float(np.min(u)), 0.0),
    )


def series_row(report: EnergyReport, conservation: ConservationReport) -> TimeSeriesRow:
    return TimeSeriesRow(
        t=report.t,
        total_energy=report.total,
        bulk_energy=report.bulk,
        gradient_energy=report.gradient,
        dissipation=report.dissipation,
        mean_drift_max=conservation.mean_drift_max,
        constraint_violation=conservation.constraint_violation,
        potential_sum_violation=conservation.potential_sum_violation,
        separation_floor=conservation.separation_floor,
        step_energy_delta=report.step_energy_delta,
    )


# --- Equilibrium ---

def stationary_residual(u: PhaseField, f: FreeEnergyDensity, gamma: float) -> float:
    """||r - r_bar|| for r = -gamma*Delta_h u + P(phi(u) - A u)."""
    r = solver.assemble_potential(u, gamma, f)
    return grid_ops.l2_norm(r - grid_ops.component_means(r, u.grid), u.grid)


def post_transient_window(times, energies, e_inf: float) -> tuple[int, int]:
    """Index range [start, stop) of the decay fit.

    The tail runs from the steepest energy descent to the last sample whose
    excess over e_inf is still resolvable in double precision; the fit uses
    its middle 60%.
    """
    t = np.asarray(times, dtype=float)
    e = np.asarray(energies, dtype=float)
    excess = e - e_inf
    floor = 1e3 * np.finfo(float).eps * (1.0 + abs(e_inf))
    resolvable = np.nonzero(excess > floor)[0]
    if resolvable.size == 0:
        raise DecayFitError("no sample has a positive excess energy over E_inf")
    last = int(resolvable[-1]) + 1

    start = 0
    if last >= 3:
        slopes = np.diff(e[:last]) / np.diff(t[:last])
        start = int(np.argmin(slopes))
    bad = np.nonzero(excess[start:last] <= floor)[0]
    if bad.size:
        last = start + int(bad[0])
    span = last - start
    lo = start + int(np.floor(FIT_WINDOW[0] * span))
    hi = start + int(np.ceil(FIT_WINDOW[1] * span))
    if hi - lo < 3:
        raise DecayFitError(f"post-transient tail too short for a fit ({span} samples)")
    return lo, hi


def decay_rate_estimate(
    history: Sequence[tuple[float, float]],
    e_inf: Optional[float] = None,
    window: Optional[tuple[float, float]] = None,
) -> tuple[float, float]:
    """Fit ln(E(t) - E_inf) by a line and return (omega, r_squared).

    ``e_inf`` defaults to the last energy of the history. ``window`` is an
    explicit (t_start, t_stop) range; without it the post-transient tail is used.
    """
    data = np.asarray(history, dtype=float)
    if data.ndim != 2 or data.shape[0] < 3:
        raise DecayFitError("need at least three (t, E) samples")
    t, e = data[:, 0], data[:, 1]
    if e_inf is None:
        e_inf = float(e[-1])

    if window is None:
        lo, hi = post_transient_window(t, e, e_inf)
        t_fit, e_fit = t[lo:hi], e[lo:hi]
    else:
        mask = (t >= window[0]) & (t <= window[1])
        t_fit, e_fit = t[mask], e[mask]
        if t_fit.size < 3:
            raise DecayFitError(f"window {window} holds fewer than three samples")

    excess = e_fit - e_inf
    if np.any(excess <= 0):
        raise DecayFitError("excess energy must be positive over the fit window")
    fit = stats.linregress(t_fit, np.log(excess))
    return float(-fit.slope), float(fit.rvalue ** 2)


# --- Separation ---

class SeparationTracker:
    """Running minimum of all concentrations over samples with t >= tau."""

    def __init__(self, tau: float = 0.0):
        self.tau = float(tau)
        self.delta: Optional[float] = None
        self.t_attained: Optional[float] = None

    @classmethod
    def for_run(cls, t_end: float, fraction: float = DEFAULT_TAU_FRACTION) -> "SeparationTracker":
        return cls(tau=fraction * t_end)

    def update(self, t: float, u: PhaseField) -> None:
        if t < self.tau:
            return
        floor = max(float(np.min(u.data)), 0.0)
        if self.delta is None or floor < self.delta:
            self.delta = floor
            self.t_attained = float(t)

    def __call__(self, state: SimulationState) -> None:
        self.update(state.t, state.u)

    @property
    def result(self) -> tuple[Optional[float], Optional[float]]:
        return self.delta, self.t_attained


def separation_tracker(stream, tau: float = 0.0) -> tuple[Optional[float], Optional[float]]:
    """Fold an iterable of (t, PhaseField) pairs."""
    tracker = SeparationTracker(tau)
    for t, u in stream:
        tracker.update(t, u)
    return tracker.result


# --- Sequence lemma ---

def de_giorgi_sequence(p: SequenceLemmaParams, n_max: int) -> SequenceLemmaResult:
    """Iterate y_{n+1} = C b^n y_n^(1+eps) for n < n_max.

    The recursion runs on logarithms so divergent sequences saturate instead
    of overflowing. When y0 <= C^(-1/eps) b^(-1/eps^2) the bound
    y_n <= threshold * b^(-n/eps) is checked for every n.
    """
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    log_c, log_b = np.log(p.C), np.log(p.b)
    threshold = p.threshold
    certified = p.y0 <= threshold * (1.0 + 1e-12)

    logs = np.empty(n_max + 1)
    with np.errstate(divide="ignore"):
        logs[0] = np.log(p.y0)
    for n in range(n_max):
        logs[n + 1] = log_c + n * log_b + (1.0 + p.eps) * logs[n]

    violations = 0
    if certified:
        log_bound = np.log(threshold) - np.arange(n_max + 1) * log_b / p.eps
        slack = 1e-9 * np.maximum(1.0, np.abs(log_bound))
        violations = int(np.sum(logs > log_bound + slack))

    with np.errstate(over="ignore"):
        values = np.exp(logs)
    saturated = bool(np.any(~np.isfinite(values)))
    if saturated:
        values = np.minimum(values, np.finfo(float).max)
        logger.debug("sequence saturated (C=%g, b=%g, eps=%g, y0=%g)", p.C, p.b, p.eps, p.y0)
    return SequenceLemmaResult(values=values, certified=bool(certified), saturated=saturated,
                               bound_violations=violations)


# --- Continuous dependence ---

def continuous_dependence(
    u0: PhaseField,
    perturbation: np.ndarray,
    size: float,
    cfg: SolverConfig,
    mobility: MobilityMatrix,
    f: FreeEnergyDensity,
) -> DependenceCurve:
    """Run from u0 and u0 + delta in lockstep, delta mean-free in the tangent space with ||delta|| = size."""
    grid = u0.grid
    delta = project_tangent(np.asarray(perturbation, dtype=float))
    delta = delta - grid_ops.component_means(delta, grid)
    norm = grid_ops.l2_norm(delta, grid)
    if not norm > 0:
        raise ValueError("perturbation vanishes after projection")
    delta *= size / norm

    first = solver.initial_state(u0, cfg, f)
    second = solver.initial_state(PhaseField(grid, u0.data + delta), cfg, f)
    d0 = grid_ops.l2_norm(second.u.data - first.u.data, grid)

    times, ratios = [0.0], [1.0]
    for _ in range(solver.steps_for(cfg)):
        first = solver.step(first, cfg, mobility, f)
        second = solver.step(second, cfg, mobility, f)
        times.append(first.t)
        ratios.append(grid_ops.l2_norm(second.u.data - first.u.data, grid) / d0)
    return DependenceCurve(times=np.array(times), ratios=np.array(ratios), initial_distance=d0)
