from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from multicac.config import ExperimentConfig, get_output_dir, load_config
from multicac.constants import EXIT_CONFIG, EXIT_MODEL, EXIT_OK
from multicac.errors import ConfigError, DecayFitError, InvalidFieldError, ModelError
from multicac.models import (
    Composition,
    EntropySpec,
    FreeEnergyDensity,
    Grid,
    InteractionMatrix,
    MobilityMatrix,
    PhaseField,
    SimulationState,
    SolverConfig,
    YosidaRegularization,
)
from multicac.services import checkpoint, diagnostics, export, solver
from multicac.services.potential import dpsi, yosida_derivative

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


# --- Building the model from a config ---

def build_grid(cfg: ExperimentConfig) -> Grid:
    return Grid.uniform(cfg.grid.shape, cfg.grid.extent)


def build_free_energy(cfg: ExperimentConfig, epsilon: Optional[float] = None) -> FreeEnergyDensity:
    eps = cfg.model.epsilon if epsilon is None else epsilon
    base = EntropySpec.logarithmic(cfg.model.theta)
    entropy = YosidaRegularization(eps, base) if eps > 0 else base
    return FreeEnergyDensity(entropy, InteractionMatrix(cfg.interaction_matrix))


def build_mobility(cfg: ExperimentConfig) -> MobilityMatrix:
    return MobilityMatrix.structured(cfg.model.n_phases, cfg.model.xi)


def build_solver_config(cfg: ExperimentConfig) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(
        gamma=cfg.model.gamma,
        dt=s.dt,
        stabilization=cfg.stabilization,
        yosida_epsilon=cfg.model.epsilon,
        t_end=s.t_end,
        equilibrium_tol=s.equilibrium_tol,
        max_steps=s.max_steps,
        seed=s.seed,
    )


def build_initial_field(cfg: ExperimentConfig) -> PhaseField:
    s = cfg.solver
    return solver.initial_condition(s.init, Composition(cfg.mean_composition), s.amplitude, s.seed, build_grid(cfg))


def load_state(path: PathLike, cfg: ExperimentConfig) -> SimulationState:
    """Resume from a checkpoint: stored t and step_count, means re-read from the field."""
    ck = checkpoint.read_checkpoint(path, tuple(cfg.grid.extent))
    if ck.u.grid.shape != tuple(cfg.grid.shape) or ck.u.n_phases != cfg.model.n_phases:
        raise ConfigError([f"checkpoint {path} does not match the configured grid or N"])
    scfg = build_solver_config(cfg)
    try:
        return solver.initial_state(ck.u, scfg, build_free_energy(cfg), t=ck.t, step_count=ck.step_count)
    except InvalidFieldError as exc:
        raise ConfigError([f"checkpoint {path} is not a valid state: {exc}"]) from exc


# --- Running ---

@dataclass
class RunRecorder:
    """The diagnostic hook of a run: CSV rows, snapshots and running extrema."""

    f: FreeEnergyDensity
    cfg: SolverConfig
    mobility: MobilityMatrix
    writer: export.SeriesWriter
    tracker: diagnostics.SeparationTracker
    snapshot_dir: Optional[Path] = None
    history: list = field(default_factory=list)
    previous_total: Optional[float] = None
    max_drift: float = 0.0
    max_constraint: float = 0.0
    max_potential_sum: float = 0.0
    max_energy_increase: float = 0.0
    min_floor: float = math.inf

    def __call__(self, state: SimulationState) -> None:
        report = diagnostics.state_energy(state, self.f, self.cfg, self.mobility, self.previous_total)
        cons = diagnostics.conservation_report(state)
        self.writer.append(diagnostics.series_row(report, cons))
        if self.previous_total is not None:
            self.max_energy_increase = max(self.max_energy_increase, report.step_energy_delta)
        self.previous_total = report.total
        self.history.append((state.t, report.total))
        self.tracker(state)
        self.max_drift = max(self.max_drift, cons.mean_drift_max)
        self.max_constraint = max(self.max_constraint, cons.constraint_violation)
        self.max_potential_sum = max(self.max_potential_sum, cons.potential_sum_violation)
        self.min_floor = min(self.min_floor, cons.separation_floor)
        if self.snapshot_dir is not None:
            checkpoint.write_checkpoint(self.snapshot_dir / f"step_{state.step_count:08d}.mcac",
                                        snapshot(state, self.cfg, self.f, self.mobility))


def snapshot(state: SimulationState, cfg: SolverConfig, f: FreeEnergyDensity,
             mobility: MobilityMatrix) -> checkpoint.Checkpoint:
    """Header values come from the objects the state was stepped with."""
    return checkpoint.Checkpoint(
        u=state.u,
        t=state.t,
        step_count=state.step_count,
        gamma=cfg.gamma,
        theta=f.base.theta,
        epsilon=f.epsilon,
        xi=mobility.xi,
    )


@dataclass
class RunOutcome:
    state: SimulationState
    out_dir: Path
    summary: dict


def execute(cfg: ExperimentConfig, out_dir: PathLike, state: Optional[SimulationState] = None) -> RunOutcome:
    """Run one experiment and write series.csv, snapshots, final_state.mcac and summary.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_resolved.json").write_text(cfg.model_dump_json(indent=2), encoding="utf-8")

    f = build_free_energy(cfg)
    mobility = build_mobility(cfg)
    scfg = build_solver_config(cfg)
    if state is None:
        state = solver.initial_state(build_initial_field(cfg), scfg, f)

    with export.SeriesWriter(out / "series.csv") as writer:
        recorder = RunRecorder(
            f=f,
            cfg=scfg,
            mobility=mobility,
            writer=writer,
            tracker=diagnostics.SeparationTracker.for_run(scfg.t_end),
            snapshot_dir=(out / "snapshots") if cfg.output.snapshots else None,
        )
        final = solver.run(state, scfg, mobility, f, hooks=[recorder], cadence=cfg.output.cadence)

    checkpoint.write_checkpoint(out / "final_state.mcac", snapshot(final, scfg, f, mobility))
    summary = summarize(final, recorder, f, scfg)
    export.write_summary(out / "summary.txt", summary)
    logger.info("outputs written to %s", out)
    return RunOutcome(state=final, out_dir=out, summary=summary)


def summarize(final: SimulationState, rec: RunRecorder, f: FreeEnergyDensity, cfg: SolverConfig) -> dict:
    try:
        omega, r2 = diagnostics.decay_rate_estimate(rec.history)
    except DecayFitError as exc:
        logger.warning("decay rate unavailable: %s", exc)
        omega, r2 = float("nan"), float("nan")
    delta, t_attained = rec.tracker.result
    final_energy = diagnostics.energy(final.u, f, cfg.gamma).total
    return {
        "run": {
            "status": final.status,
            "steps": final.step_count,
            "t": final.t,
            "final_energy": final_energy,
            "stabilization": final.stabilization,
        },
        "conservation": {
            "mean_drift_max": rec.max_drift,
            "constraint_violation_max": rec.max_constraint,
            "potential_sum_violation_max": rec.max_potential_sum,
            "separation_floor_min": rec.min_floor,
            "energy_increase_max": rec.max_energy_increase,
        },
        "equilibrium": {
            "stationary_residual": diagnostics.stationary_residual(final.u, f, cfg.gamma),
            "last_rate": final.last_rate,
            "omega": omega,
            "r_squared": r2,
        },
        "separation": {
            "tau": rec.tracker.tau,
            "delta": "none" if delta is None else delta,
            "t_attained": "none" if t_attained is None else t_attained,
        },
    }


def _fail(exc: Exception, code: int) -> int:
    logger.error("%s", exc)
    print(f"error: {exc}", file=sys.stderr)
    return code


def _resolve_out(cfg: ExperimentConfig, out: Optional[PathLike]) -> Path:
    return Path(out or cfg.output.directory or get_output_dir())


def cmd_run(config_path: PathLike, overrides: Sequence[str] = (), out: Optional[PathLike] = None,
            restart: Optional[PathLike] = None) -> int:
    try:
        cfg = load_config(config_path, overrides)
        state = load_state(restart, cfg) if restart else None
        outcome = execute(cfg, _resolve_out(cfg, out), state)
    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG)
    except ModelError as exc:
        return _fail(exc, EXIT_MODEL)
    logger.info("run finished: %s", outcome.summary["run"]["status"])
    return EXIT_OK


def psi_deviation(f: FreeEnergyDensity, lo: float = 0.1, hi: float = 0.9, n: int = 801) -> float:
    """max |psi'_eps - psi'| on [lo, hi]; zero for the exact entropy."""
    reg = f.regularization
    if reg is None:
        return 0.0
    s = np.linspace(lo, hi, n)
    return float(np.max(np.abs(yosida_derivative(reg, s) - dpsi(f.base, s))))


def cmd_sweep_epsilon(config_path: PathLike, epsilons: Sequence[float], overrides: Sequence[str] = (),
                      out: Optional[PathLike] = None) -> int:
    """Rerun the same seeded experiment for every epsilon and tabulate the results in sweep.csv."""
    try:
        cfg = load_config(config_path, overrides)
        if not epsilons:
            raise ConfigError(["sweep-epsilon needs at least one epsilon"])
        if any(e < 0 for e in epsilons):
            raise ConfigError(["epsilon values must be nonnegative"])
        root = _resolve_out(cfg, out)
        if len(epsilons) == 1:
            cfg = cfg.model_copy(update={"model": cfg.model.model_copy(update={"epsilon": float(epsilons[0])})})
            execute(cfg, root)
            return EXIT_OK

        rows = []
        for i, eps in enumerate(epsilons):
            run_cfg = cfg.model_copy(update={"model": cfg.model.model_copy(update={"epsilon": float(eps)})})
            outcome = execute(run_cfg, root / f"eps_{i:02d}")
            rows.append({
                "epsilon": float(eps),
                "final_energy": outcome.summary["run"]["final_energy"],
                "separation_floor": float(np.min(outcome.state.u.data)),
                "psi_deviation": psi_deviation(build_free_energy(run_cfg)),
            })
        export.write_table(root / "sweep.csv", rows)
        logger.info("sweep of %d epsilons written to %s", len(rows), root / "sweep.csv")
    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG)
    except ModelError as exc:
        return _fail(exc, EXIT_MODEL)
    return EXIT_OK
