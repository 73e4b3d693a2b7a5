from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
import scipy.linalg

from multicac.constants import EXIT_OK, EXIT_VERIFY
from multicac.errors import CertificationError
from multicac.models import (
    Composition,
    EntropySpec,
    FreeEnergyDensity,
    Grid,
    InteractionMatrix,
    MobilityMatrix,
    PhaseField,
    ScalarField,
    SequenceLemmaParams,
    SolverConfig,
    YosidaRegularization,
)
from multicac.services import diagnostics, grid as grid_ops, potential, simplex, solver

logger = logging.getLogger(__name__)

SUITES = ("simplex", "potential", "discretization", "scheme", "lemmas")


@dataclass(frozen=True)
class PropertyResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def _check(suite: str, name: str, passed, detail: str = "") -> PropertyResult:
    return PropertyResult(suite=suite, name=name, passed=bool(passed), detail=detail)


# --- simplex ---

def quadratic_form_violations(n_phases: int, draws: int = 1000, seed: int = 0, slack: float = 1e-12) -> int:
    """Sampled check of zeta^T diag(c) alpha zeta >= gamma_N min(c_i alpha_ii) |zeta|^2.

    Weights are drawn in (0, 1] and xi in (0, 1]; outside that range the
    inequality has counterexamples.
    """
    rng = _rng(seed)
    bad = 0
    for _ in range(draws):
        xi = 1.0 - rng.uniform(0.0, 1.0)
        m = MobilityMatrix.structured(n_phases, xi)
        c = 1.0 - rng.uniform(0.0, 1.0, n_phases)
        zeta = simplex.project_tangent(rng.standard_normal(n_phases))
        value, bound = simplex.quadratic_form_lower_bound(m, c, zeta)
        if value < bound - slack * (1.0 + abs(value)):
            bad += 1
    return bad


def simplex_suite() -> list[PropertyResult]:
    suite = "simplex"
    rng = _rng(1)
    out = []

    worst = 0.0
    for n in (2, 3, 5):
        v = rng.standard_normal((n, 1000))
        p = simplex.project_tangent(v)
        worst = max(worst, np.abs(p.sum(axis=0)).max(), np.abs(simplex.project_tangent(p) - p).max())
    out.append(_check(suite, "projector idempotent onto sum-zero vectors", worst < 1e-12, f"max error {worst:.2e}"))

    worst = 0.0
    for n in (2, 3, 5):
        m = MobilityMatrix.structured(n, 0.7)
        worst = max(worst, np.abs(m.matrix @ np.ones(n)).max())
        worst = max(worst, abs(simplex.tangent_coercivity(m) - m.tangent_eigenvalue))
    out.append(_check(suite, "structured mobility: kernel 1, l0 = xi*N", worst < 1e-12, f"max error {worst:.2e}"))

    worst = 0.0
    for n in (2, 3, 5):
        m = MobilityMatrix.structured(n, 0.7)
        expected = np.r_[0.0, np.full(n - 1, m.tangent_eigenvalue)]
        worst = max(worst, np.abs(simplex.mobility_eigenvalues(m) - expected).max())
    out.append(_check(suite, "structured mobility spectrum is {0, xi*N (N-1 times)}", worst < 1e-10, f"max error {worst:.2e}"))

    bad = sum(quadratic_form_violations(n, 1000, seed=n) for n in (2, 3, 5))
    out.append(_check(suite, "quadratic-form lower bound, 1000 draws for N in {2,3,5}", bad == 0, f"{bad} violations"))

    worst = 0.0
    for _ in range(500):
        v = rng.normal(0.3, 1.0, 4)
        c = simplex.project_to_simplex(v)
        again = simplex.project_to_simplex(c.values)
        worst = max(worst, np.abs(again.values - c.values).max(), abs(c.values.sum() - 1.0))
    out.append(_check(suite, "simplex projection lands in G and is idempotent", worst < 1e-12, f"max error {worst:.2e}"))
    return out


# --- potential ---

def _log_counterexample() -> EntropySpec:
    """psi'(s) = -ln|ln s|: singular at 0 but with a bounded separation margin."""
    return EntropySpec(
        variant="custom",
        psi=lambda s: np.zeros_like(s),
        dpsi=lambda s: -np.log(np.abs(np.log(s))),
        d2psi=lambda s: 1.0 / (s * np.abs(np.log(s))),
        zeta_floor=1.0,
    )


def potential_suite() -> list[PropertyResult]:
    suite = "potential"
    e = EntropySpec.logarithmic(1.0)
    rng = _rng(2)
    out = []

    s = rng.uniform(0.01, 0.99, 1000)
    h = 1e-6
    d1 = (potential.psi(e, s + h) - potential.psi(e, s - h)) / (2 * h)
    d2 = (potential.dpsi(e, s + h) - potential.dpsi(e, s - h)) / (2 * h)
    err1 = np.max(np.abs(d1 - potential.dpsi(e, s)) / (1 + np.abs(potential.dpsi(e, s))))
    err2 = np.max(np.abs(d2 - potential.d2psi(e, s)) / (1 + np.abs(potential.d2psi(e, s))))
    out.append(_check(suite, "derivative consistency", max(err1, err2) < 1e-6, f"{err1:.2e}, {err2:.2e}"))

    worst = 0.0
    for si, ei in zip(rng.uniform(-0.05, 1.5, 1000), 10.0 ** rng.uniform(-3, 0, 1000)):
        y = YosidaRegularization(ei, e)
        chain = potential.dpsi(e, potential.resolvent(y, si))
        worst = max(worst, abs(potential.yosida_derivative(y, si) - chain))
    out.append(_check(suite, "Yosida chain psi'_eps = psi'(J_eps)", worst < 1e-10, f"max error {worst:.2e}"))

    ok = True
    eps_ladder = (0.1, 0.01, 0.001)
    for si in (0.05, 0.2, 0.5, 0.8, 1.0):
        vals = [potential.regularized_entropy(YosidaRegularization(x, e), si) for x in eps_ladder]
        slopes = [abs(potential.yosida_derivative(YosidaRegularization(x, e), si)) for x in eps_ladder]
        vals.append(potential.psi(e, si))
        slopes.append(abs(potential.dpsi(e, si)))
        ok &= all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
        ok &= all(b >= a - 1e-12 for a, b in zip(slopes, slopes[1:]))
    out.append(_check(suite, "monotone approximation of psi and |psi'|", ok))

    worst = 0.0
    for x in (0.1, 0.01, 0.001):
        y = YosidaRegularization(x, e)
        a, b = rng.uniform(-0.5, 1.5, (2, 500))
        gap = np.abs(potential.yosida_derivative(y, a) - potential.yosida_derivative(y, b)) * x / np.abs(a - b)
        worst = max(worst, float(gap.max()))
    out.append(_check(suite, "psi'_eps is 1/eps-Lipschitz", worst <= 1 + 1e-9, f"max ratio {worst:.6f}"))

    worst = np.inf
    for x in (1.0, 0.1, 0.01, 0.001):
        y = YosidaRegularization(x, e)
        grid_s = np.linspace(-0.5, 2.5, 3001)
        floor = e.zeta_floor / (1 + x * e.zeta_floor)
        worst = min(worst, float(np.min(potential.yosida_second_derivative(y, grid_s)) / floor))
    out.append(_check(suite, "curvature floor zeta/(1+eps*zeta)", worst >= 1 - 1e-9, f"min ratio {worst:.6f}"))

    s_box = np.linspace(0.1, 1.0, 901)
    devs = [
        float(np.max(np.abs(potential.yosida_derivative(YosidaRegularization(10.0 ** -k, e), s_box) - potential.dpsi(e, s_box))))
        for k in range(1, 7)
    ]
    monotone = all(b <= a + 1e-12 for a, b in zip(devs, devs[1:]))
    out.append(_check(suite, "uniform convergence on [0.1, 1]", monotone and devs[-1] < 1e-3,
                      " ".join(f"{d:.1e}" for d in devs)))

    bad = 0
    eps0, x = 0.01, 0.005
    y = YosidaRegularization(x, e)
    for n in (2, 3, 5):
        k = potential.coercive_offset(y, n, eps0)
        r = rng.uniform(-2.0, 2.0, (1000, n))
        lhs = np.sum(potential.regularized_entropy(y, r), axis=1)
        rhs = n / (4 * eps0) * np.sum(r * r, axis=1) - k
        bad += int(np.sum(lhs < rhs))
    out.append(_check(suite, "quadratic lower bound of the regularized entropy", bad == 0, f"{bad} violations"))

    ss = np.array([0.01, 0.1, 0.2, 0.25, 0.4])
    margins = np.array([potential.separation_margin(e, v) for v in ss])
    worst = float(np.max(np.abs(margins - np.log(1 / (2 * ss) - 1))))
    out.append(_check(suite, "separation margin closed form", worst < 1e-12, f"max error {worst:.2e}"))

    try:
        potential.certify_entropy(_log_counterexample())
        rejected = False
    except CertificationError as exc:
        rejected = exc.condition == "separation_divergence"
    try:
        potential.certify_entropy(e)
        accepted = True
    except CertificationError:
        accepted = False
    out.append(_check(suite, "certification accepts the logarithm, rejects -ln|ln s|", rejected and accepted))
    return out


# --- discretization ---

def _cos_mode(grid: Grid) -> np.ndarray:
    x = grid.cell_centers(0)
    return np.cos(np.pi * x / grid.extent[0])


def discretization_suite() -> list[PropertyResult]:
    suite = "discretization"
    rng = _rng(3)
    out = []

    worst = 0.0
    for g in (Grid.uniform((64,), (64.0,)), Grid.uniform((24, 16), (24.0, 16.0))):
        f = rng.standard_normal(g.shape)
        mean = grid_ops.spatial_mean(grid_ops.laplacian(ScalarField(g, f)))
        worst = max(worst, abs(mean) / np.abs(f).max())
    out.append(_check(suite, "Laplacian has zero mean", worst < 1e-12, f"{worst:.2e}"))

    worst = 0.0
    for g in (Grid.uniform((32,), (1.0,)), Grid.uniform((12, 20), (1.0, 2.0))):
        f, q = rng.standard_normal((2,) + g.shape)
        lhs = grid_ops.inner(f, -grid_ops.laplacian_data(q, g), g)
        rhs = grid_ops.inner(-grid_ops.laplacian_data(f, g), q, g)
        worst = max(worst, abs(lhs - rhs) / (1 + abs(lhs)))
    out.append(_check(suite, "summation by parts", worst < 1e-10, f"{worst:.2e}"))

    worst = 0.0
    for g in (Grid.uniform((16,), (1.0,)), Grid.uniform((32,), (2.0,)), Grid.uniform((16, 16), (1.0, 1.0))):
        rhs = rng.standard_normal(g.shape)
        a, b = 1.3, 0.02
        dense = a * np.eye(g.n_cells) - b * grid_ops.dense_laplacian(g)
        ref = scipy.linalg.solve(dense, rhs.ravel()).reshape(g.shape)
        got = grid_ops.neumann_helmholtz_solve(ScalarField(g, rhs), a, b).data
        worst = max(worst, float(np.abs(got - ref).max()))
    out.append(_check(suite, "cosine solve matches dense LU", worst < 1e-9, f"{worst:.2e}"))

    errors = []
    for n in (16, 32, 64):
        g = Grid.uniform((n,), (1.0,))
        f = _cos_mode(g)
        errors.append(float(np.abs(grid_ops.laplacian_data(f, g) + np.pi ** 2 * f).max()))
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    out.append(_check(suite, "Laplacian convergence order", min(orders) >= 1.9,
                      " ".join(f"{o:.3f}" for o in orders)))

    g = Grid.uniform((20, 12), (1.0, 0.6))
    u = PhaseField(g, rng.uniform(0, 1, (3,) + g.shape))
    gamma = 0.3
    lhs = grid_ops.inner(u.data, -grid_ops.laplacian_data(u.data, g), g)
    rhs = 2.0 / gamma * grid_ops.gradient_energy(u, gamma)
    out.append(_check(suite, "gradient energy matches -<u, Delta u>", abs(lhs - rhs) < 1e-10 * (1 + abs(lhs)),
                      f"{abs(lhs - rhs):.2e}"))

    f = rng.standard_normal(1000)
    naive = math.fsum(f.tolist()) / f.size
    g = Grid.uniform((1000,), (1.0,))
    err = abs(grid_ops.spatial_mean(ScalarField(g, f)) - naive) / max(abs(naive), np.abs(f).max())
    out.append(_check(suite, "spatial mean matches exact summation", err < 1e-14, f"{err:.2e}"))
    return out


# --- scheme ---

def _model(n: int, theta: float, chi: float, eps: float) -> FreeEnergyDensity:
    base = EntropySpec.logarithmic(theta)
    entropy = YosidaRegularization(eps, base) if eps > 0 else base
    return FreeEnergyDensity(entropy, InteractionMatrix.demixing(n, chi))


def _tangent_cosine(g: Grid, n: int, amplitude: float, k: int = 1) -> np.ndarray:
    """amplitude*cos(k pi x / L)*(e_1 - e_2), a smooth mean-free tangent perturbation."""
    profile = np.cos(k * np.pi * g.cell_centers(0) / g.extent[0])
    d = np.zeros((n,) + g.shape)
    d[0], d[1] = profile, -profile
    return amplitude * d


def conservation_run(n_cells: int = 256, steps: int = 10_000) -> dict:
    """The N=3, lambda_A=6 spinodal run: conservation extrema and energy increase."""
    g = Grid.uniform((n_cells,), (1.0,))
    f = _model(3, 1.0, 6.0, 1e-4)
    mob = MobilityMatrix.structured(3, 1.0)
    cfg = SolverConfig(gamma=5e-4, dt=1e-4, t_end=steps * 1e-4, equilibrium_tol=1e-14, max_steps=steps)
    u0 = solver.initial_condition("uniform_noise", Composition(np.full(3, 1 / 3)), 0.05, 7, g)
    state = solver.initial_state(u0, cfg, f)
    out = {"drift": 0.0, "constraint": 0.0, "potential_sum": 0.0, "energy_increase": -np.inf}
    previous = diagnostics.energy(state.u, f, cfg.gamma).total
    for _ in range(steps):
        state = solver.step(state, cfg, mob, f)
        rep = diagnostics.conservation_report(state)
        total = diagnostics.energy(state.u, f, cfg.gamma).total
        out["drift"] = max(out["drift"], rep.mean_drift_max)
        out["constraint"] = max(out["constraint"], rep.constraint_violation)
        out["potential_sum"] = max(out["potential_sum"], rep.potential_sum_violation)
        out["energy_increase"] = max(out["energy_increase"], total - previous)
        previous = total
    return out


def dissipation_ratio(dt: float = 1e-3, t_end: float = 0.2) -> float:
    """Dissipation-identity residual at dt divided by the one at dt/2."""
    g = Grid.uniform((128,), (1.0,))
    f = _model(3, 1.0, 6.0, 1e-4)
    mob = MobilityMatrix.structured(3, 1.0)
    m = Composition(np.full(3, 1 / 3))
    u0 = solver.initial_condition("custom", m, 1.0, 0, g, perturbation=_tangent_cosine(g, 3, 0.05, k=2))
    residuals = []
    for step_dt in (dt, dt / 2):
        cfg = SolverConfig(gamma=5e-4, dt=step_dt, stabilization=5.0, t_end=t_end, equilibrium_tol=1e-14)
        state = solver.initial_state(u0, cfg, f)
        history = [(state.t, diagnostics.state_energy(state, f, cfg, mob))]
        for _ in range(solver.steps_for(cfg)):
            state = solver.step(state, cfg, mob, f)
            history.append((state.t, diagnostics.state_energy(state, f, cfg, mob)))
        residuals.append(diagnostics.dissipation_identity_residual(history))
    return residuals[0] / residuals[1]


def equilibrium_run(tol: float = 1e-10) -> dict:
    """Single-interface N=2 quench relaxed to equilibrium, then checked for trajectory stability."""
    g = Grid.uniform((32,), (1.0,))
    f = _model(2, 1.0, 3.0, 1e-4)
    mob = MobilityMatrix.structured(2, 1.0)
    cfg = SolverConfig(gamma=0.05, dt=1e-2, t_end=1e4, equilibrium_tol=tol, max_steps=200_000)
    u0 = solver.initial_condition("custom", Composition([0.5, 0.5]), 1.0, 0, g, perturbation=_tangent_cosine(g, 2, 0.1))
    history = []

    def record(state):
        history.append((state.t, diagnostics.energy(state.u, f, cfg.gamma).total))

    final = solver.run(solver.initial_state(u0, cfg, f), cfg, mob, f, hooks=[record])
    uniform = PhaseField(g, np.full((2,) + g.shape, 0.5))
    omega, r2 = diagnostics.decay_rate_estimate(history)
    restarted = final
    drift = 0.0
    for _ in range(1000):
        restarted = solver.step(restarted, cfg, mob, f)
        drift = max(drift, grid_ops.l2_norm(restarted.u.data - final.u.data, g))
    return {
        "status": final.status,
        "omega": omega,
        "r2": r2,
        "residual": diagnostics.stationary_residual(final.u, f, cfg.gamma),
        "below_uniform": history[-1][1] < diagnostics.energy(uniform, f, cfg.gamma).total,
        "restart_drift": drift,
        "tol": tol,
    }


def separation_runs(n_cells: int = 192, gamma: float = 5e-4) -> dict:
    """Floors for strictly separated and near-pure initial data (N=3, lambda_A=4)."""
    g = Grid.uniform((n_cells,), (1.0,))
    f = _model(3, 1.0, 4.0, 1e-4)
    mob = MobilityMatrix.structured(3, 1.0)
    m = Composition(np.full(3, 1 / 3))
    cfg = SolverConfig(gamma=gamma, dt=1e-3, t_end=1.0, equilibrium_tol=1e-14)

    separated = solver.initial_condition("uniform_noise", m, 1 / 3 - 0.1, 11, g)
    tracker = diagnostics.SeparationTracker(0.0)
    solver.run(solver.initial_state(separated, cfg, f), cfg, mob, f, hooks=[tracker])

    near_pure = solver.initial_condition("step", m, 1.0 - 3e-3, 0, g)
    tail = diagnostics.SeparationTracker.for_run(cfg.t_end)
    floors = []

    def watch(state):
        tail(state)
        if state.t >= tail.tau:
            floors.append(float(np.min(state.u.data)))

    solver.run(solver.initial_state(near_pure, cfg, f), cfg, mob, f, hooks=[watch], cadence=10)
    return {
        "separated_delta": tracker.result[0],
        "near_pure_delta": tail.result[0],
        "near_pure_monotone": all(b >= a - 1e-12 for a, b in zip(floors, floors[1:])),
    }


def dependence_run() -> float:
    g = Grid.uniform((128,), (1.0,))
    f = _model(3, 1.0, 4.0, 1e-4)
    mob = MobilityMatrix.structured(3, 0.2)
    cfg = SolverConfig(gamma=5e-4, t_end=1.0)
    u0 = solver.initial_condition("uniform_noise", Composition(np.full(3, 1 / 3)), 0.05, 5, g)
    delta = _rng(6).standard_normal((3,) + g.shape)
    curve = diagnostics.continuous_dependence(u0, delta, 1e-4, cfg, mob, f)
    return curve.max_ratio


def scheme_suite() -> list[PropertyResult]:
    suite = "scheme"
    out = []
    c = conservation_run()
    out.append(_check(suite, "mass conservation over 10^4 steps", c["drift"] < 1e-10, f"{c['drift']:.2e}"))
    out.append(_check(suite, "pointwise sum constraint", c["constraint"] < 1e-9, f"{c['constraint']:.2e}"))
    out.append(_check(suite, "chemical potential sums to zero", c["potential_sum"] < 1e-9, f"{c['potential_sum']:.2e}"))
    out.append(_check(suite, "energy descent", c["energy_increase"] <= 1e-10, f"max increase {c['energy_increase']:.2e}"))

    ratio = dissipation_ratio()
    out.append(_check(suite, "dissipation residual halves with dt", 1.6 <= ratio <= 2.4, f"ratio {ratio:.3f}"))

    eq = equilibrium_run()
    out.append(_check(suite, "exponential approach to equilibrium", eq["omega"] > 0 and eq["r2"] > 0.95,
                      f"omega {eq['omega']:.4g}, r2 {eq['r2']:.4f}"))
    out.append(_check(suite, "stationary residual at equilibrium",
                      eq["status"] == "reached_equilibrium" and eq["residual"] < 10 * eq["tol"],
                      f"{eq['status']}, residual {eq['residual']:.2e}"))
    out.append(_check(suite, "equilibrium is stable under restart", eq["restart_drift"] < 1e-8,
                      f"{eq['restart_drift']:.2e}"))
    out.append(_check(suite, "quench ends below the uniform energy", eq["below_uniform"]))

    sep = separation_runs()
    out.append(_check(suite, "separated data stay above 0.01", sep["separated_delta"] > 0.01,
                      f"delta {sep['separated_delta']:.4g}"))
    out.append(_check(suite, "near-pure data separate after tau",
                      sep["near_pure_delta"] >= 1e-3 and sep["near_pure_monotone"],
                      f"delta {sep['near_pure_delta']:.4g}"))

    ratio = dependence_run()
    out.append(_check(suite, "continuous dependence on initial data", ratio <= 100, f"max ratio {ratio:.3f}"))
    return out


# --- lemmas ---

def de_giorgi_violations(draws: int = 100, n_max: int = 60, seed: int = 4) -> tuple[int, int]:
    """(bound violations, non-monotone sequences) over random certified parameters."""
    rng = _rng(seed)
    bad_bound = bad_monotone = 0
    for _ in range(draws):
        params = SequenceLemmaParams(
            C=rng.uniform(0.5, 5.0), b=rng.uniform(1.1, 4.0), eps=rng.uniform(0.2, 2.0), y0=0.0
        )
        params = SequenceLemmaParams(C=params.C, b=params.b, eps=params.eps, y0=rng.uniform(0.0, 1.0) * params.threshold)
        res = diagnostics.de_giorgi_sequence(params, n_max)
        bad_bound += res.bound_violations
        positive = res.values[res.values > 0]
        bad_monotone += int(np.any(np.diff(positive) > 0))
    return bad_bound, bad_monotone


def lemmas_suite() -> list[PropertyResult]:
    suite = "lemmas"
    out = []
    res = diagnostics.de_giorgi_sequence(SequenceLemmaParams(C=1.0, b=2.0, eps=1.0, y0=0.5), 5)
    out.append(_check(suite, "De Giorgi threshold case is certified", res.certified and res.bound_violations == 0,
                      f"y1 = {res.values[1]:.6g}"))
    res = diagnostics.de_giorgi_sequence(SequenceLemmaParams(C=1.0, b=2.0, eps=1.0, y0=0.6), 60)
    out.append(_check(suite, "De Giorgi above threshold is not certified", not res.certified,
                      "saturated" if res.saturated else ""))
    bound, monotone = de_giorgi_violations()
    out.append(_check(suite, "De Giorgi bound over 100 certified draws", bound == 0 and monotone == 0,
                      f"{bound} bound violations, {monotone} non-monotone"))
    bad = sum(quadratic_form_violations(n, 1000, seed=10 + n) for n in (2, 3, 5))
    out.append(_check(suite, "quadratic-form lower bound", bad == 0, f"{bad} violations"))
    return out


_RUNNERS: dict[str, Callable[[], list[PropertyResult]]] = {
    "simplex": simplex_suite,
    "potential": potential_suite,
    "discretization": discretization_suite,
    "scheme": scheme_suite,
    "lemmas": lemmas_suite,
}


def run_suite(name: str) -> list[PropertyResult]:
    names: Iterable[str] = SUITES if name == "all" else (name,)
    results: list[PropertyResult] = []
    for n in names:
        if n not in _RUNNERS:
            raise ValueError(f"unknown suite {n!r}; choose from {', '.join(SUITES + ('all',))}")
        logger.info("running %s suite", n)
        results.extend(_RUNNERS[n]())
    return results


def cmd_verify(suite: str) -> int:
    results = run_suite(suite)
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        print(f"{mark}  [{r.suite}] {r.name}" + (f"  ({r.detail})" if r.detail else ""))
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed} passed, {failed} failed")
    logger.info("verify %s: %d passed, %d failed", suite, len(results) - failed, failed)
    return EXIT_OK if failed == 0 else EXIT_VERIFY
