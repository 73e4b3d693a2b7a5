import math

import numpy as np
import pytest

from multicac.errors import InitialConditionError, InvalidFieldError, SeparationError, UnsupportedMobilityError
from multicac.models import Composition, MobilityMatrix, PhaseField, SolverConfig
from multicac.services import diagnostics, solver
from multicac.services import grid as grid_ops
from multicac.services.potential import curvature
from multicac.services.simplex import project_tangent

from conftest import make_free_energy, tangent_cosine

THIRD = Composition(np.full(3, 1 / 3))


def _uniform(grid, values):
    values = np.asarray(values, dtype=float)
    data = np.broadcast_to(values.reshape((-1,) + (1,) * grid.dim), (values.size,) + grid.shape)
    return PhaseField(grid, data.copy())


def _noisy_state(grid, cfg, f, amplitude=0.05, seed=3):
    u0 = solver.initial_condition("uniform_noise", THIRD, amplitude, seed, grid)
    return solver.initial_state(u0, cfg, f)


def test_chemical_potential_of_uniform_state_is_flat(grid_1d, ternary, small_cfg):
    w = solver.chemical_potential(_uniform(grid_1d, [0.2, 0.3, 0.5]), small_cfg, ternary)
    np.testing.assert_allclose(solver.relative_potential(w), 0.0, atol=1e-14)
    np.testing.assert_allclose(w.data.sum(axis=0), 0.0, atol=1e-9)


def test_binary_potential_is_antisymmetric(grid_1d, small_cfg):
    f = make_free_energy(2, 0.0)
    x = grid_1d.cell_centers(0)
    profile = 0.5 + 0.3 * np.cos(np.pi * x)
    w = solver.chemical_potential(PhaseField(grid_1d, np.stack([profile, 1 - profile])), small_cfg, f)
    np.testing.assert_allclose(w.data[0], -w.data[1], atol=1e-12)


def test_potential_is_the_projected_energy_gradient(grid_1d, ternary, small_cfg):
    state = _noisy_state(grid_1d, small_cfg, ternary)
    u = state.u
    rng = np.random.Generator(np.random.Philox(key=5))
    direction = project_tangent(rng.standard_normal(u.data.shape))
    direction -= grid_ops.component_means(direction, grid_1d)
    h = 1e-6

    def e(data):
        return diagnostics.energy(PhaseField(grid_1d, data), ternary, small_cfg.gamma).total

    fd = (e(u.data + h * direction) - e(u.data - h * direction)) / (2 * h)
    exact = grid_ops.inner(solver.relative_potential(state.w), direction, grid_1d)
    assert fd == pytest.approx(exact, rel=1e-6, abs=1e-9)


def test_uniform_state_is_a_fixed_point(grid_1d, ternary, mobility3, small_cfg):
    state = solver.initial_state(_uniform(grid_1d, [0.25, 0.25, 0.5]), small_cfg, ternary)
    after = solver.step(state, small_cfg, mobility3, ternary)
    np.testing.assert_array_equal(after.u.data, state.u.data)
    assert after.t == pytest.approx(small_cfg.dt)
    assert after.step_count == 1
    assert after.last_rate == 0.0


def test_uniform_state_reaches_equilibrium(grid_1d, ternary, mobility3, small_cfg):
    state = solver.initial_state(_uniform(grid_1d, [0.25, 0.25, 0.5]), small_cfg, ternary)
    final = solver.run(state, small_cfg, mobility3, ternary)
    assert final.status == "reached_equilibrium"
    assert final.step_count == 1


def test_step_is_deterministic(grid_1d, binary, mobility2, small_cfg):
    m = Composition([0.5, 0.5])
    states = []
    for _ in range(2):
        u0 = solver.initial_condition("uniform_noise", m, 0.1, 11, grid_1d)
        states.append(solver.step(solver.initial_state(u0, small_cfg, binary), small_cfg, mobility2, binary))
    np.testing.assert_array_equal(states[0].u.data, states[1].u.data)
    np.testing.assert_array_equal(states[0].w.data, states[1].w.data)


@pytest.mark.parametrize("fixture_grid", ["grid_1d", "grid_2d"])
def test_steps_conserve_mass_and_constraint(fixture_grid, request, ternary, mobility3, small_cfg):
    grid = request.getfixturevalue(fixture_grid)
    state = _noisy_state(grid, small_cfg, ternary)
    for _ in range(50):
        state = solver.step(state, small_cfg, mobility3, ternary)
        report = diagnostics.conservation_report(state)
        assert report.mean_drift_max < 1e-12
        assert report.constraint_violation < 1e-11
        assert report.potential_sum_violation < 1e-9
    assert state.t == pytest.approx(50 * small_cfg.dt)


def test_energy_decreases(grid_1d, ternary, mobility3, small_cfg):
    state = _noisy_state(grid_1d, small_cfg, ternary)
    previous = diagnostics.energy(state.u, ternary, small_cfg.gamma).total
    for _ in range(50):
        state = solver.step(state, small_cfg, mobility3, ternary)
        current = diagnostics.energy(state.u, ternary, small_cfg.gamma).total
        assert current <= previous + 1e-12 * abs(previous)
        previous = current


def test_auto_stabilization_is_monotone(grid_1d, ternary, mobility3, small_cfg):
    state = _noisy_state(grid_1d, small_cfg, ternary)
    expected = 0.5 * (6.0 + float(curvature(ternary, state.delta_ref)))
    first = solver.step(state, small_cfg, mobility3, ternary)
    assert first.stabilization == pytest.approx(expected)
    seen = [first.stabilization]
    for _ in range(20):
        first = solver.step(first, small_cfg, mobility3, ternary)
        seen.append(first.stabilization)
    assert all(b >= a for a, b in zip(seen, seen[1:]))


def test_configured_stabilization_is_used(grid_1d, ternary, mobility3, small_cfg):
    cfg = small_cfg.model_copy(update={"stabilization": 2.5})
    state = solver.step(_noisy_state(grid_1d, cfg, ternary), cfg, mobility3, ternary)
    assert state.stabilization == 2.5


def test_general_mobility_is_rejected(grid_1d, ternary, small_cfg):
    state = _noisy_state(grid_1d, small_cfg, ternary)
    general = MobilityMatrix.general([[2.0, -1.0, -1.0], [-1.0, 2.0, -1.0], [-1.0, -1.0, 2.0]])
    with pytest.raises(UnsupportedMobilityError):
        solver.step(state, small_cfg, general, ternary)


def test_run_with_elapsed_horizon_returns_immediately(grid_1d, ternary, mobility3, small_cfg):
    cfg = small_cfg.model_copy(update={"t_end": 0.0})
    calls = []
    state = _noisy_state(grid_1d, cfg, ternary)
    final = solver.run(state, cfg, mobility3, ternary, hooks=[calls.append])
    assert final.status == "reached_t_end"
    assert final.step_count == 0
    assert calls == []


def test_run_calls_hooks_on_cadence(grid_1d, ternary, mobility3, small_cfg):
    seen = []
    final = solver.run(_noisy_state(grid_1d, small_cfg, ternary), small_cfg, mobility3, ternary,
                       hooks=[lambda s: seen.append(s.step_count)], cadence=10)
    assert final.status == "reached_t_end"
    assert final.step_count == 50
    assert seen == [0, 10, 20, 30, 40, 50]


def test_run_stops_at_max_steps(grid_1d, ternary, mobility3, small_cfg):
    cfg = small_cfg.model_copy(update={"max_steps": 7})
    final = solver.run(_noisy_state(grid_1d, cfg, ternary), cfg, mobility3, ternary)
    assert final.status == "max_steps"
    assert final.step_count == 7


def test_exact_entropy_reports_separation_failure(grid_1d, mobility3):
    f = make_free_energy(3, 6.0, eps=0.0)
    cfg = SolverConfig(gamma=1e-4, dt=100.0, stabilization=0.0, yosida_epsilon=0.0, t_end=1e3)
    u0 = solver.initial_condition("uniform_noise", THIRD, 0.3, 1, grid_1d)
    state = solver.initial_state(u0, cfg, f)
    with pytest.raises(SeparationError):
        solver.run(state, cfg, mobility3, f)


def test_initial_state_rejects_fields_off_the_simplex(grid_1d, ternary, small_cfg):
    with pytest.raises(InvalidFieldError, match="sum"):
        solver.initial_state(_uniform(grid_1d, [0.6, 0.6, 0.6]), small_cfg, ternary)
    with pytest.raises(InvalidFieldError, match="outside"):
        solver.initial_state(_uniform(grid_1d, [-0.2, 0.6, 0.6]), small_cfg, ternary)
    with pytest.raises(InvalidFieldError, match="components"):
        solver.initial_state(_uniform(grid_1d, [0.5, 0.5]), small_cfg, ternary)
    bad = _uniform(grid_1d, [0.2, 0.3, 0.5])
    bad.data[1, 4] = np.nan
    with pytest.raises(InvalidFieldError, match="non-finite"):
        solver.initial_state(bad, small_cfg, ternary)


def test_regularized_state_may_dip_below_zero(grid_1d, ternary, small_cfg):
    dipped = _uniform(grid_1d, [-1e-3, 0.5, 0.501])
    assert solver.bound_slack(ternary) > 1e-3
    state = solver.initial_state(dipped, small_cfg, ternary)
    assert state.delta_ref == pytest.approx(-1e-3)
    exact = make_free_energy(3, 6.0, eps=0.0)
    with pytest.raises(InvalidFieldError):
        solver.initial_state(dipped, small_cfg, exact)


def test_one_step_error_is_second_order(grid_1d, binary, mobility2):
    cfg = SolverConfig(gamma=2e-3, dt=1e-5, stabilization=2.0, t_end=1.0)
    m = np.array([0.5, 0.5]).reshape(2, 1)
    u0 = PhaseField(grid_1d, m + tangent_cosine(grid_1d, 2, 0.1))

    def advance(dt, n):
        c = cfg.model_copy(update={"dt": dt})
        state = solver.initial_state(u0, c, binary)
        for _ in range(n):
            state = solver.step(state, c, mobility2, binary)
        return state.u.data

    errors = []
    for dt, n_ref in ((1e-3, 100), (5e-4, 50)):
        reference = advance(1e-5, n_ref)
        errors.append(grid_ops.l2_norm(advance(dt, 1) - reference, grid_1d))
    assert math.log2(errors[0] / errors[1]) >= 1.8


def test_noise_initial_condition(grid_2d):
    m = Composition([0.2, 0.3, 0.5])
    u = solver.initial_condition("uniform_noise", m, 0.1, 42, grid_2d)
    means = grid_ops.component_means(u.data, grid_2d).ravel()
    np.testing.assert_allclose(means, m.values, atol=1e-14)
    np.testing.assert_allclose(u.data.sum(axis=0), 1.0, atol=1e-12)
    assert np.max(np.abs(u.data - m.values.reshape(3, 1, 1))) == pytest.approx(0.1, rel=1e-6)
    again = solver.initial_condition("uniform_noise", m, 0.1, 42, grid_2d)
    np.testing.assert_array_equal(u.data, again.data)
    other = solver.initial_condition("uniform_noise", m, 0.1, 43, grid_2d)
    assert not np.array_equal(u.data, other.data)


def test_step_initial_condition(grid_1d):
    u = solver.initial_condition("step", THIRD, 0.2, 0, grid_1d)
    np.testing.assert_allclose(grid_ops.component_means(u.data, grid_1d).ravel(), THIRD.values, atol=1e-14)
    np.testing.assert_allclose(u.data.sum(axis=0), 1.0, atol=1e-12)
    assert np.argmax(u.data[:, 0]) == 0
    assert np.argmax(u.data[:, -1]) == 2


def test_initial_condition_errors(grid_1d):
    with pytest.raises(InitialConditionError):
        solver.initial_condition("step", THIRD, 1.5, 0, grid_1d)
    with pytest.raises(InitialConditionError):
        solver.initial_condition("uniform_noise", Composition([1.0, 0.0]), 0.1, 0, grid_1d)
    with pytest.raises(InitialConditionError):
        solver.initial_condition("custom", THIRD, 0.1, 0, grid_1d, perturbation=np.zeros((2, 32)))
    with pytest.raises(InitialConditionError):
        solver.initial_condition("spiral", THIRD, 0.1, 0, grid_1d)


def test_steps_for():
    cfg = SolverConfig(gamma=1.0, dt=1e-3, t_end=0.05)
    assert solver.steps_for(cfg) == 50
    assert solver.steps_for(cfg, t0=0.02) == 30
    assert solver.steps_for(cfg, t0=0.06) == 0
