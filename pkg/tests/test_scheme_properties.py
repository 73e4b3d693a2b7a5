import pytest

from multicac.services import verify

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def relaxed():
    """The N=2 single-interface quench run to equilibrium at tol 1e-10."""
    return verify.equilibrium_run(tol=1e-10)


def test_long_run_conserves_mass_and_descends():
    c = verify.conservation_run()
    assert c["drift"] < 1e-10
    assert c["constraint"] < 1e-9
    assert c["potential_sum"] < 1e-9
    assert c["energy_increase"] <= 1e-10


def test_dissipation_residual_is_first_order():
    assert 1.6 <= verify.dissipation_ratio() <= 2.4


def test_energy_decays_exponentially(relaxed):
    assert relaxed["omega"] > 0
    assert relaxed["r2"] > 0.95


def test_equilibrium_is_stationary_and_stable(relaxed):
    assert relaxed["status"] == "reached_equilibrium"
    assert relaxed["residual"] < 10 * relaxed["tol"]
    assert relaxed["restart_drift"] < 1e-8


def test_quench_ends_below_uniform_energy(relaxed):
    assert relaxed["below_uniform"]


def test_separation_floors():
    sep = verify.separation_runs()
    assert sep["separated_delta"] > 0.01
    assert sep["near_pure_delta"] >= 1e-3
    assert sep["near_pure_monotone"]


def test_trajectories_depend_continuously_on_data():
    assert verify.dependence_run() <= 100
