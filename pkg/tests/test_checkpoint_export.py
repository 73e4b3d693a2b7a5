import numpy as np
import pandas as pd
import pytest

from multicac.constants import CHECKPOINT_MAGIC, SERIES_COLUMNS
from multicac.errors import CheckpointError
from multicac.models import Composition, PhaseField, TimeSeriesRow
from multicac.services import checkpoint, export, solver


def _checkpoint(grid, seed=5):
    u = solver.initial_condition("uniform_noise", Composition([0.2, 0.3, 0.5]), 0.1, seed, grid)
    return checkpoint.Checkpoint(u=u, t=0.125, step_count=125, gamma=5e-4, theta=1.0, epsilon=1e-4, xi=1.0)


def test_checkpoint_round_trip_is_bitwise(tmp_path, grid_2d):
    ck = _checkpoint(grid_2d)
    path = checkpoint.write_checkpoint(tmp_path / "state.mcac", ck)
    back = checkpoint.read_checkpoint(path, extent=grid_2d.extent)
    assert back.u.data.tobytes() == ck.u.data.tobytes()
    assert back.u.grid == grid_2d
    assert (back.t, back.step_count, back.gamma, back.theta, back.epsilon, back.xi) == (
        0.125, 125, 5e-4, 1.0, 1e-4, 1.0
    )


def test_checkpoint_layout(grid_1d):
    blob = checkpoint.encode(_checkpoint(grid_1d))
    assert blob.startswith(CHECKPOINT_MAGIC)
    header = len(CHECKPOINT_MAGIC) + 4 + 4 + checkpoint._TAIL.size
    assert len(blob) == header + 8 * 3 * 32


def test_checkpoint_defaults_to_unit_box(grid_1d):
    back = checkpoint.decode(checkpoint.encode(_checkpoint(grid_1d)))
    assert back.u.grid.extent == (1.0,)


def test_checkpoint_errors(tmp_path, grid_1d):
    blob = checkpoint.encode(_checkpoint(grid_1d))
    with pytest.raises(CheckpointError):
        checkpoint.decode(b"XXXX1" + blob[5:])
    with pytest.raises(CheckpointError):
        checkpoint.decode(blob[:-8])
    with pytest.raises(CheckpointError):
        checkpoint.decode(blob[:8])
    with pytest.raises(CheckpointError):
        checkpoint.read_checkpoint(tmp_path / "missing.mcac")


def _row(t):
    return TimeSeriesRow(
        t=t, total_energy=1.0 / 3.0 - t, bulk_energy=0.1, gradient_energy=0.2, dissipation=0.5,
        mean_drift_max=1e-17, constraint_violation=2e-16, potential_sum_violation=3e-15,
        separation_floor=0.25, step_energy_delta=-t,
    )


def test_series_writer(tmp_path):
    path = tmp_path / "out" / "series.csv"
    with export.SeriesWriter(path, flush_every=3) as writer:
        assert list(pd.read_csv(path).columns) == list(SERIES_COLUMNS)
        for k in range(7):
            writer.append(_row(k * 0.1))
    assert writer.rows_written == 7
    assert len(export.read_series(path)) == 7
    frame = pd.read_csv(path, float_precision="round_trip")
    # %.17g round-trips doubles exactly
    assert frame["total_energy"].iloc[4] == 1.0 / 3.0 - 0.4
    assert frame["mean_drift_max"].iloc[0] == 1e-17


def test_read_series_checks_header(tmp_path):
    path = tmp_path / "other.csv"
    pd.DataFrame({"t": [0.0], "energy": [1.0]}).to_csv(path, index=False)
    with pytest.raises(ValueError):
        export.read_series(path)


def test_summary_and_table(tmp_path):
    summary = export.write_summary(tmp_path / "summary.txt", {
        "run": {"status": "reached_t_end", "steps": 10, "t": 0.1},
        "separation": {"delta": 0.25},
    })
    text = summary.read_text()
    assert "[run]\nstatus = reached_t_end\nsteps = 10\nt = 0.10000000000000001\n" in text
    assert "[separation]\ndelta = 0.25" in text

    frame = export.write_table(tmp_path / "sweep.csv", [{"epsilon": 0.1, "x": 1.0}, {"epsilon": 0.01, "x": 2.0}])
    assert list(frame.columns) == ["epsilon", "x"]
    back = pd.read_csv(tmp_path / "sweep.csv", float_precision="round_trip")
    np.testing.assert_array_equal(back["epsilon"], [0.1, 0.01])


def test_phase_field_survives_restart_encoding(grid_1d):
    u = PhaseField(grid_1d, np.full((2, 32), 0.5))
    ck = checkpoint.Checkpoint(u=u, t=0.0, step_count=0, gamma=1.0, theta=1.0, epsilon=0.0, xi=1.0)
    assert checkpoint.decode(checkpoint.encode(ck)).u.n_phases == 2
