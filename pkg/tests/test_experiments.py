import numpy as np
import pytest

from jointlti import experiments as X
from jointlti.dynamics import NoiseModel
from jointlti.ensemble import JordanSpec
from jointlti.errors import ArgumentError
from jointlti.estimators import FitConfig

from oracles import jordan_block_power_column

DESK = dict(d=10, k_true=3, T=100, M_list=(1, 5, 25, 50), replicates=6, seed=3)


@pytest.fixture(scope="module")
def desk_sweep():
    return X.run_sweep(X.SweepConfig(**DESK))


def test_sweep_row_layout(desk_sweep):
    assert len(desk_sweep.rows) == 8
    assert [r.M for r in desk_sweep.rows] == [1, 1, 5, 5, 25, 25, 50, 50]
    assert all(r.std_error >= 0 and r.replicates == 6 for r in desk_sweep.rows)


def test_sweep_desk_shape(desk_sweep):
    _, joint, _ = desk_sweep.series("joint")
    _, ols, _ = desk_sweep.series("ols")
    assert all(b < a for a, b in zip(joint, joint[1:]))
    assert (max(ols) - min(ols)) / min(ols) < 0.2


def test_sweep_mean_and_std_from_raw(desk_sweep):
    vals = desk_sweep.raw[(None, 25, "joint")]
    row = desk_sweep.cell(25, "joint")
    assert row.mean_error == pytest.approx(np.mean(vals), rel=1e-15)
    assert row.std_error == pytest.approx(np.std(vals, ddof=1), rel=1e-12)


def test_sweep_jobs_do_not_change_output(desk_sweep, tmp_path):
    cfg = X.SweepConfig(**{**DESK, "M_list": (1, 5), "replicates": 3})
    a = X.export(X.run_sweep(cfg, jobs=1), tmp_path / "a.csv").read_bytes()
    b = X.export(X.run_sweep(cfg, jobs=3), tmp_path / "b.csv").read_bytes()
    assert a == b


def test_sweep_saturation_rows_agree():
    cfg = X.SweepConfig(d=3, k_true=2, k_fit=9, T=60, M_list=(1,), replicates=3, seed=1,
                        fit=FitConfig(ridge=0.0))
    res = X.run_sweep(cfg)
    assert abs(res.cell(1, "joint").mean_error - res.cell(1, "ols").mean_error) <= 1e-6


def test_sweep_config_validation():
    with pytest.raises(ArgumentError):
        X.SweepConfig(M_list=())
    with pytest.raises(ArgumentError):
        X.SweepConfig(M_list=(5, 1))
    with pytest.raises(ArgumentError):
        X.SweepConfig(replicates=0)
    with pytest.raises(ArgumentError):
        X.SweepConfig(regime="chaotic")


def test_sweep_errors_carry_cell():
    cfg = X.SweepConfig(d=3, k_true=2, T=1, M_list=(2,), replicates=1, fit=FitConfig(ridge=0.0))
    with pytest.raises(Exception) as info:
        X.run_sweep(cfg)
    assert info.value.cell == (2, 0)
    assert "M=2, replicate=0" in str(info.value)


def test_misspec_zero_target_matches_plain_sweep():
    cfg = X.SweepConfig(d=4, k_true=2, T=40, M_list=(1, 4), replicates=2, seed=7)
    plain = X.run_sweep(cfg)
    grid = X.run_misspec_grid(cfg, a_list=(0.0,), fro_sq_target=0.0)
    assert [(r.mean_error, r.std_error) for r in grid.rows] == [(r.mean_error, r.std_error)
                                                                for r in plain.rows]
    assert all(r.a == 0.0 for r in grid.rows)


def test_misspec_reversal_desk():
    cfg = X.SweepConfig(**{**DESK, "M_list": (50,)})
    grid = X.run_misspec_grid(cfg, a_list=(0.0, 0.5), fro_sq_target=1.0)
    assert grid.cell(50, "joint", 0.0).mean_error > grid.cell(50, "ols", 0.0).mean_error
    assert grid.cell(50, "joint", 0.5).mean_error <= grid.cell(50, "ols", 0.5).mean_error


def test_growth_flat_for_unit_eigenvalue():
    prof = X.state_growth_profile(JordanSpec(((1.0, 1), (1.0, 1))), 50, x0=[1.0, 0.0])
    assert np.all(prof.log_norm == 0.0)


def test_growth_block_two_closed_form():
    prof = X.state_growth_profile(JordanSpec(((1.0, 2),)), 400)
    t = np.arange(401)
    np.testing.assert_allclose(prof.log_norm, 0.5 * np.log(t ** 2 + 1.0), rtol=1e-12, atol=1e-14)
    assert X.growth_slope(prof) == pytest.approx(1.0, abs=0.01)


def test_growth_matches_binomial_oracle():
    prof = X.state_growth_profile(JordanSpec(((0.97, 5),)), 80)
    for t in (0, 3, 40, 80):
        ref = np.linalg.norm(jordan_block_power_column(0.97, 5, t))
        assert prof.log_norm[t] == pytest.approx(np.log(ref), rel=1e-10, abs=1e-12)


def test_growth_terminal_increasing_in_block_size():
    ends = [X.state_growth_profile(JordanSpec.uniform(32, l, 0.99), 300).log_norm[-1]
            for l in (2, 4, 8, 16)]
    assert all(b > a for a, b in zip(ends, ends[1:]))


def test_growth_zero_rows_are_missing():
    prof = X.state_growth_profile(JordanSpec(((0.0, 3),)), 12)
    assert np.all(np.isnan(prof.log_norm[3:])) and np.isfinite(prof.log_norm[:3]).all()


def test_growth_requires_length():
    with pytest.raises(ArgumentError):
        X.state_growth_profile(JordanSpec(((1.0, 2),)), 5)


def test_selection_noiseless_exact():
    runs = X.run_selection_experiment(6, 2, 60, 10, [1, 2, 3, 4], 3, seed=1, noise_variance=0.0,
                                      x0=np.ones(6))
    assert [r.k_chosen for r in runs] == [2, 2, 2]


def test_export_roundtrip_csv_json(desk_sweep, tmp_path):
    p = X.export(desk_sweep, tmp_path / "s.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "M,method,regime,a,mean_error,std_error,replicates"
    assert len(lines) == 1 + len(desk_sweep.rows)
    assert X.import_result(p).rows == desk_sweep.rows
    q = X.export(desk_sweep, tmp_path / "s.json")
    assert X.import_result(q).rows == desk_sweep.rows


def test_export_twelve_rows(tmp_path):
    rows = tuple(X.SweepRow(M, m, "stable", None, 0.1 * M, 0.01, 10)
                 for M in (1, 10, 20, 50, 100, 200) for m in ("joint", "ols"))
    lines = X.export(X.SweepResult(rows), tmp_path / "t.csv").read_text().splitlines()
    assert len(lines) == 13


def test_export_rejects_empty(tmp_path):
    with pytest.raises(ArgumentError):
        X.export(X.SweepResult(()), tmp_path / "e.csv")


def test_export_unwritable(desk_sweep, tmp_path):
    with pytest.raises(OSError):
        X.export(desk_sweep, tmp_path / "missing" / "dir" / "s.csv")


def test_render_growth_sample_count(tmp_path):
    prof = X.state_growth_profile(JordanSpec(((1.0, 2),)), 199)
    assert len(prof) == 200
    svg = X.render_plots(prof, tmp_path / "g.svg")
    assert X.count_plotted_samples(svg) == 200


def test_render_is_deterministic(desk_sweep, tmp_path):
    a = X.render_plots(desk_sweep, tmp_path / "a.svg").read_bytes()
    b = X.render_plots(desk_sweep, tmp_path / "b.svg").read_bytes()
    assert a == b
    assert X.count_plotted_samples(tmp_path / "a.svg", 1) == 4


def test_render_selection(tmp_path):
    runs = X.run_selection_experiment(5, 2, 40, 6, [1, 2, 3], 2, seed=0)
    svg = X.render_plots(runs, tmp_path / "k.svg")
    assert X.count_plotted_samples(svg, 0) == 3


def test_manifest_hashes(desk_sweep, tmp_path):
    csv_path = X.export(desk_sweep, tmp_path / "s.csv")
    man = X.write_manifest(tmp_path / "m.json", desk_sweep.config, [csv_path])
    import json
    obj = json.loads(man.read_text())
    assert obj["outputs"]["s.csv"] == X.git_blob_hash(csv_path.read_bytes())
    # the empty blob has a well known git hash
    assert X.git_blob_hash(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"


def test_unit_root_sweep_runs():
    cfg = X.SweepConfig(d=4, k_true=2, T=80, M_list=(1, 8), regime="unit_root", replicates=2,
                        noise_variance=1.0)
    res = X.run_sweep(cfg)
    assert {r.regime for r in res.rows} == {"unit_root"}
    assert res.cell(8, "joint").mean_error < res.cell(8, "ols").mean_error


def test_sweep_config_dict_roundtrip():
    cfg = X.SweepConfig(**DESK, misspec=(0.25, 1.0))
    assert X.SweepConfig.from_dict(cfg.to_dict()) == cfg


def test_joint_error_floor_when_doubling_M():
    cfg = X.SweepConfig(**{**DESK, "M_list": (50, 100), "replicates": 4})
    res = X.run_sweep(cfg)
    assert res.cell(100, "joint").mean_error >= 0.1 * res.cell(50, "joint").mean_error
