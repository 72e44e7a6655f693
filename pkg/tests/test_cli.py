import json

import numpy as np
import pytest

from jointlti.cli import main
from jointlti.diagnostics import NEAR_UNIT  # noqa: F401  (import check)
from jointlti.dynamics import NoiseModel, save_bundle, simulate_bundle
from jointlti.ensemble import ensemble_from_transitions


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def files(tmp_path, capsys):
    e, b = tmp_path / "e.json", tmp_path / "b.csv"
    assert run(["generate", "--d", 4, "--k", 2, "--M", 3, "--seed", 1, "--out", e], capsys)[0] == 0
    assert run(["simulate", "--ensemble", e, "--T", 150, "--seed", 2, "--out", b], capsys)[0] == 0
    return e, b


def test_prints_resolved_config_first(files, tmp_path, capsys):
    e, _ = files
    code, out, _ = run(["generate", "--d", 3, "--k", 1, "--M", 2, "--out", tmp_path / "x.json"], capsys)
    assert code == 0
    assert out.startswith("{")
    head = out[: out.index("}\n") + 1]
    cfg = json.loads(head)
    assert cfg["command"] == "generate" and cfg["d"] == 3


def test_fit_noiseless_rank_one(tmp_path, capsys):
    A = np.diag([0.9, 0.5])
    ens = ensemble_from_transitions([A] * 3)
    b = simulate_bundle(ens, 5, NoiseModel(np.zeros((2, 2))), x0=[[1.0, 1.0]] * 3)
    path = save_bundle(b, tmp_path / "b.csv")
    out = tmp_path / "fit.json"
    code, _, _ = run(["fit", "--bundle", path, "--k", 1, "--optimizer", "als", "--seed", 1,
                      "--out", out], capsys)
    assert code == 0
    assert json.loads(out.read_text())["final_loss"] <= 1e-16


def test_fit_ols(files, tmp_path, capsys):
    _, b = files
    out = tmp_path / "ols.json"
    assert run(["fit", "--bundle", b, "--optimizer", "ols", "--out", out], capsys)[0] == 0
    assert json.loads(out.read_text())["method"] == "ols"


def test_diagnose_self_consistent(files, tmp_path, capsys):
    e, b = files
    out = tmp_path / "report.json"
    assert run(["diagnose", "--ensemble", e, "--bundle", b, "--delta", 0.1, "--out", out], capsys)[0] == 0
    rep = json.loads(out.read_text())
    upper = max(r["upper_theory"] for r in rep["systems"])
    lower = min(r["lower_theory"] for r in rep["systems"])
    assert rep["kappa_infty"] == pytest.approx(upper / lower, rel=1e-15)


def test_sweep_outputs_and_determinism(tmp_path, capsys):
    args = ["sweep", "--d", 4, "--k", 2, "--T", 40, "--M", "1,4", "--replicates", 2, "--seed", 7]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(args + ["--out", a], capsys)[0] == 0
    assert run(args + ["--out", b, "--jobs", 2], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.svg").exists() and (tmp_path / "a.manifest.json").exists()
    assert len(a.read_text().splitlines()) == 5


def test_misspec_growth_select_export(tmp_path, capsys):
    m = tmp_path / "m.csv"
    assert run(["misspec-grid", "--d", 4, "--k", 2, "--T", 40, "--M", "2,4", "--replicates", 1,
                "--a-list", "0,0.5", "--out", m], capsys)[0] == 0
    assert len(m.read_text().splitlines()) == 1 + 2 * 2 * 2
    g = tmp_path / "g.csv"
    assert run(["growth", "--d", 4, "--l", "2,4", "--T", 50, "--out", g], capsys)[0] == 0
    assert len(g.read_text().splitlines()) == 1 + 2 * 51
    k = tmp_path / "k.csv"
    assert run(["select-k", "--d", 4, "--k", 2, "--T", 40, "--M", 6, "--k-grid", "1..3",
                "--replicates", 1, "--out", k], capsys)[0] == 0
    j = tmp_path / "m.json"
    assert run(["export", "--input", m, "--out", j, "--plot", tmp_path / "p.svg"], capsys)[0] == 0
    assert json.loads(j.read_text())["rows"][0]["a"] == 0.0


def test_dry_run_computes_nothing(tmp_path, capsys):
    out = tmp_path / "never.csv"
    code, text, _ = run(["sweep", "--out", out, "--dry-run"], capsys)
    assert code == 0 and "dry run" in text and not out.exists()


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"d": 3, "k": 1, "M": 2, "regime": "none"}))
    code, text, _ = run(["generate", "--config", cfg, "--M", 5, "--dry-run"], capsys)
    resolved = json.loads(text[: text.index("}\n") + 1])
    assert code == 0 and resolved["d"] == 3 and resolved["M"] == 5 and resolved["regime"] == "none"


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["sweep", "--nope"],
    ["generate", "--d", 3],
    ["sweep", "--M", "x,y"],
    [],
])
def test_usage_errors_exit_one(argv, capsys):
    assert run(argv, capsys)[0] == 1


def test_bad_config_key_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dimension": 3}))
    assert run(["sweep", "--config", cfg], capsys)[0] == 1


def test_invalid_values_exit_one(tmp_path, capsys):
    assert run(["generate", "--d", 0, "--k", 1, "--M", 1, "--out", tmp_path / "e.json"], capsys)[0] == 1


def test_numerical_failure_exits_two(tmp_path, capsys):
    e = tmp_path / "e.json"
    from jointlti.ensemble import save_ensemble
    save_ensemble(ensemble_from_transitions([np.array([[1e200]])]), e)
    code, _, err = run(["simulate", "--ensemble", e, "--T", 10, "--noise-var", 1.0,
                        "--out", tmp_path / "b.csv"], capsys)
    assert code == 2 and "SimulationOverflowError" in err
    one = tmp_path / "one.csv"
    b = simulate_bundle(ensemble_from_transitions([np.eye(2)]), 1, NoiseModel(np.eye(2)), seed=0)
    save_bundle(b, one)
    assert run(["fit", "--bundle", one, "--optimizer", "ols", "--out", tmp_path / "f.json"], capsys)[0] == 2


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as info:
        main(["sweep", "--help"])
    assert info.value.code == 0
