"""Full-size runs (d=25, k=10). Minutes each; run with ``pytest -m slow``."""

import numpy as np
import pytest

from jointlti import ensemble as E
from jointlti import experiments as X
from jointlti.dynamics import NoiseModel, simulate_bundle
from jointlti.estimators import joint_fit, ols_fit

pytestmark = pytest.mark.slow

FULL = dict(d=25, k_true=10, T=200, M_list=(1, 10, 20, 50, 100, 200), replicates=10,
             noise_variance=4.0, seed=0)


@pytest.fixture(scope="module")
def selection_runs():
    return X.run_selection_experiment(25, 10, 250, 50, range(2, 21, 2), 10, seed=0, noise_variance=4.0)


def test_full_sweep_rows(tmp_path):
    res = X.run_sweep(X.SweepConfig(**FULL), jobs=4)
    assert len(res.rows) == 12
    lines = X.export(res, tmp_path / "s.csv").read_text().splitlines()
    assert len(lines) == 13
    assert res.cell(200, "joint").mean_error < res.cell(200, "ols").mean_error


def test_full_joint_below_ols():
    ens = E.generate_ensemble(25, 10, 100, seed=1)
    b = simulate_bundle(ens, 200, NoiseModel.isotropic(25, 4.0), seed=2, retain_noise=False)
    joint = np.mean(np.sum((joint_fit(b, 10).A_hat - ens.A) ** 2, axis=(1, 2)))
    ols = np.mean(np.sum((ols_fit(b).A_hat - ens.A) ** 2, axis=(1, 2)))
    assert joint < ols


def test_full_selection_near_truth(selection_runs):
    chosen = [r.k_chosen for r in selection_runs]
    assert sum(k in (10, 12) for k in chosen) >= 8, chosen


def test_full_selection_never_below_truth(selection_runs):
    assert all(r.k_chosen >= 10 for r in selection_runs)
