import csv
import importlib
import math

import numpy as np
import pytest

from stochgronwall.errors import InvalidParameter, NonFiniteState, NotEvaluable
from stochgronwall.models import ItoModel, catalog_get
from stochgronwall.simulate import SimConfig

# the package re-exports the function ``simulate`` under the module's name
sim = importlib.import_module("stochgronwall.simulate")


def linear_model(a=0.0, b=0.0, x0=2.0, domain=None, name="linear"):
    kw = {} if domain is None else {"domain": domain}
    return ItoModel(name, 1, 1, lambda t, x: a * x, lambda t, x: b * x[:, :, None],
                    x0=[x0], **kw)


def test_gbm_single_euler_step():
    gbm = catalog_get("gbm", mu=0.1, sigma=0.2, x0=1.0)
    out = sim.scheme_step(gbm, "euler", 0.0, np.array([[1.0]]), 0.25, np.array([[0.3]]))
    assert math.isclose(out[0, 0], 1.085, rel_tol=1e-15)


def test_tamed_step_formula():
    gbm = catalog_get("gbm", mu=0.1, sigma=0.2, x0=1.0)
    out = sim.scheme_step(gbm, "tamed", 0.0, np.array([[1.0]]), 0.25, np.array([[0.3]]))
    assert math.isclose(out[0, 0], 1.0 + 0.025 / (1 + 0.025) + 0.06, rel_tol=1e-15)


def test_deterministic_ou_first_order_convergence():
    ou = catalog_get("ou", theta=1.0, sigma=0.0, x0=1.0)
    errs = []
    for n in (16, 64, 256, 1024):
        batch = sim.simulate(ou, SimConfig(T=1.0, n_steps=n, n_paths=2))
        errs.append(abs(batch.terminal_states[0, 0] - math.exp(-1)))
        assert math.isclose(batch.terminal_states[0, 0], (1 - 1 / n) ** n, rel_tol=1e-12)
    slope = np.polyfit(np.log([16, 64, 256, 1024]), np.log(errs), 1)[0]
    assert -1.05 < slope < -0.95


def test_constant_path():
    batch = sim.simulate(linear_model(x0=2.0), SimConfig(n_steps=10, n_paths=5))
    assert np.all(batch.terminal_states == 2.0)
    assert np.all(batch.sup_norms == 2.0)
    assert np.all(batch.exit_steps == 11)


@pytest.mark.parametrize("workers,chunk", [(1, 7), (3, 5), (2, 4096)])
def test_bit_identical_across_chunking_and_workers(workers, chunk):
    gl = catalog_get("ginzburg_landau")
    base = sim.simulate(gl, SimConfig(n_steps=50, n_paths=23, master_seed=9, record_paths=True))
    other = sim.simulate(gl, SimConfig(n_steps=50, n_paths=23, master_seed=9, record_paths=True,
                                       workers=workers, chunk_size=chunk))
    assert np.array_equal(base.trajectories, other.trajectories)
    assert np.array_equal(base.sup_norms, other.sup_norms)


def test_path_randomness_depends_only_on_index():
    a = sim.path_normals(5, [0, 1, 2, 3], 0, 10)
    b = sim.path_normals(5, [2, 3], 0, 10)
    assert np.array_equal(a[2:], b)
    assert not np.array_equal(sim.path_normals(5, [2], 1, 10), b[:1])
    assert not np.array_equal(sim.path_normals(6, [2], 0, 10), b[:1])


def test_domain_exit_freezes_at_last_inside_node():
    # deterministic growth x_k = 1.5^k leaves (-inf, 5) after node 3 (x_4 = 5.06)
    model = linear_model(a=0.5, x0=1.0, domain=lambda x: x[:, 0] < 5.0, name="grow")
    batch = sim.simulate(model, SimConfig(T=10.0, n_steps=10, n_paths=3, record_paths=True))
    assert np.all(batch.exit_steps == 4)
    assert np.allclose(batch.terminal_states[:, 0], 1.5 ** 3)
    assert np.allclose(batch.sup_norms, 1.5 ** 3)
    assert np.all(batch.trajectories[:, 4:, 0] == batch.trajectories[:, 3:4, 0])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_abort_and_flag():
    model = ItoModel("blowup", 1, 1, lambda t, x: x ** 3, lambda t, x: np.zeros((x.shape[0], 1, 1)),
                     x0=[10.0])
    cfg = SimConfig(T=1.0, n_steps=20, n_paths=4)
    with pytest.raises(NonFiniteState) as info:
        sim.simulate(model, cfg)
    assert list(info.value.paths) == [0, 1, 2, 3]
    flagged = sim.simulate(model, SimConfig(T=1.0, n_steps=20, n_paths=4, on_nonfinite="flag"))
    assert flagged.nonfinite.all() and not flagged.valid().any()
    assert any("non-finite" in f for f in flagged.flags)
    # the tamed scheme keeps the same model finite
    tamed = sim.simulate(model, SimConfig(T=1.0, n_steps=20, n_paths=4, scheme="tamed"))
    assert np.all(np.isfinite(tamed.terminal_states))


def test_config_validation():
    for bad in (dict(T=0.0), dict(n_steps=0), dict(n_paths=0), dict(scheme="milstein"),
                dict(on_nonfinite="ignore")):
        with pytest.raises(InvalidParameter):
            SimConfig(**bad)


def test_coupled_identical_starts():
    cb = sim.simulate_coupled(catalog_get("ginzburg_landau"), SimConfig(n_steps=40, n_paths=50),
                              [0.3], [0.3])
    assert np.all(cb.diff_sup == 0.0)


def test_coupled_gbm_linearity_is_exact():
    gbm = catalog_get("gbm")
    cfg = SimConfig(n_steps=100, n_paths=200, master_seed=1)
    cb = sim.simulate_coupled(gbm, cfg, [1.0], [1.1])
    unit = sim.simulate(gbm, cfg, x0=[1.0]).terminal_states[:, 0]
    np.testing.assert_allclose(cb.diff_terminal, 0.1 * np.abs(unit), rtol=1e-12, atol=0)
    np.testing.assert_allclose(cb.second.terminal_states[:, 0] / 1.1,
                               cb.first.terminal_states[:, 0], rtol=1e-13)


def test_coupled_ou_difference_is_deterministic():
    ou = catalog_get("ou", theta=1.0, sigma=1.0)
    n = 1000
    cb = sim.simulate_coupled(ou, SimConfig(n_steps=n, n_paths=30), [0.0], [0.5])
    np.testing.assert_allclose(cb.diff_terminal, 0.5 * (1 - 1 / n) ** n, rtol=1e-9)
    assert math.isclose(0.5 * (1 - 1 / n) ** n, 0.5 * math.exp(-1), rel_tol=1e-3)
    np.testing.assert_allclose(cb.diff_sup, 0.5)


def test_perturbed_driftless_ou_is_exact():
    ou = catalog_get("ou", theta=0.0, sigma=1.3, x0=0.2)
    pb = sim.simulate_perturbed(ou, SimConfig(n_steps=16, n_paths=100))
    assert np.all(pb.diff_sup < 1e-13)
    assert np.all(pb.drift_mismatch_integral == 0.0)


def test_perturbed_requires_oracle():
    with pytest.raises(NotEvaluable):
        sim.simulate_perturbed(catalog_get("ginzburg_landau"), SimConfig(n_steps=4, n_paths=2))


def test_perturbed_gbm_strong_order():
    gbm = catalog_get("gbm", mu=0.05, sigma=0.2)
    hs, errs = [], []
    for n in (16, 64, 256, 1024):
        pb = sim.simulate_perturbed(gbm, SimConfig(n_steps=n, n_paths=2000, master_seed=3),
                                    substeps=1)
        hs.append(1 / n)
        errs.append(math.sqrt(np.mean(pb.diff_terminal ** 2)))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= 0.5


def test_perturbed_mismatch_vanishes_with_h():
    ou = catalog_get("ou", theta=1.0, sigma=1.0, x0=1.0)
    means = []
    for n in (8, 32):
        pb = sim.simulate_perturbed(ou, SimConfig(n_steps=n, n_paths=2000), substeps=4)
        means.append(pb.drift_mismatch_integral.mean())
        assert pb.mismatch_means[2.0].shape == (2, n, 5)
        assert np.all(pb.mismatch_means[2.0][:, :, 0] == 0.0)  # no mismatch at nodes
    assert means[1] < means[0] / 2


def test_tamed_and_euler_agree_for_small_steps():
    gbm = catalog_get("gbm", mu=0.05, sigma=0.2)
    n = 1000
    a = sim.simulate(gbm, SimConfig(n_steps=n, n_paths=200))
    b = sim.simulate(gbm, SimConfig(n_steps=n, n_paths=200, scheme="tamed"))
    diff = np.abs(a.terminal_states - b.terminal_states)
    drift = 0.05 * np.maximum(a.sup_norms, b.sup_norms)[:, None]
    assert np.all(diff < 10 * (1 / n) * drift)


def test_grid_sup_not_smaller_on_finer_grid():
    ou = catalog_get("ou", theta=1.0, sigma=1.0)
    coarse = sim.simulate(ou, SimConfig(n_steps=10, n_paths=4000, master_seed=1)).sup_norms
    fine = sim.simulate(ou, SimConfig(n_steps=200, n_paths=4000, master_seed=2)).sup_norms
    se = math.sqrt(coarse.var() / coarse.size + fine.var() / fine.size)
    assert fine.mean() > coarse.mean() - 3 * se
    assert np.all(coarse >= 0.0)


def test_observers_see_each_chunk():
    ou = catalog_get("ou")
    obs = {"last": lambda times, traj, dws, exits: traj[:, -1, 0]}
    batch = sim.simulate(ou, SimConfig(n_steps=10, n_paths=11, chunk_size=4), observers=obs)
    assert np.array_equal(batch.observations["last"], batch.terminal_states[:, 0])


def test_increments_recorded_with_right_scale():
    cfg = SimConfig(T=2.0, n_steps=50, n_paths=400, record_increments=True)
    batch = sim.simulate(catalog_get("ou"), cfg)
    assert batch.increments.shape == (400, 50, 1)
    assert abs(batch.increments.var() / cfg.h - 1.0) < 0.05


def test_trajectory_dump(tmp_path):
    cfg = SimConfig(n_steps=3, n_paths=2, record_paths=True)
    batch = sim.simulate(catalog_get("ou"), cfg)
    out = tmp_path / "paths.csv"
    sim.dump_trajectories(batch, out)
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["path", "step", "t", "x_1"]
    assert len(rows) == 1 + 2 * 4
    assert float(rows[-1][3]) == batch.trajectories[1, 3, 0]
    with pytest.raises(InvalidParameter):
        sim.dump_trajectories(sim.simulate(catalog_get("ou"), SimConfig(n_steps=3, n_paths=2)),
                              out)
