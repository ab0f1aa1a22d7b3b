import importlib
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochgronwall import estimators as est
from stochgronwall.errors import InvalidParameter
from stochgronwall.models import ItoModel, LyapunovCertificate, TestFunction, catalog_get
from stochgronwall.simulate import SimConfig

sim = importlib.import_module("stochgronwall.simulate")

positive_samples = st.lists(st.floats(0.0, 1e3), min_size=2, max_size=60)


def zero_fn(t, x):
    return np.zeros(x.shape[0])


def still_model(x0=2.0):
    return ItoModel("still", 1, 1, lambda t, x: np.zeros_like(x),
                    lambda t, x: np.zeros((x.shape[0], 1, 1)), x0=[x0])


# ------------------------------------------------------------ lp norms

def test_constant_samples_give_zero_width():
    e = est.lp_norm_estimate([3.0] * 50, 2.0)
    assert e.point == 3.0 and e.ci_lo == 3.0 and e.ci_hi == 3.0


def test_small_examples():
    assert est.lp_norm_estimate([0.0, 2.0], 1.0).point == 1.0
    assert math.isclose(est.lp_norm_estimate([1.0, 2.0, 3.0], 2.0).point, math.sqrt(14 / 3),
                        rel_tol=1e-15)


def test_single_sample_is_degenerate():
    e = est.lp_norm_estimate([1.7], 3.0)
    assert e.point == e.ci_lo == e.ci_hi == pytest.approx(1.7, rel=1e-15)


@pytest.mark.parametrize("bad", [[], [1.0, math.nan], [1.0, -1.0], [math.inf]])
def test_invalid_samples(bad):
    with pytest.raises(InvalidParameter):
        est.lp_norm_estimate(bad, 2.0)


def test_invalid_q_and_level():
    with pytest.raises(InvalidParameter):
        est.lp_norm_estimate([1.0, 2.0], 0.0)
    with pytest.raises(InvalidParameter):
        est.lp_norm_estimate([1.0, 2.0], 1.0, level=1.0)


@given(s=positive_samples, q1=st.floats(0.2, 6.0), dq=st.floats(0.0, 4.0))
def test_power_mean_monotone_in_q(s, q1, dq):
    a = est.lp_norm_estimate(s, q1, n_bootstrap=0).point
    b = est.lp_norm_estimate(s, q1 + dq, n_bootstrap=0).point
    assert a <= b * (1 + 1e-12) + 1e-12


@given(s=positive_samples, c=st.sampled_from([0.5, 2.0, 4.0, 0.125]), q=st.floats(0.5, 4.0))
def test_scale_equivariance(s, c, q):
    # powers of two keep the rescaling exact in floating point
    a = est.lp_norm_estimate(s, q, n_bootstrap=200, seed=3)
    b = est.lp_norm_estimate(np.array(s) * c, q, n_bootstrap=200, seed=3)
    for u, v in ((a.point, b.point), (a.ci_lo, b.ci_lo), (a.ci_hi, b.ci_hi)):
        assert math.isclose(v, c * u, rel_tol=1e-12, abs_tol=1e-300)


@given(s=positive_samples, q=st.floats(0.5, 4.0))
def test_interval_brackets_point(s, q):
    e = est.lp_norm_estimate(s, q, n_bootstrap=100)
    assert e.ci_lo <= e.point <= e.ci_hi


def test_bootstrap_is_seeded():
    s = np.random.default_rng(0).lognormal(size=300)
    assert est.lp_norm_estimate(s, 2.0, seed=4) == est.lp_norm_estimate(s, 2.0, seed=4)
    assert est.lp_norm_estimate(s, 2.0, seed=4) != est.lp_norm_estimate(s, 2.0, seed=5)


def test_bootstrap_coverage_on_lognormal():
    # E[X^2] = exp(2 s^2) for X = exp(s Z), so the L2 norm at s = 0.5 is exp(0.25)
    rng = np.random.default_rng(12345)
    covered = 0
    for rep in range(100):
        s = rng.lognormal(0.0, 0.5, 2000)
        e = est.lp_norm_estimate(s, 2.0, level=0.99, n_bootstrap=500, seed=rep)
        covered += e.ci_lo <= math.exp(0.25) <= e.ci_hi
    assert covered >= 95


# ------------------------------------------------------------ batch estimates

def test_constant_paths_sup_estimate():
    batch = sim.simulate(still_model(2.0), SimConfig(n_steps=5, n_paths=20))
    for q in (0.5, 2.0, 7.0):
        e = est.sup_lp_estimate(batch, q)
        assert e.point == 2.0
        assert est.GRID_SUP_FLAG in e.flags


def test_single_path_sup_estimate():
    batch = sim.simulate(catalog_get("ou"), SimConfig(n_steps=50, n_paths=1))
    e = est.sup_lp_estimate(batch, 2.0)
    assert e.point == pytest.approx(batch.sup_norms[0], rel=1e-15)
    assert e.ci_lo == e.ci_hi == e.point


@pytest.mark.parametrize("q", [0.5, 1.0, 2.0, 4.0])
def test_sup_dominates_terminal(q):
    batch = sim.simulate(catalog_get("ou", x0=0.5), SimConfig(n_steps=40, n_paths=500))
    assert est.sup_lp_estimate(batch, q).point >= est.terminal_lp_estimate(batch, q).point


def test_flagged_paths_excluded():
    model = ItoModel("blowup", 1, 1, lambda t, x: x ** 3 * (x > 0),
                     lambda t, x: np.ones((x.shape[0], 1, 1)), x0=[0.0])
    with np.errstate(all="ignore"):
        batch = sim.simulate(model, SimConfig(T=3.0, n_steps=30, n_paths=200, master_seed=2,
                                              on_nonfinite="flag"))
    assert batch.nonfinite.any() and not batch.nonfinite.all()
    e = est.terminal_lp_estimate(batch, 2.0)
    assert e.n == int((~batch.nonfinite).sum())


# ------------------------------------------------------------ exponential functionals

def test_trivial_certificate_gives_one():
    batch = sim.simulate(catalog_get("ou"), SimConfig(n_steps=20, n_paths=300, record_paths=True))
    cert = LyapunovCertificate(TestFunction.constant(0.0), zero_fn, 0.0)
    z = est.exp_exponents(batch.times, batch.trajectories, batch.exit_steps, cert, "marginal")
    e = est.exp_functional_estimate(z)
    assert e.point == 1.0 and e.ci_hi == 1.0 and e.flags == ()


def test_deterministic_model_has_zero_width():
    ou = catalog_get("ou", theta=1.0, sigma=0.0, x0=1.0)
    batch = sim.simulate(ou, SimConfig(n_steps=100, n_paths=50, record_paths=True))
    cert = LyapunovCertificate(TestFunction.quadratic(0.5), lambda t, x: np.full(x.shape[0], -0.1),
                               0.0)
    z = est.exp_exponents(batch.times, batch.trajectories, batch.exit_steps, cert, "marginal")
    e = est.exp_functional_estimate(z)
    expected = math.exp(0.5 * (1 - 1 / 100) ** 200 - 0.1)  # Ubar constant, left-point sum
    assert e.ci_lo == e.ci_hi == e.point
    assert math.isclose(e.point, expected, rel_tol=1e-12)


def test_exponents_known_path():
    times = np.array([0.0, 0.5, 1.0])
    traj = np.array([[[1.0], [2.0], [3.0]]])
    cert = LyapunovCertificate(TestFunction.quadratic(1.0), lambda t, x: x[:, 0], 0.0)
    marg = est.exp_exponents(times, traj, np.array([3]), cert, "marginal")
    # U(X_1) + (1 + 2) * 0.5
    assert marg[0] == pytest.approx(9.0 + 1.5)
    uni = est.exp_exponents(times, traj, np.array([3]), cert, "uniform", q=0.5)
    assert uni[0] == pytest.approx(0.5 * 10.5)
    # exit after node 1: tau is the node-1 time
    stopped = est.exp_exponents(times, traj, np.array([2]), cert, "marginal")
    assert stopped[0] == pytest.approx(4.0 + 0.5)


def test_exponent_mode_errors():
    times = np.array([0.0, 1.0])
    traj = np.zeros((1, 2, 1))
    cert = LyapunovCertificate(TestFunction.constant(0.0), zero_fn, 0.0)
    with pytest.raises(InvalidParameter):
        est.exp_exponents(times, traj, np.array([2]), cert, "uniform", q=1.5)
    with pytest.raises(InvalidParameter):
        est.exp_exponents(times, traj, np.array([2]), cert, "peak")


def test_ou_marginal_exponential_moment_below_one():
    ou = catalog_get("ou", theta=1.0, sigma=1.0, x0=0.0)
    cert = LyapunovCertificate(TestFunction.quadratic(0.5), lambda t, x: np.full(x.shape[0], -0.5),
                               0.0)
    obs = {"z": est.exp_observer(cert, "marginal")}
    batch = sim.simulate(ou, SimConfig(n_steps=200, n_paths=20_000, master_seed=8), observers=obs)
    assert est.exp_functional_estimate(batch.observations["z"]).ci_hi <= 1.05


def test_clamp_flag_and_log_space():
    e = est.exp_functional_estimate(np.full(10, 800.0))
    assert est.CLAMP_FLAG in e.flags
    assert math.isfinite(e.point) and e.point == pytest.approx(math.exp(700.0), rel=1e-12)
    big = est.exp_functional_estimate(np.array([600.0, 601.0]), n_bootstrap=0)
    assert big.flags == ()
    assert big.point == pytest.approx(0.5 * (math.exp(600) + math.exp(601)), rel=1e-12)


def test_heavy_tail_flag():
    z = np.zeros(10_000)
    z[:3] = 5.0
    e = est.exp_functional_estimate(z, n_bootstrap=50)
    assert any(f.startswith(est.HEAVY_TAIL_FLAG) for f in e.flags)
    assert est.CLAMP_FLAG not in e.flags
    normal = est.exp_functional_estimate(np.random.default_rng(0).normal(size=1000), n_bootstrap=50)
    assert normal.flags == ()


def test_exp_functional_rejects_bad_input():
    with pytest.raises(InvalidParameter):
        est.exp_functional_estimate([])
    with pytest.raises(InvalidParameter):
        est.exp_functional_estimate([1.0, math.inf])


# ------------------------------------------------------------ mismatch integrals

def test_mismatch_integrals_zero_without_drift():
    ou = catalog_get("ou", theta=0.0, sigma=1.0)
    pb = sim.simulate_perturbed(ou, SimConfig(n_steps=8, n_paths=50), powers=(2.0, 4.0))
    assert est.mismatch_integrals(pb, 2.0) == (0.0, 0.0)
    with pytest.raises(InvalidParameter):
        est.mismatch_integrals(pb, 3.0)


def test_mismatch_integral_p2_equals_mean_pathwise_integral():
    ou = catalog_get("ou", theta=1.0, sigma=1.0, x0=1.0)
    pb = sim.simulate_perturbed(ou, SimConfig(n_steps=16, n_paths=300), substeps=3)
    drift, diffusion = est.mismatch_integrals(pb, 2.0)
    assert drift == pytest.approx(pb.drift_mismatch_integral.mean(), rel=1e-12)
    assert diffusion == 0.0


def test_ou_drift_mismatch_scales_like_h():
    # |theta (Y_s - Y_tk)|^2 has mean ~ theta^2 sigma^2 (s - t_k), so the
    # integral over [0, 1] is ~ theta^2 sigma^2 h / 2
    ou = catalog_get("ou", theta=1.0, sigma=1.0, x0=0.0)
    for n in (16, 64):
        pb = sim.simulate_perturbed(ou, SimConfig(n_steps=n, n_paths=4000), substeps=8)
        drift, _ = est.mismatch_integrals(pb, 2.0)
        assert drift == pytest.approx(0.5 / n, rel=0.1)
