import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochgronwall import bounds, models
from stochgronwall.bounds import MismatchData
from stochgronwall.errors import InvalidParameter, NotEvaluable
from stochgronwall.models import GrowthCertificate, LipschitzEnvelope, LyapunovCertificate, TestFunction
from stochgronwall.quadrature import integrate

HALF_PI_PLUS_2 = math.pi / 2 + 2


def zero_fn(t, x):
    return np.zeros(x.shape[0])


def check_product(b):
    # also covers the summed Hoelder bound: ``recombined`` honours ``combine``
    assert math.isclose(b.value, b.recombined(), rel_tol=1e-12, abs_tol=0.0)


# ------------------------------------------------------------- moment bounds

def test_ou_marginal_bound_and_exact_norm():
    ou = models.catalog_get("ou", theta=1.0, sigma=1.0, x0=0.0)
    b = bounds.marginal_moment_bound(GrowthCertificate(2.0, 0.0, 1.0), 0.0, 1.0)
    assert b.value == 1.0
    exact = math.sqrt(ou.oracles.second_moment(1.0))
    assert math.isclose(exact, math.sqrt(-math.expm1(-2.0) / 2), rel_tol=1e-14)
    assert math.isclose(exact, 0.6575, abs_tol=1e-4) and exact <= b.value


def test_gbm_bound_is_tight():
    gbm = models.catalog_get("gbm", mu=0.05, sigma=0.2, x0=1.0)
    b = bounds.marginal_moment_bound(models.growth_certificate(gbm, 4.0), 1.0, 1.0)
    assert math.isclose(b.value, gbm.oracles.pth_moment(1.0, 4.0) ** 0.25, rel_tol=1e-12)
    assert math.isclose(b.value, 1.11628, rel_tol=1e-5)


@given(x0=st.floats(0.0, 100.0), T=st.floats(0.0, 10.0))
def test_zero_coefficients_give_initial_norm(x0, T):
    assert bounds.marginal_moment_bound(GrowthCertificate(2.0, 0.0, 0.0), x0, T).value == \
        pytest.approx(x0, rel=1e-15, abs=0)


def test_uniform_ou_example():
    b = bounds.uniform_moment_bound(GrowthCertificate(2.0, 0.0, 1.0), 0.0, 1.0, 1.0)
    assert abs(b.value - HALF_PI_PLUS_2) < 1e-9
    full = bounds.uniform_moment_bound(GrowthCertificate(2.0, 0.0, 1.0), 0.0, 1.0, 1.0, "full")
    assert abs(full.value - HALF_PI_PLUS_2 ** 2) < 1e-8
    with pytest.raises(InvalidParameter):
        bounds.uniform_moment_bound(GrowthCertificate(2.0, 0.0, 1.0), 0.0, 1.0, 2.0)


@given(p=st.floats(2.0, 8.0), frac=st.floats(0.02, 0.98), alpha=st.floats(0.0, 2.0),
       beta=st.floats(0.0, 3.0), x0=st.floats(0.0, 5.0), T=st.floats(0.01, 3.0))
def test_uniform_dominates_marginal_and_factorises(p, frac, alpha, beta, x0, T):
    cert = GrowthCertificate(p, alpha, beta)
    marg = bounds.marginal_moment_bound(cert, x0, T)
    uni = bounds.uniform_moment_bound(cert, x0, T, frac * p)
    assert math.isfinite(uni.value)
    assert uni.value >= marg.value
    check_product(marg)
    check_product(uni)


def test_discounted_integral_closed_form():
    assert bounds.discounted_integral(2.0, 0.0, 3.0) == 6.0
    assert math.isclose(bounds.discounted_integral(1.0, 2.0, 1.0), (1 - math.exp(-2)) / 2,
                        rel_tol=1e-15)


@given(beta=st.floats(0.0, 5.0), alpha=st.floats(-3.0, 3.0), t=st.floats(0.01, 5.0))
def test_ramp_integral_matches_quadrature(beta, alpha, t):
    quad = integrate(lambda r: beta * (1 - r / t) * np.exp(-alpha * r), 0.0, t, tol=1e-13,
                     strict=False)
    assert math.isclose(bounds.ramp_discounted_integral(beta, alpha, t), quad.value,
                        rel_tol=1e-11, abs_tol=max(quad.abs_error, 1e-13))


def test_ramp_integral_limits():
    assert bounds.ramp_discounted_integral(2.0, 0.0, 3.0) == pytest.approx(3.0, rel=1e-15)
    assert bounds.ramp_discounted_integral(2.0, 1.0, 0.0) == 0.0
    # series and closed form agree across the switch
    t = 1.0
    a, b = bounds.ramp_discounted_integral(1.0, 0.999e-3, t), bounds.ramp_discounted_integral(
        1.0, 1.001e-3, t)
    assert abs(a - b) < 1e-6


# ------------------------------------------------------ exponential moments

def quad_cert(eps=0.5, beta=0.0):
    return LyapunovCertificate(TestFunction.quadratic(eps), zero_fn, 0.0, beta)


def test_exp_bound_examples():
    assert bounds.exp_moment_bound(quad_cert(), [0.0]).value == 1.0
    uni = bounds.exp_moment_bound(quad_cert(), [0.0], "uniform", q=0.5)
    assert abs(uni.value - HALF_PI_PLUS_2) < 1e-9
    assert math.isclose(bounds.exp_moment_bound(quad_cert(), [1.0]).value, math.exp(0.5),
                        rel_tol=1e-15)
    with pytest.raises(InvalidParameter):
        bounds.exp_moment_bound(quad_cert(), [0.0], "uniform", q=1.0)


def test_poly_from_exp_examples():
    zero = LyapunovCertificate(TestFunction.constant(0.0), zero_fn, 0.0, 0.0)
    assert bounds.poly_from_exp_bound(zero, [0.0], 2.0, 1.0).value == 4.0
    b = bounds.poly_from_exp_bound(quad_cert(beta=0.5), [0.0], 2.0, 1.0)
    assert math.isclose(b.value, 6.25, rel_tol=1e-15)
    assert math.isclose(b.details["outer"], 4 * math.exp(0.5), rel_tol=1e-15)
    assert b.value <= b.details["outer"]
    uni = bounds.poly_from_exp_bound(quad_cert(beta=0.5), [0.0], 2.0, 1.0, "uniform", q=1.0)
    assert abs(dict(uni.factors)["sup_constant"] - HALF_PI_PLUS_2 ** 2) < 1e-8
    assert math.isclose(dict(uni.factors)["initial"], 2.5, rel_tol=1e-15)
    with pytest.raises(InvalidParameter):
        bounds.poly_from_exp_bound(quad_cert(), [0.0], 2.0, 1.0, "uniform", q=2.0)


@given(p=st.floats(1.0, 6.0), u=st.floats(0.0, 3.0), beta=st.floats(0.0, 2.0))
def test_middle_never_exceeds_outer(p, u, beta):
    cert = quad_cert(eps=u, beta=beta)
    b = bounds.poly_from_exp_bound(cert, [1.0], p, 1.0)
    assert b.value <= b.details["outer"] * (1 + 1e-12)


# ----------------------------------------------------------------- Lipschitz

def gbm_coupling():
    gbm = models.catalog_get("gbm", mu=0.05, sigma=0.2)
    return models.coupling_certificate(gbm, 4.0, 4.0)


def test_gbm_lipschitz_example():
    b = bounds.lipschitz_bound(gbm_coupling(), [1.0], [1.1], 1.0)
    assert math.isclose(b.value, 0.1 * math.exp(0.11), rel_tol=1e-12)
    assert b.details["norm_index"] == 2.0


def test_lipschitz_equal_starts():
    assert bounds.lipschitz_bound(gbm_coupling(), [1.0], [1.0], 1.0).value == 0.0


def test_ginzburg_landau_lipschitz():
    gl = models.catalog_get("ginzburg_landau", eta=1.0)
    cert = models.coupling_certificate(gl, 4.0, 4.0, envelope=False)
    b = bounds.lipschitz_bound(cert, [0.2], [0.5], 1.0)
    assert math.isclose(b.value, 0.3 * math.e, rel_tol=1e-12)


def test_lipschitz_uniform_factor_and_errors():
    cert = gbm_coupling()
    marg = bounds.lipschitz_bound(cert, [1.0], [1.1], 1.0)
    uni = bounds.lipschitz_bound(cert, [1.0], [1.1], 1.0, "uniform", delta=0.5)
    assert math.isclose(uni.value / marg.value, HALF_PI_PLUS_2, rel_tol=1e-9)
    assert uni.details["norm_index"] == pytest.approx(4 * 4 * 0.5 / (4 * 0.5 + 4))
    for bad in (0.0, 1.0):
        with pytest.raises(InvalidParameter):
            bounds.lipschitz_bound(cert, [1.0], [1.1], 1.0, "uniform", delta=bad)
    with pytest.raises(InvalidParameter):
        bounds.lipschitz_bound(cert, [1.0], [1.1], 2.0)


def test_lipschitz_ramp_uses_quadrature_when_rate_is_not_constant():
    gl = models.catalog_get("ginzburg_landau", eta=1.0)
    cert = models.coupling_certificate(gl, 4.0, 4.0, envelope=False)
    varying = dataclasses.replace(cert, ell=lambda t: np.asarray(t) * 2.0)
    assert math.isclose(bounds.lipschitz_bound(varying, [0.0], [1.0], 1.0).value, math.e,
                        rel_tol=1e-11)


def test_ou_lipschitz_with_lyapunov_terms():
    ou = models.catalog_get("ou", theta=1.0, sigma=1.0)
    cert = models.coupling_certificate(ou, 4.0, 4.0)
    b = bounds.lipschitz_bound(cert, [0.0], [1.0], 1.0)
    # ell = 0, ramp gives beta0 / (2 q0), V0 factor exp((0 + 0.5) / (2 q0)), q0 = 8
    assert math.isclose(b.value, math.exp(0.5 / 16) * math.exp(0.5 / 16), rel_tol=1e-12)
    check_product(b)


# ---------------------------------------------------------- temporal / Holder

def ou_coupling(**kw):
    return models.coupling_certificate(models.catalog_get("ou", theta=1.0, sigma=1.0), 4.0, 4.0,
                                       **kw)


def test_temporal_zero_window():
    assert bounds.temporal_regularity_bound(ou_coupling(), [0.0], 1.0).value == 0.0


def test_temporal_linear_in_c():
    cert = ou_coupling()
    a = bounds.temporal_regularity_bound(cert, [0.0], 0.5, p=2.0)
    b = bounds.temporal_regularity_bound(dataclasses.replace(cert, c=2 * cert.c), [0.0], 0.5, p=2.0)
    assert b.value == pytest.approx(2 * a.value, rel=1e-15)
    # c = sqrt 2, gamma = 1/2, beta0 = 1/2: (1 + 1/2)^(1/2) (1 + 2) sqrt(1/2)
    assert math.isclose(a.value, math.sqrt(2) * math.sqrt(1.5) * 3 * math.sqrt(0.5), rel_tol=1e-12)


def test_temporal_errors():
    with pytest.raises(InvalidParameter):
        bounds.temporal_regularity_bound(ou_coupling(), [0.0], 0.5, p=1.0)
    with pytest.raises(NotEvaluable):
        bounds.temporal_regularity_bound(ou_coupling(envelope=False), [0.0], 0.5)


times_ = st.floats(0.0, 1.0)


@given(t1=times_, t2=times_, x1=st.floats(-2, 2), x2=st.floats(-2, 2))
def test_holder_symmetric_in_time(t1, t2, x1, x2):
    cert = ou_coupling()
    a = bounds.holder_bound(cert, [x1], [x2], t1, t2)
    b = bounds.holder_bound(cert, [x1], [x2], t2, t1)
    assert a.value == b.value
    check_product(a)


def test_holder_degenerate_axes():
    cert = ou_coupling()
    assert bounds.holder_bound(cert, [0.3], [0.3], 0.4, 0.4).value == 0.0
    same_time = bounds.holder_bound(cert, [0.0], [0.2], 0.7, 0.7)
    assert same_time.value == bounds.lipschitz_bound(cert, [0.0], [0.2], 0.7).value
    same_start = bounds.holder_bound(cert, [0.2], [0.2], 0.5, 0.75)
    assert same_start.value == bounds.temporal_regularity_bound(cert, [0.2], 0.75, 1.0,
                                                                p=2.0).value


def test_holder_display_form_is_weaker():
    cert = ou_coupling()
    sharp = bounds.holder_bound(cert, [0.0], [0.2], 0.5, 0.75)
    display = bounds.holder_bound(cert, [0.0], [0.2], 0.5, 0.75, form="display")
    assert display.value >= sharp.value


def test_holder_index_precondition():
    cert = models.coupling_certificate(models.catalog_get("ou"), 2.0, 2.0)
    with pytest.raises(InvalidParameter):
        bounds.holder_bound(cert, [0.0], [0.1], 0.2, 0.3)


# -------------------------------------------------------------- perturbation

OU_ENV = LipschitzEnvelope(-1.0, 0.0)


def test_zero_mismatch_gives_zero():
    data = MismatchData(2.0, 0.0, 0.0)
    assert bounds.perturbation_bound(OU_ENV, data, 1.0).value == 0.0
    assert bounds.perturbation_bound(OU_ENV, data, 1.0, delta=0.25).value == 0.0


def test_ou_delta_quarter_theta():
    data = MismatchData(2.0, 0.01, 0.0)
    b = bounds.perturbation_bound(OU_ENV, data, 1.0, delta=0.25)
    assert dict(b.factors)["envelope"] == 1.0
    assert math.isclose(b.value, math.sqrt(2 * 0.25 * 0.01), rel_tol=1e-14)


@given(d1=st.floats(0.25, 100.0), d2=st.floats(0.25, 100.0))
def test_nondecreasing_in_delta_past_quarter_theta(d1, d2):
    data = MismatchData(2.0, 0.01, 0.0)
    lo, hi = sorted((d1, d2))
    assert (bounds.perturbation_bound(OU_ENV, data, 1.0, delta=lo).value
            <= bounds.perturbation_bound(OU_ENV, data, 1.0, delta=hi).value)


def test_optimised_delta_is_a_minimum():
    data = MismatchData(2.0, 0.01, 0.0, initial_distance=0.05)
    env = LipschitzEnvelope(0.3, 0.0)
    best = bounds.perturbation_bound(env, data, 1.0)
    grid = np.exp(np.linspace(math.log(1e-4), math.log(1e3), 400))
    values = [bounds.perturbation_bound(env, data, 1.0, delta=d).value for d in grid]
    assert best.value <= min(values) * (1 + 1e-6)
    assert 1e-6 <= best.details["delta"] <= 1e3


def test_eps_conventions():
    data = MismatchData(4.0, 0.01, 0.02)
    gbm_env = LipschitzEnvelope(0.05, 0.2)
    with pytest.raises(NotEvaluable, match="vacuous"):
        bounds.perturbation_bound(gbm_env, data, 1.0, eps=0.0, delta=1.0)
    with pytest.raises(NotEvaluable):
        bounds.perturbation_bound(gbm_env, data, 1.0, eps=math.inf, delta=1.0)
    # exact sigma match makes eps = 0 admissible
    ok = bounds.perturbation_bound(OU_ENV, MismatchData(4.0, 0.01, 0.0), 1.0, eps=0.0, delta=1.0)
    assert math.isfinite(ok.value)
    finite = bounds.perturbation_bound(gbm_env, data, 1.0, eps=1.0, delta=1.0)
    # diffusion weight (p-1)/2 (1 + 1/eps) = 3, envelope rate 0.05 + 2 * 1.5 * 0.04 + 0.25
    core = math.sqrt(2 * (0.01 + 3 * 0.02))
    assert math.isclose(finite.value, core * math.exp(0.05 + 0.12 + 0.25), rel_tol=1e-12)


def test_perturbation_uniform_mode():
    rng = np.random.default_rng(0)
    drift = rng.exponential(0.01, 1000)
    data = MismatchData(4.0, float(drift.mean()), 0.0, per_path_drift=drift,
                        per_path_diffusion=np.zeros(1000))
    b = bounds.perturbation_bound(OU_ENV, data, 1.0, delta=0.25, mode="uniform", q3=2.0)
    core = math.sqrt(np.mean(2 * 0.25 * drift))
    assert math.isclose(dict(b.factors)["core"], core, rel_tol=1e-12)
    check_product(b)
    with pytest.raises(InvalidParameter):
        bounds.perturbation_bound(OU_ENV, data, 1.0, mode="uniform", q3=4.0)
    with pytest.raises(InvalidParameter):
        bounds.perturbation_bound(OU_ENV, MismatchData(4.0, 0.1, 0.0), 1.0, delta=1.0,
                                  mode="uniform", q3=2.0)


def test_perturbation_parameter_errors():
    with pytest.raises(InvalidParameter):
        bounds.perturbation_bound(OU_ENV, MismatchData(1.5, 0.1, 0.0), 1.0)
    with pytest.raises(InvalidParameter):
        bounds.perturbation_bound(OU_ENV, MismatchData(2.0, 0.1, 0.0), 1.0, delta=-1.0)
    with pytest.raises(InvalidParameter):
        bounds.perturbation_bound(OU_ENV, MismatchData(2.0, 0.1, 0.0), 1.0, eps=-1.0)
