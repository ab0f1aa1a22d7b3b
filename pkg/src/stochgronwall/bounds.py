"""Right-hand sides of the moment, exponential-moment, Lipschitz, regularity
and perturbation estimates for constant certificates and deterministic starts.

Every function returns a :class:`BoundValue` whose ``factors`` combine to
``value`` (by product, or by sum for the Hoelder estimate) so that reports
can show where a bound comes from.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from . import constants
from .errors import InvalidParameter, NotEvaluable
from .estimators import lp_norm_estimate
from .models import CouplingCertificate, GrowthCertificate, LipschitzEnvelope, LyapunovCertificate
from .quadrature import integrate


@dataclass(frozen=True)
class BoundValue:
    value: float
    factors: tuple[tuple[str, float], ...]
    inequality_id: str
    combine: Literal["product", "sum"] = "product"
    details: dict = field(default_factory=dict)
    assumptions: tuple[str, ...] = ()

    def recombined(self) -> float:
        vals = [v for _, v in self.factors]
        if self.combine == "sum":
            return math.fsum(vals)
        return math.prod(vals)


def _bound(inequality_id, factors, combine="product", details=None, assumptions=()):
    factors = tuple((name, float(v)) for name, v in factors)
    probe = BoundValue(0.0, factors, inequality_id, combine)
    return BoundValue(probe.recombined(), factors, inequality_id, combine,
                      dict(details or {}), tuple(assumptions))


def _x0(x0) -> np.ndarray:
    return np.atleast_1d(np.asarray(x0, dtype=float))[None, :]


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def discounted_integral(c: float, rate: float, T: float) -> float:
    """``int_0^T c e^{-rate s} ds``."""
    if rate == 0.0:
        return c * T
    return c * (-math.expm1(-rate * T)) / rate


def ramp_discounted_integral(beta: float, alpha: float, t: float) -> float:
    """``int_0^t beta (1 - r/t) e^{-alpha r} dr`` in closed form."""
    if t <= 0.0:
        return 0.0
    z = alpha * t
    if abs(z) < 1e-3:
        # series of (1/z - (1 - e^{-z})/z^2) * t, i.e. t (1/2 - z/6 + z^2/24 - z^3/120)
        return beta * t * (0.5 - z / 6.0 + z * z / 24.0 - z ** 3 / 120.0)
    return beta * ((-math.expm1(-z)) / alpha - (1.0 - (1.0 + z) * math.exp(-z)) / (alpha ** 2 * t))


# ------------------------------------------------------------------ moments

def marginal_moment_bound(cert: GrowthCertificate, x0_norm: float, T: float) -> BoundValue:
    """``e^{alpha T} (|x0|^2 + int_0^T beta^2 e^{-2 alpha s} ds)^(1/2)``."""
    if x0_norm < 0 or T < 0:
        raise InvalidParameter("x0_norm and T must be nonnegative")
    initial = x0_norm ** 2
    integral = discounted_integral(cert.beta ** 2, 2.0 * cert.alpha, T)
    return _bound("marginal_moment",
                  [("exp_factor", math.exp(cert.alpha * T)),
                   ("core", math.hypot(x0_norm, math.sqrt(integral)))],
                  details={"initial": initial, "integral": integral, "p": cert.p},
                  assumptions=(f"growth(p={cert.p:g}, alpha={cert.alpha:g}, beta={cert.beta:g})",))


def uniform_moment_bound(cert: GrowthCertificate, x0_norm: float, T: float, q: float,
                         variant: constants.Variant = "half") -> BoundValue:
    """Marginal bound times the running-supremum constant for ``L^q``, ``0 < q < p``."""
    if not 0.0 < q < cert.p:
        raise InvalidParameter(f"need 0 < q < p = {cert.p}, got q = {q}")
    marg = marginal_moment_bound(cert, x0_norm, T)
    const = constants.sup_constant(cert.p, q, variant)
    return _bound("uniform_moment", marg.factors + (("sup_constant", const.value),),
                  details={**marg.details, "variant": variant,
                           "sup_constant_error": const.abs_error_bound},
                  assumptions=marg.assumptions)


def exp_moment_bound(cert: LyapunovCertificate, x0, mode: Literal["marginal", "uniform"] = "marginal",
                     q: Optional[float] = None) -> BoundValue:
    """``E exp(U(0, X0))`` or, for the supremum in ``L^q``, ``E exp(q U(0, X0))`` times
    ``1/q int_{(1-q)/q}^inf s^q/(s+1)^2 ds + 1``."""
    u0 = float(cert.U.value(0.0, _x0(x0))[0])
    if mode == "marginal":
        return _bound("exp_marginal", [("initial", math.exp(u0))], details={"U0": u0})
    if mode == "uniform":
        if q is None or not 0.0 < q < 1.0:
            raise InvalidParameter("uniform mode needs q in (0, 1)")
        base = constants.sup_constant_base(1.0, q)
        return _bound("exp_uniform", [("initial", math.exp(q * u0)), ("sup_constant", base.value)],
                      details={"U0": u0, "q": q})
    raise InvalidParameter(f"unknown mode {mode!r}")


def poly_from_exp_bound(cert: LyapunovCertificate, x0, p: float, T: float,
                        mode: Literal["marginal", "uniform"] = "marginal",
                        q: Optional[float] = None) -> BoundValue:
    """Moments of ``p + e^{-alpha t} U`` from the moment-form Lyapunov condition.

    marginal: ``E|p + e^{-alpha tau} U|^p <= |p + U0 + J|^p <= p^p exp(U0 + J)``
    uniform:  ``E sup |p + e^{-alpha t} U|^q <= |p + U0 + J|^q base(p, q)^p``

    with ``J = int_0^T beta e^{-alpha s} ds``.  The value is the middle
    (sharper) expression; the outer one is kept in ``details``.
    """
    if p < 1:
        raise InvalidParameter("p must be >= 1")
    u0 = float(cert.U.value(0.0, _x0(x0))[0])
    J = discounted_integral(cert.beta, cert.alpha, T)
    shifted = abs(p + u0 + J)
    if mode == "marginal":
        outer = p ** p * math.exp(u0 + J)
        return _bound("poly_from_exp_marginal", [("middle", shifted ** p)],
                      details={"U0": u0, "J": J, "outer": outer, "p": p})
    if mode == "uniform":
        if q is None or not 0.0 < q < p:
            raise InvalidParameter(f"uniform mode needs 0 < q < p = {p}")
        base = constants.sup_constant_base(p, q)
        return _bound("poly_from_exp_uniform",
                      [("initial", shifted ** q), ("sup_constant", base.value ** p)],
                      details={"U0": u0, "J": J, "p": p, "q": q})
    raise InvalidParameter(f"unknown mode {mode!r}")


# ---------------------------------------------------------- initial values

def _ell_integral(cert: CouplingCertificate, t: float) -> float:
    const = getattr(cert.ell, "constant", None)
    if const is not None:
        return const * t
    return integrate(lambda r: np.asarray(cert.ell(r), dtype=float), 0.0, t, tol=1e-12).value


def _v_factor(cert: CouplingCertificate, x, y) -> float:
    out = 1.0
    for V, qi in ((cert.V0, cert.q0), (cert.V1, cert.q1)):
        out *= math.exp((float(V.value(0.0, _x0(x))[0]) + float(V.value(0.0, _x0(y))[0]))
                        / (2.0 * qi))
    return out


def lipschitz_bound(cert: CouplingCertificate, x, y, t: float,
                    mode: Literal["marginal", "uniform"] = "marginal",
                    delta: Optional[float] = None) -> BoundValue:
    """Strong local Lipschitz bound in the starting point.

    marginal: ``L^{pq/(p+q)}`` norm of ``X_t - Y_t``; uniform: ``L^{pq delta/(p delta + q)}``
    norm of the running supremum of ``|X - Y|`` over ``[0, T]`` (``t`` is ignored).
    """
    dist = float(np.linalg.norm(np.atleast_1d(np.asarray(x, float) - np.asarray(y, float))))
    if mode == "uniform":
        if delta is None or not 0.0 < delta < 1.0:
            raise InvalidParameter("uniform mode needs delta in (0, 1)")
        horizon = cert.T
        index = cert.p * cert.q * delta / (cert.p * delta + cert.q)
    elif mode == "marginal":
        if not 0.0 < t <= cert.T:
            raise InvalidParameter(f"t must lie in (0, T = {cert.T}]")
        horizon = t
        index = cert.p * cert.q / (cert.p + cert.q)
    else:
        raise InvalidParameter(f"unknown mode {mode!r}")
    exponent = (_ell_integral(cert, horizon)
                + ramp_discounted_integral(cert.beta0, cert.alpha0, horizon) / cert.q0
                + discounted_integral(cert.beta1, cert.alpha1, horizon) / cert.q1)
    factors = [("initial", dist), ("exp_factor", math.exp(exponent)),
               ("lyapunov_factor", _v_factor(cert, x, y))]
    if mode == "uniform":
        base = constants.sup_constant_base(1.0, delta)
        factors.append(("sup_constant", base.value ** (1.0 / (2.0 * delta))))
    return _bound(f"lipschitz_{mode}", factors,
                  details={"norm_index": index, "horizon": horizon, "exponent": exponent})


def temporal_regularity_bound(cert: CouplingCertificate, x0, s: float, T: Optional[float] = None,
                              p: Optional[float] = None) -> BoundValue:
    """``L^p`` norm of ``sup_{t in [s, T]} |X_t - X_s|``.

    ``c e^{alpha0 gamma T} (p gamma + V0(x0) + int_0^T beta0 e^{-alpha0 u} du)^gamma
    (sqrt(T) + p) sqrt(T - s)``.
    """
    if cert.c is None or cert.gamma is None:
        raise NotEvaluable("certificate carries no growth envelope (c, gamma)")
    T = cert.T if T is None else T
    p = cert.p if p is None else p
    gamma = cert.gamma
    if p * gamma < 1.0:
        raise InvalidParameter(f"need p * gamma >= 1, got {p * gamma}")
    if not 0.0 <= s <= T:
        raise InvalidParameter("need 0 <= s <= T")
    v0 = float(cert.V0.value(0.0, _x0(x0))[0])
    J = discounted_integral(cert.beta0, cert.alpha0, T)
    return _bound("temporal_regularity", [
        ("c", cert.c),
        ("exp_factor", math.exp(cert.alpha0 * gamma * T)),
        ("lyapunov_term", (p * gamma + v0 + J) ** gamma),
        ("horizon_factor", math.sqrt(T) + p),
        ("window", math.sqrt(T - s)),
    ], details={"p": p, "gamma": gamma, "V0": v0, "J": J})


def holder_bound(cert: CouplingCertificate, x1, x2, t1: float, t2: float,
                 form: Literal["sharp", "display"] = "sharp") -> BoundValue:
    """``L^{pq/(p+q)}`` norm of ``X^{x1}_{t1} - X^{x2}_{t2}`` as temporal term plus
    Lipschitz term.

    ``form="sharp"`` takes the Lipschitz term as the marginal bound at
    ``max(t1, t2)``; ``form="display"`` uses the coarser horizon-``T``
    exponent without the ramp factor.  Both are valid; the sharp one reduces
    exactly to its constituents on the degenerate axes.
    """
    index = cert.p * cert.q / (cert.p + cert.q)
    if index < 2.0 or (cert.gamma is not None and index * cert.gamma < 1.0):
        raise InvalidParameter(f"norm index pq/(p+q) = {index:g} violates the preconditions")
    if not (0.0 <= t1 <= cert.T and 0.0 <= t2 <= cert.T):
        raise InvalidParameter("t1, t2 must lie in [0, T]")
    temporal = temporal_regularity_bound(cert, x1, cert.T - abs(t1 - t2), cert.T, p=index)
    dist = float(np.linalg.norm(np.atleast_1d(np.asarray(x1, float) - np.asarray(x2, float))))
    top = max(t1, t2)
    if dist == 0.0:
        lip_value = 0.0
    elif form == "sharp" and top == 0.0:
        lip_value = dist * _v_factor(cert, x1, x2)
    elif form == "sharp":
        lip_value = lipschitz_bound(cert, x1, x2, top).value
    elif form == "display":
        exponent = (_ell_integral(cert, cert.T)
                    + discounted_integral(cert.beta0, cert.alpha0, cert.T) / cert.q0
                    + discounted_integral(cert.beta1, cert.alpha1, cert.T) / cert.q1)
        lip_value = dist * math.exp(exponent) * _v_factor(cert, x1, x2)
    else:
        raise InvalidParameter(f"unknown form {form!r}")
    return _bound("holder", [("temporal_term", temporal.value), ("lipschitz_term", lip_value)],
                  combine="sum", details={"norm_index": index, "form": form})


# ------------------------------------------------------------- perturbation

@dataclass(frozen=True)
class MismatchData:
    """Mismatch inputs estimated from a perturbed batch.

    ``drift_integral``/``diffusion_integral`` are ``int ||A_t^2||_{L^{p/2}} dt``
    and ``int ||B_t^2||_{L^{p/2}} dt``; the per-path arrays hold ``int A_t^2 dt``
    and ``int B_t^2 dt`` for the supremum bound.
    """

    p: float
    drift_integral: float
    diffusion_integral: float
    per_path_drift: Optional[np.ndarray] = None
    per_path_diffusion: Optional[np.ndarray] = None
    initial_distance: float = 0.0


def _diffusion_weight(p: float, eps: float, diffusion_mismatch: float) -> float:
    if eps == 0.0:
        if diffusion_mismatch > 0.0:
            raise NotEvaluable("vacuous bound: eps = 0 with nonzero diffusion mismatch")
        return 0.0
    inv = 0.0 if math.isinf(eps) else 1.0 / eps
    return 0.5 * (p - 1.0) * (1.0 + inv)


def _envelope_rate(env: LipschitzEnvelope, p: float, eps: float) -> float:
    if env.diffusion == 0.0:
        return env.one_sided
    if math.isinf(eps):
        raise NotEvaluable("eps = inf needs a vanishing diffusion Lipschitz constant")
    return env.one_sided + 0.5 * (1.0 + eps) * (p - 1.0) * env.diffusion ** 2


def _perturbation_value(env, data, T, eps, delta, mode, q3, seed=0):
    p = data.p
    w = _diffusion_weight(p, eps, max(data.diffusion_integral,
                                      0.0 if data.per_path_diffusion is None
                                      else float(np.max(data.per_path_diffusion, initial=0.0))))
    inv4d = 0.0 if math.isinf(delta) else 1.0 / (4.0 * delta)
    if math.isinf(delta):
        if data.drift_integral > 0.0:
            return math.inf, None
        dweight = 0.0
    else:
        dweight = delta
    envelope = _exp(max(_envelope_rate(env, p, eps) + inv4d, 0.0) * T)
    if mode == "marginal":
        core = math.sqrt(data.initial_distance ** 2
                         + 2.0 * (dweight * data.drift_integral + w * data.diffusion_integral))
        return core * envelope, [("core", core), ("envelope", envelope)]
    if data.per_path_drift is None or data.per_path_diffusion is None:
        raise InvalidParameter("supremum bound needs per-path mismatch integrals")
    samples = np.sqrt(data.initial_distance ** 2
                      + 2.0 * (dweight * data.per_path_drift + w * data.per_path_diffusion))
    core = lp_norm_estimate(samples, q3, n_bootstrap=0, seed=seed).point
    const = constants.sup_constant(p, q3, "half").value
    return core * const * envelope, [("core", core), ("sup_constant", const),
                                     ("envelope", envelope)]


def perturbation_bound(env: LipschitzEnvelope, data: MismatchData, T: float,
                       eps: float = math.inf, delta: Optional[float] = None,
                       mode: Literal["marginal", "uniform"] = "marginal",
                       q3: Optional[float] = None) -> BoundValue:
    """Distance between the SDE solution and an Ito process with coefficients ``a, b``.

    The exponential factor uses the deterministic envelope
    ``exp(max(L + (1+eps)(p-1) L_sigma^2 / 2 + 1/(4 delta), 0) T)``; mismatch
    norms are combined with Minkowski's inequality in ``L^{p/2}``.  When
    ``delta`` is None it is chosen by bounded scalar minimisation over
    ``(1e-6, 1e3]`` and reported as ``details["delta"]``.
    """
    p = data.p
    if p < 2:
        raise InvalidParameter("p must be >= 2")
    if eps < 0:
        raise InvalidParameter("eps must be in [0, inf]")
    if mode == "uniform" and (q3 is None or not 0.0 < q3 < p):
        raise InvalidParameter(f"uniform mode needs 0 < q3 < p = {p}")
    if mode not in ("marginal", "uniform"):
        raise InvalidParameter(f"unknown mode {mode!r}")
    if delta is None:
        if data.drift_integral == 0.0 and (data.per_path_drift is None
                                          or not np.any(data.per_path_drift)):
            delta = math.inf
        else:
            res = minimize_scalar(
                lambda ld: _perturbation_value(env, data, T, eps, math.exp(ld), mode, q3)[0],
                bounds=(math.log(1e-6), math.log(1e3)), method="bounded",
                options={"xatol": 1e-10})
            delta = float(math.exp(res.x))
    elif not delta > 0:
        raise InvalidParameter("delta must be positive")
    value, factors = _perturbation_value(env, data, T, eps, delta, mode, q3)
    if factors is None:
        return BoundValue(math.inf, (("core", math.inf),), f"perturbation_{mode}",
                          details={"delta": delta, "eps": eps})
    return _bound(f"perturbation_{mode}", factors,
                  details={"delta": delta, "eps": eps, "p": p, "q3": q3},
                  assumptions=(f"one-sided L={env.one_sided:g}, L_sigma={env.diffusion:g}",))
