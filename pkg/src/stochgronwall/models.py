"""Finite-dimensional Ito models and the certificates attached to them.

States are handled in batches: ``x`` has shape ``(n, d)``, drifts return
``(n, d)`` and diffusions ``(n, d, m)``.  Certificates are plain data (numbers
and vectorised callables); ``check_*`` functions test them pointwise on a
random cloud of states so a misconfigured experiment is caught before any
simulation runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np
from scipy import special

from .errors import FiniteDifferenceMismatch, InvalidParameter, UnknownModel

Array = np.ndarray


def _zeros_like_rows(t, x):
    return np.zeros(np.shape(x)[0])


@dataclass(frozen=True)
class TestFunction:
    """Scalar function ``V(t, x)`` with analytic derivatives, batched over rows."""

    __test__ = False  # not a pytest class

    value: Callable[[float, Array], Array]
    grad: Callable[[float, Array], Array]
    hess: Callable[[float, Array], Array]
    dt: Callable[[float, Array], Array] = _zeros_like_rows
    label: str = "V"

    @classmethod
    def quadratic(cls, eps: float) -> "TestFunction":
        """``eps * |x|^2``."""
        return cls(
            value=lambda t, x: eps * np.einsum("ij,ij->i", x, x),
            grad=lambda t, x: 2.0 * eps * x,
            hess=lambda t, x: np.broadcast_to(
                2.0 * eps * np.eye(x.shape[1]), (x.shape[0], x.shape[1], x.shape[1])),
            label=f"{eps:g}|x|^2",
        )

    @classmethod
    def constant(cls, c: float = 0.0) -> "TestFunction":
        return cls(
            value=lambda t, x: np.full(x.shape[0], float(c)),
            grad=lambda t, x: np.zeros_like(x),
            hess=lambda t, x: np.zeros((x.shape[0], x.shape[1], x.shape[1])),
            label=f"{c:g}",
        )

    @classmethod
    def log_quadratic(cls, eps: float) -> "TestFunction":
        """``eps * log(1 + |x|^2)``."""
        def value(t, x):
            return eps * np.log1p(np.einsum("ij,ij->i", x, x))

        def grad(t, x):
            r2 = np.einsum("ij,ij->i", x, x)
            return 2.0 * eps * x / (1.0 + r2)[:, None]

        def hess(t, x):
            r2 = np.einsum("ij,ij->i", x, x)[:, None, None]
            eye = np.eye(x.shape[1])[None]
            outer = np.einsum("ni,nj->nij", x, x)
            return 2.0 * eps * (eye / (1.0 + r2) - 2.0 * outer / (1.0 + r2) ** 2)

        return cls(value=value, grad=grad, hess=hess, label=f"{eps:g}log(1+|x|^2)")


@dataclass(frozen=True)
class ExactOracles:
    pth_moment: Optional[Callable[[float, float], float]] = None
    second_moment: Optional[Callable[[float], float]] = None
    # (t, h, x (n,d), dW (n,m), z (n,m)) -> state after h; z is an auxiliary
    # standard normal independent of dW, used when the exact map needs it
    exact_transition: Optional[Callable[[float, float, Array, Array, Array], Array]] = None


@dataclass(frozen=True)
class LipschitzEnvelope:
    """Constants with <x-y, mu(x)-mu(y)> <= one_sided |x-y|^2 and
    |sigma(x)-sigma(y)|_F <= diffusion |x-y|."""

    one_sided: float
    diffusion: float


@dataclass(frozen=True)
class ItoModel:
    name: str
    d: int
    m: int
    mu: Callable[[float, Array], Array]
    sigma: Callable[[float, Array], Array]
    x0: Array
    domain: Callable[[Array], Array] = lambda x: np.ones(x.shape[0], dtype=bool)
    params: dict = field(default_factory=dict)
    oracles: ExactOracles = ExactOracles()
    lipschitz: Optional[LipschitzEnvelope] = None
    description: str = ""

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float).reshape(self.d)
        object.__setattr__(self, "x0", x0)
        if not bool(self.domain(x0[None])[0]):
            raise InvalidParameter(f"initial state {x0} outside the domain of {self.name}")


# ---------------------------------------------------------------- certificates

@dataclass(frozen=True)
class GrowthCertificate:
    p: float
    alpha: float
    beta: float

    def __post_init__(self):
        if self.p < 2.0:
            raise InvalidParameter("growth certificates need p >= 2")
        if self.alpha < 0.0 or self.beta < 0.0:
            raise InvalidParameter("alpha and beta must be nonnegative")


@dataclass(frozen=True)
class LyapunovCertificate:
    U: TestFunction
    Ubar: Callable[[float, Array], Array]
    alpha: float
    beta: float = 0.0
    label: str = ""


@dataclass(frozen=True)
class CouplingCertificate:
    p: float
    q: float
    q0: float
    q1: float
    ell: Callable[[Array], Array]
    V0: TestFunction
    V1: TestFunction
    Vbar: Callable[[float, Array], Array]
    alpha0: float = 0.0
    alpha1: float = 0.0
    beta0: float = 0.0
    beta1: float = 0.0
    T: float = 1.0
    c: Optional[float] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.p < 2.0:
            raise InvalidParameter("coupling certificates need p >= 2")
        if not math.isclose(1.0 / self.q0 + 1.0 / self.q1, 1.0 / self.q, rel_tol=1e-12):
            raise InvalidParameter("need 1/q0 + 1/q1 = 1/q")
        if min(self.alpha0, self.alpha1, self.beta0, self.beta1) < 0.0:
            raise InvalidParameter("alpha_i, beta_i must be nonnegative")


@dataclass(frozen=True)
class CheckResult:
    ok: bool
    worst_violation: float
    worst_state: Optional[Array]
    part: str = ""

    def __bool__(self):
        return self.ok


# --------------------------------------------------------------------- catalog

def _ou(theta=1.0, sigma=1.0, x0=0.0):
    def mu(t, x):
        return -theta * x

    def sig(t, x):
        return np.full((x.shape[0], 1, 1), float(sigma))

    def second_moment(t):
        return x0 ** 2 * math.exp(-2 * theta * t) + sigma ** 2 * _var_factor(theta, t)

    def pth_moment(t, p):
        mean = x0 * math.exp(-theta * t)
        sd = sigma * math.sqrt(_var_factor(theta, t))
        return _gaussian_abs_moment(mean, sd, p)

    def transition(t, h, x, dw, z):
        # exact OU step sampled jointly with the Brownian increment dw
        decay = math.exp(-theta * h)
        var = _var_factor(theta, h)
        cov = (-math.expm1(-theta * h) / theta) if theta != 0 else h
        resid = max(var - cov ** 2 / h, 0.0)
        noise = cov / h * dw + math.sqrt(resid) * z
        return decay * x + sigma * noise

    return ItoModel(
        name="ou", d=1, m=1, mu=mu, sigma=sig, x0=[x0],
        params=dict(theta=theta, sigma=sigma, x0=x0),
        oracles=ExactOracles(pth_moment, second_moment, transition),
        lipschitz=LipschitzEnvelope(-theta, 0.0),
        description="Ornstein-Uhlenbeck dX = -theta X dt + sigma dW",
    )


def _var_factor(theta, t):
    """(1 - e^{-2 theta t}) / (2 theta), with the theta -> 0 limit t."""
    if theta == 0:
        return t
    return -math.expm1(-2.0 * theta * t) / (2.0 * theta)


def _gaussian_abs_moment(mean, sd, p):
    if sd == 0.0:
        return abs(mean) ** p
    return (sd ** p * 2 ** (p / 2) * special.gamma((p + 1) / 2) / math.sqrt(math.pi)
            * special.hyp1f1(-p / 2, 0.5, -mean ** 2 / (2 * sd ** 2)))


def _gbm(mu=0.05, sigma=0.2, x0=1.0):
    def drift(t, x):
        return mu * x

    def sig(t, x):
        return sigma * x[:, :, None]

    def pth_moment(t, p):
        return abs(x0) ** p * math.exp(p * mu * t + p * (p - 1) * sigma ** 2 * t / 2)

    def transition(t, h, x, dw, z):
        return x * np.exp((mu - 0.5 * sigma ** 2) * h + sigma * dw)

    return ItoModel(
        name="gbm", d=1, m=1, mu=drift, sigma=sig, x0=[x0],
        params=dict(mu=mu, sigma=sigma, x0=x0),
        oracles=ExactOracles(pth_moment, lambda t: pth_moment(t, 2.0), transition),
        lipschitz=LipschitzEnvelope(mu, abs(sigma)),
        description="geometric Brownian motion dX = mu X dt + sigma X dW",
    )


def _ginzburg_landau(eta=1.0, lam=1.0, sigma=1.0, x0=0.5):
    if lam <= 0:
        raise InvalidParameter("Ginzburg-Landau needs lam > 0")

    def drift(t, x):
        return eta * x - lam * x ** 3

    def sig(t, x):
        return np.full((x.shape[0], 1, 1), float(sigma))

    return ItoModel(
        name="ginzburg_landau", d=1, m=1, mu=drift, sigma=sig, x0=[x0],
        params=dict(eta=eta, lam=lam, sigma=sigma, x0=x0),
        lipschitz=LipschitzEnvelope(eta, 0.0),
        description="Ginzburg-Landau dX = (eta X - lam X^3) dt + sigma dW",
    )


CATALOG = {
    "ou": _ou,
    "gbm": _gbm,
    "ginzburg_landau": _ginzburg_landau,
}


def catalog_get(name: str, **params) -> ItoModel:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise UnknownModel(f"unknown model {name!r}; known: {sorted(CATALOG)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise InvalidParameter(f"bad parameters for {name}: {exc}") from None


# ------------------------------------------------------ certificate builders

def growth_certificate(model: ItoModel, p: float) -> GrowthCertificate:
    """Constant (alpha, beta) for the one-sided affine-linear growth condition."""
    prm = model.params
    if model.name == "ou":
        return GrowthCertificate(p, 0.0, abs(prm["sigma"]) * math.sqrt(p - 1.0))
    if model.name == "gbm":
        return GrowthCertificate(p, max(prm["mu"] + (p - 1.0) * prm["sigma"] ** 2 / 2, 0.0), 0.0)
    if model.name == "ginzburg_landau":
        return GrowthCertificate(p, max(prm["eta"], 0.0), abs(prm["sigma"]) * math.sqrt(p - 1.0))
    raise UnknownModel(f"no growth certificate for {model.name}")


def lyapunov_certificate(model: ItoModel, form: Literal["exponential", "moment"] = "exponential",
                         eps: Optional[float] = None) -> LyapunovCertificate:
    """``U = eps |x|^2`` (``eps log(1+|x|^2)`` for GBM) with matching constants.

    The exponential form moves the additive constant of the moment form into
    ``Ubar = -beta`` so that the condition holds with ``alpha`` alone.
    """
    prm = model.params
    if model.name == "ou":
        th, s = prm["theta"], prm["sigma"]
        if th <= 0:
            raise InvalidParameter("OU Lyapunov certificate needs theta > 0")
        eps = min(0.5, th / s ** 2) if eps is None else eps
        U = TestFunction.quadratic(eps)
        beta = eps * s ** 2
    elif model.name == "ginzburg_landau":
        eta, lam, s = prm["eta"], prm["lam"], prm["sigma"]
        eps = 0.5 if eps is None else eps
        U = TestFunction.quadratic(eps)
        quad = 2 * eps * eta + 2 * eps ** 2 * s ** 2
        beta = eps * s ** 2 + max(quad, 0.0) ** 2 / (8 * eps * lam)
    elif model.name == "gbm":
        mu, s = prm["mu"], prm["sigma"]
        eps = 0.5 if eps is None else eps
        U = TestFunction.log_quadratic(eps)
        beta = eps * (2 * abs(mu) + s ** 2 + 2 * eps * s ** 2)
    else:
        raise UnknownModel(f"no Lyapunov certificate for {model.name}")
    if form == "moment":
        return LyapunovCertificate(U, _zeros_like_rows, 0.0, beta, label=f"U={U.label}")
    if form == "exponential":
        return LyapunovCertificate(U, lambda t, x, b=beta: np.full(x.shape[0], -b), 0.0, 0.0,
                                   label=f"U={U.label}, Ubar=-{beta:g}")
    raise InvalidParameter(f"unknown form {form!r}")


def coupling_certificate(model: ItoModel, p: float, q: float, T: float = 1.0,
                         q0: Optional[float] = None, eps: float = 0.5,
                         envelope: bool = True) -> CouplingCertificate:
    """Coupling data for the local Lipschitz / temporal regularity estimates.

    With ``envelope=False`` the Lyapunov functions are dropped (``V_i = 0``),
    which gives the sharpest Lipschitz factor but no growth envelope ``(c, gamma)``.
    """
    prm = model.params
    q0 = 2.0 * q if q0 is None else q0
    q1 = 1.0 / (1.0 / q - 1.0 / q0)
    zero = TestFunction.constant(0.0)
    if not envelope and model.name in ("ou", "ginzburg_landau"):
        ell = 0.0 if model.name == "ou" else max(prm["eta"], 0.0)
        return CouplingCertificate(p, q, q0, q1, _const_fn(ell), zero, zero, _zeros_like_rows, T=T)
    if model.name == "gbm":
        ell = max(prm["mu"] + (p - 1.0) * prm["sigma"] ** 2 / 2, 0.0)
        return CouplingCertificate(p, q, q0, q1, _const_fn(ell), zero, zero, _zeros_like_rows, T=T)
    if model.name == "ou":
        th, s = prm["theta"], prm["sigma"]
        V0 = TestFunction.quadratic(eps)
        # -2 eps th x^2 + eps s^2 + 2 eps^2 s^2 x^2 <= eps s^2 when eps <= th / s^2
        if eps > th / s ** 2:
            raise InvalidParameter("need eps <= theta / sigma^2")
        c = max(th / math.sqrt(eps), abs(s))
        return CouplingCertificate(p, q, q0, q1, _const_fn(0.0), V0, zero, _zeros_like_rows,
                                   beta0=eps * s ** 2, T=T, c=c, gamma=0.5)
    if model.name == "ginzburg_landau":
        eta, lam, s = prm["eta"], prm["lam"], prm["sigma"]
        V0 = TestFunction.quadratic(eps)
        quad = 2 * eps * eta + 2 * eps ** 2 * s ** 2
        beta0 = eps * s ** 2 + max(quad, 0.0) ** 2 / (8 * eps * lam)
        # |eta x| <= eta/sqrt(eps) (1+eps x^2)^{1/2}, |lam x^3| <= lam eps^{-3/2} (1+eps x^2)^{3/2}
        c = max(abs(eta) / math.sqrt(eps) + lam / eps ** 1.5, abs(s))
        return CouplingCertificate(p, q, q0, q1, _const_fn(max(eta, 0.0)), V0, zero,
                                   _zeros_like_rows, beta0=beta0, T=T, c=c, gamma=1.5)
    raise UnknownModel(f"no coupling certificate for {model.name}")


def _const_fn(value):
    def ell(t):
        return np.full(np.shape(t), float(value))
    ell.constant = float(value)
    return ell


# ------------------------------------------------------------------- sampling

@dataclass(frozen=True)
class StateSampler:
    """Cloud of states: uniform directions, log-uniform radii, optional origin."""

    n: int = 10_000
    r_min: float = 1e-6
    r_max: float = 1e3
    T: float = 1.0
    n_times: int = 5
    include_origin: bool = True
    seed: int = 0

    def states(self, d: int) -> Array:
        rng = np.random.default_rng([self.seed, 0x51A7E])
        dirs = rng.standard_normal((self.n, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = np.exp(rng.uniform(math.log(self.r_min), math.log(self.r_max), self.n))
        x = dirs * radii[:, None]
        if self.include_origin:
            x = np.vstack([np.zeros((1, d)), x])
        return x

    def pairs(self, d: int) -> tuple[Array, Array]:
        """Half independent pairs, half near-diagonal pairs; x != y."""
        x = self.states(d)
        rng = np.random.default_rng([self.seed, 0x9A125])
        y = x[rng.permutation(x.shape[0])]
        half = x.shape[0] // 2
        off = rng.standard_normal((half, d))
        off *= (np.exp(rng.uniform(math.log(1e-6), math.log(1.0), half))
                / np.linalg.norm(off, axis=1))[:, None]
        y[:half] = x[:half] + off * np.maximum(1.0, np.linalg.norm(x[:half], axis=1))[:, None]
        same = np.all(x == y, axis=1)
        y[same] += 1e-3
        return x, y

    def times(self) -> Array:
        return np.linspace(0.0, self.T, self.n_times)


def _verdict(lhs, rhs, states, part, scale=None):
    """Worst signed slack; ``scale`` is the operand magnitude that bounds
    cancellation error when lhs is formed from differences."""
    slack = lhs - rhs
    tol = 1e-12 * (np.abs(lhs) + np.abs(rhs)) + 1e-300
    if scale is not None:
        tol = tol + 1e-12 * scale
    excess = slack - tol
    i = int(np.argmax(excess))
    ok = bool(excess[i] <= 0.0)
    return CheckResult(ok, float(slack[i]), np.array(states[i]), part)


def _worst(results):
    bad = [r for r in results if not r.ok]
    if bad:
        return max(bad, key=lambda r: r.worst_violation)
    return max(results, key=lambda r: r.worst_violation)


def _quotient(num, den):
    """num / den with the 0/0 = 0 convention."""
    out = np.zeros_like(num)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


def _in_domain(model, x):
    inside = model.domain(x)
    if not np.all(inside):
        raise InvalidParameter("sampler produced states outside the model domain")


def growth_lhs(model: ItoModel, t: float, x: Array, p: float) -> Array:
    """<x, mu> + |sigma|_F^2 / 2 + (p-2)/2 |sigma^T x|^2 / |x|^2."""
    mu = model.mu(t, x)
    sig = model.sigma(t, x)
    inner = np.einsum("ni,ni->n", x, mu)
    frob = np.einsum("nij,nij->n", sig, sig)
    sx = np.einsum("nij,ni->nj", sig, x)
    quot = _quotient(np.einsum("nj,nj->n", sx, sx), np.einsum("ni,ni->n", x, x))
    return inner + 0.5 * frob + 0.5 * (p - 2.0) * quot


def check_growth_certificate(model: ItoModel, cert: GrowthCertificate,
                             sampler: StateSampler = StateSampler(),
                             states: Optional[Array] = None) -> CheckResult:
    """Pointwise check of the one-sided affine-linear growth condition.

    ``states`` overrides the sampler's cloud.
    """
    x = sampler.states(model.d) if states is None else np.asarray(states, dtype=float)
    _in_domain(model, x)
    results = []
    for t in sampler.times():
        lhs = growth_lhs(model, t, x, cert.p)
        rhs = cert.alpha * np.einsum("ni,ni->n", x, x) + 0.5 * cert.beta ** 2
        results.append(_verdict(lhs, rhs, x, f"growth t={t:g}"))
    return _worst(results)


def finite_difference_check(U: TestFunction, t: float, x: Array, rtol: float = 1e-5) -> None:
    """Compare analytic gradient/Hessian with central differences; raise on mismatch."""
    n, d = x.shape
    scale = np.maximum(1.0, np.linalg.norm(x, axis=1))
    h = 1e-4 * scale
    g = U.grad(t, x)
    H = U.hess(t, x)
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        step = h[:, None] * e
        fd_g = (U.value(t, x + step) - U.value(t, x - step)) / (2 * h)
        fd_H = (U.grad(t, x + step) - U.grad(t, x - step)) / (2 * h)[:, None]
        _compare(fd_g, g[:, i], rtol, f"gradient component {i}")
        _compare(fd_H, H[:, :, i], rtol, f"Hessian column {i}")


def _compare(fd, an, rtol, what):
    fd = np.asarray(fd)
    an = np.asarray(an)
    ref = np.maximum(np.maximum(np.abs(fd), np.abs(an)), 1e-6)
    rel = np.abs(fd - an) / ref
    if np.any(rel > rtol):
        raise FiniteDifferenceMismatch(
            f"analytic {what} disagrees with finite differences (max rel err {rel.max():.2e})")


def lyapunov_lhs(model: ItoModel, cert: LyapunovCertificate, t: float, x: Array,
                 include_ubar: bool) -> Array:
    U = cert.U
    g = U.grad(t, x)
    H = U.hess(t, x)
    mu = model.mu(t, x)
    sig = model.sigma(t, x)
    gen = (U.dt(t, x) + np.einsum("ni,ni->n", g, mu)
           + 0.5 * np.einsum("nij,nik,njk->n", H, sig, sig))
    gs = np.einsum("ni,nij->nj", g, sig)
    out = gen + 0.5 * math.exp(-cert.alpha * t) * np.einsum("nj,nj->n", gs, gs)
    if include_ubar:
        out = out + cert.Ubar(t, x)
    return out


def check_lyapunov_certificate(model: ItoModel, cert: LyapunovCertificate,
                               form: Literal["exponential", "moment"] = "exponential",
                               sampler: StateSampler = StateSampler(),
                               fd_points: int = 256,
                               states: Optional[Array] = None) -> CheckResult:
    """Pointwise check of the exponential-moment (``form="exponential"``) or
    moment (``form="moment"``) Lyapunov condition.

    Derivatives are validated first; a mismatch raises
    :class:`FiniteDifferenceMismatch` rather than reporting a violation.
    """
    x = sampler.states(model.d) if states is None else np.asarray(states, dtype=float)
    _in_domain(model, x)
    sub = x[np.linspace(0, x.shape[0] - 1, min(fd_points, x.shape[0])).astype(int)]
    for t in sampler.times()[[0, -1]]:
        finite_difference_check(cert.U, t, sub[np.linalg.norm(sub, axis=1) <= 1e2])
    results = []
    for t in sampler.times():
        lhs = lyapunov_lhs(model, cert, t, x, include_ubar=(form == "exponential"))
        rhs = cert.alpha * cert.U.value(t, x)
        if form == "moment":
            rhs = rhs + cert.beta
        elif form != "exponential":
            raise InvalidParameter(f"unknown form {form!r}")
        results.append(_verdict(lhs, rhs, x, f"lyapunov[{form}] t={t:g}"))
    return _worst(results)


def coupling_lhs(model: ItoModel, t: float, x: Array, y: Array, p: float) -> Array:
    dx = x - y
    dmu = model.mu(t, x) - model.mu(t, y)
    dsig = model.sigma(t, x) - model.sigma(t, y)
    inner = np.einsum("ni,ni->n", dx, dmu)
    frob = np.einsum("nij,nij->n", dsig, dsig)
    sx = np.einsum("nij,ni->nj", dsig, dx)
    quot = _quotient(np.einsum("nj,nj->n", sx, sx), np.einsum("ni,ni->n", dx, dx))
    return inner + 0.5 * frob + 0.5 * (p - 2.0) * quot


def check_coupling_certificate(model: ItoModel, cert: CouplingCertificate,
                               sampler: StateSampler = StateSampler()) -> CheckResult:
    """Coupled one-sided condition, both V_i conditions, and the growth envelope."""
    x, y = sampler.pairs(model.d)
    _in_domain(model, x)
    _in_domain(model, y)
    states = sampler.states(model.d)
    results = []
    for V in (cert.V0, cert.V1):
        finite_difference_check(V, 0.0, states[np.linalg.norm(states, axis=1) <= 1e2][:256])
    for t in sampler.times():
        lhs = coupling_lhs(model, t, x, y, cert.p)
        dist2 = np.einsum("ni,ni->n", x - y, x - y)
        rate = (cert.ell(np.array(t))
                + (cert.V0.value(t, x) + cert.V0.value(t, y))
                / (2 * cert.q0 * cert.T * math.exp(cert.alpha0 * t))
                + (cert.Vbar(t, x) + cert.Vbar(t, y)) / (2 * cert.q1 * math.exp(cert.alpha1 * t)))
        results.append(_verdict(lhs, dist2 * rate, np.hstack([x, y]), f"coupling t={t:g}",
                                _pair_scale(model, t, x, y)))
        for i, (V, a, b) in enumerate(((cert.V0, cert.alpha0, cert.beta0),
                                       (cert.V1, cert.alpha1, cert.beta1))):
            g = V.grad(t, states)
            mu = model.mu(t, states)
            sig = model.sigma(t, states)
            gs = np.einsum("ni,nij->nj", g, sig)
            lhs_v = (np.einsum("ni,ni->n", g, mu)
                     + 0.5 * np.einsum("nij,nik,njk->n", V.hess(t, states), sig, sig)
                     + np.einsum("nj,nj->n", gs, gs) / (2 * math.exp(a * t)))
            if i == 1:
                lhs_v = lhs_v + cert.Vbar(t, states)
            results.append(_verdict(lhs_v, a * V.value(t, states) + b, states,
                                    f"V{i} t={t:g}"))
        if cert.c is not None:
            mu_n = np.linalg.norm(model.mu(t, states), axis=1)
            sig = model.sigma(t, states)
            sig_n = np.sqrt(np.einsum("nij,nij->n", sig, sig))
            env = cert.c * (1.0 + cert.V0.value(t, states)) ** cert.gamma
            results.append(_verdict(np.maximum(mu_n, sig_n), env, states, f"envelope t={t:g}"))
    return _worst(results)


def _pair_scale(model, t, x, y):
    dist = np.linalg.norm(x - y, axis=1)
    mus = np.linalg.norm(model.mu(t, x), axis=1) + np.linalg.norm(model.mu(t, y), axis=1)
    sigs = (np.sqrt(np.einsum("nij,nij->n", model.sigma(t, x), model.sigma(t, x)))
            + np.sqrt(np.einsum("nij,nij->n", model.sigma(t, y), model.sigma(t, y))))
    return dist * mus + sigs ** 2


def check_lipschitz_envelope(model: ItoModel, env: LipschitzEnvelope,
                             sampler: StateSampler = StateSampler()) -> CheckResult:
    x, y = sampler.pairs(model.d)
    results = []
    for t in sampler.times():
        dx = x - y
        dist2 = np.einsum("ni,ni->n", dx, dx)
        inner = np.einsum("ni,ni->n", dx, model.mu(t, x) - model.mu(t, y))
        scale = _pair_scale(model, t, x, y)
        results.append(_verdict(inner, env.one_sided * dist2, np.hstack([x, y]),
                                f"one-sided t={t:g}", scale))
        dsig = model.sigma(t, x) - model.sigma(t, y)
        frob = np.einsum("nij,nij->n", dsig, dsig)
        results.append(_verdict(frob, env.diffusion ** 2 * dist2, np.hstack([x, y]),
                                f"diffusion t={t:g}", scale))
    return _worst(results)


def self_test(sampler: StateSampler = StateSampler(), p: float = 4.0, q: float = 4.0):
    """Run every applicable certificate check for every default catalog model.

    Returns a list of ``(model, certificate kind, CheckResult)``.
    """
    out = []
    for name in CATALOG:
        model = catalog_get(name)
        out.append((name, "growth", check_growth_certificate(model, growth_certificate(model, p),
                                                              sampler)))
        for form in ("exponential", "moment"):
            cert = lyapunov_certificate(model, form)
            out.append((name, f"lyapunov-{form}",
                        check_lyapunov_certificate(model, cert, form, sampler)))
        out.append((name, "coupling",
                    check_coupling_certificate(model, coupling_certificate(model, p, q), sampler)))
        if model.lipschitz is not None:
            out.append((name, "lipschitz-envelope",
                        check_lipschitz_envelope(model, model.lipschitz, sampler)))
    return out
