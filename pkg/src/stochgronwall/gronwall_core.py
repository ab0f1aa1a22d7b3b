"""Discrete checkers for the two pathwise building blocks.

* The nonlinear Gronwall-Bellman-Opial inequality: if
  ``x_s^p <= x_0^p + p int_0^s x_r^(p-1) beta_r dr`` for all ``s`` then
  ``x_t <= x_0 + int_0^t beta_r dr``.
* The exponential integrating-factor identity for ``V(t, X_t)``, evaluated
  with discrete sums along simulated paths.

Deterministic time integrals use the trapezoidal rule; stochastic integrals
are left-point (Ito) sums.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter
from .models import ItoModel, TestFunction
from .simulate import PathBatch


@dataclass(frozen=True)
class GridFunction:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or v.shape != t.shape:
            raise InvalidParameter("times and values must be 1-D of equal length")
        if t.size < 1 or t[0] != 0.0:
            raise InvalidParameter("times must start at 0")
        if np.any(np.diff(t) <= 0) or not np.all(np.isfinite(t)):
            raise InvalidParameter("times must be finite and strictly increasing")
        if not np.all(np.isfinite(v)):
            raise InvalidParameter("values must be finite")
        if np.any(v < 0):
            raise InvalidParameter("values must be nonnegative")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def cumulative_integral(self) -> np.ndarray:
        """Trapezoidal ``int_0^{t_k}`` at every node."""
        incr = 0.5 * np.diff(self.times) * (self.values[1:] + self.values[:-1])
        return np.concatenate([[0.0], np.cumsum(incr)])

    def integral_to(self, t: float) -> float:
        if not (0.0 <= t <= self.times[-1]):
            raise InvalidParameter(f"t={t} outside the grid [0, {self.times[-1]}]")
        cum = self.cumulative_integral()
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        if k >= len(self.times) - 1:
            return float(cum[-1])
        t0, t1 = self.times[k], self.times[k + 1]
        v0, v1 = self.values[k], self.values[k + 1]
        vt = v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        return float(cum[k] + 0.5 * (t - t0) * (v0 + vt))


@dataclass(frozen=True)
class OpialInstance:
    p: float
    x: GridFunction
    beta: GridFunction

    def __post_init__(self):
        if not self.p > 1.0:
            raise InvalidParameter("p must exceed 1")
        if not np.array_equal(self.x.times, self.beta.times):
            raise InvalidParameter("x and beta must share a grid")


@dataclass(frozen=True)
class OpialResult:
    hypothesis_ok: bool
    conclusion_ok: bool
    max_violation: float


def opial_conclusion(x0: float, beta: GridFunction, t: float) -> float:
    """``x0 + int_0^t beta``."""
    if x0 < 0:
        raise InvalidParameter("x0 must be nonnegative")
    return x0 + beta.integral_to(t)


def opial_check(inst: OpialInstance, grid_tol: float) -> OpialResult:
    """Check hypothesis and conclusion at every node.

    The hypothesis is compared in the units of ``x``: the slack at node ``s``
    is ``x_s - (x_0^p + p int x^(p-1) beta)^(1/p)``, so that a grid tolerance
    proportional to the step size is meaningful for every ``p``.
    """
    p = inst.p
    x = inst.x.values
    forcing = GridFunction(inst.x.times, x ** (p - 1.0) * inst.beta.values)
    rhs_p = x[0] ** p + p * forcing.cumulative_integral()
    # exact equality in p-th powers must not turn into root round-off
    hyp_slack = np.where(x ** p == rhs_p, 0.0, x - rhs_p ** (1.0 / p))
    concl_slack = x - (x[0] + inst.beta.cumulative_integral())
    hyp_ok = bool(np.all(hyp_slack <= grid_tol))
    concl_ok = bool(np.all(concl_slack <= grid_tol))
    worst = float(max(hyp_slack.max(), concl_slack.max()))
    return OpialResult(hyp_ok, concl_ok, worst)


def equality_instance(p: float, x0: float, beta: GridFunction) -> OpialInstance:
    """Instance with ``x`` solving ``x' = beta`` (trapezoidal), the equality case."""
    x = x0 + beta.cumulative_integral()
    return OpialInstance(p, GridFunction(beta.times, x), beta)


def integrating_factor_residual(model: ItoModel, V: TestFunction, chi: GridFunction,
                                paths: PathBatch) -> float:
    """RMS over paths of ``LHS - RHS`` of the integrating-factor identity at ``T``.

    With ``E_t = exp(int_0^t chi)`` the identity reads

        V(T, X_T) / E_T = V(0, X_0) + int (dV - chi V dt) / E_t

    where ``dV`` is the Ito differential of ``V(t, X_t)``.  The ``dW`` part is
    a left-point sum over the stored increments, the ``dt`` part a
    trapezoidal sum.
    """
    if paths.trajectories is None or paths.increments is None:
        raise InvalidParameter("integrating_factor_residual needs stored trajectories "
                               "and Brownian increments")
    times = paths.times
    if chi.times.shape != times.shape or not np.allclose(chi.times, times, rtol=0,
                                                             atol=1e-12 * times[-1]):
        raise InvalidParameter("chi must live on the simulation grid")
    traj = paths.trajectories
    dW = paths.increments
    n, K1, d = traj.shape
    K = K1 - 1
    log_E = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(times) * (chi.values[1:]
                                                                     + chi.values[:-1]))])
    inv_E = np.exp(-log_E)
    drift_terms = np.empty((n, K1))
    stoch = np.zeros(n)
    for k in range(K1):
        t = times[k]
        x = traj[:, k]
        g = V.grad(t, x)
        H = V.hess(t, x)
        mu = model.mu(t, x)
        sig = model.sigma(t, x)
        gen = (V.dt(t, x) + np.einsum("ni,ni->n", g, mu)
               + 0.5 * np.einsum("nij,nik,njk->n", H, sig, sig))
        drift_terms[:, k] = (gen - chi.values[k] * V.value(t, x)) * inv_E[k]
        if k < K:
            stoch += np.einsum("ni,nij,nj->n", g, sig, dW[:, k]) * inv_E[k]
    dt = np.diff(times)
    ds_sum = np.sum(0.5 * dt * (drift_terms[:, 1:] + drift_terms[:, :-1]), axis=1)
    lhs = V.value(times[-1], traj[:, -1]) * inv_E[-1]
    rhs = V.value(0.0, traj[:, 0]) + stoch + ds_sum
    return float(math.sqrt(np.mean((lhs - rhs) ** 2)))


def loglog_slope(hs, values) -> float:
    """Least-squares slope of ``log(values)`` against ``log(hs)``."""
    hs = np.asarray(hs, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0):
        raise InvalidParameter("log-log slope needs positive values")
    return float(np.polyfit(np.log(hs), np.log(values), 1)[0])
