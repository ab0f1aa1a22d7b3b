"""Monte-Carlo estimates of the left-hand sides with bootstrap intervals."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from scipy import stats

from .errors import InvalidParameter
from .models import LyapunovCertificate
from .simulate import PathBatch, PerturbedBatch

BOOTSTRAP_STREAM = 0xB007
EXP_CLAMP = 700.0
GRID_SUP_FLAG = "grid-sup (downward-biased)"
CLAMP_FLAG = "exp-clamp"
HEAVY_TAIL_FLAG = "heavy-tail"
DISQUALIFYING = frozenset({CLAMP_FLAG})


@dataclass(frozen=True)
class MomentEstimate:
    q: float
    point: float
    ci_lo: float
    ci_hi: float
    level: float
    n: int
    flags: tuple = ()

    def scaled(self, c: float, flags: tuple = ()) -> "MomentEstimate":
        return MomentEstimate(self.q, self.point * c, self.ci_lo * c, self.ci_hi * c,
                              self.level, self.n, self.flags + flags)


def _bootstrap_means(x: np.ndarray, n_boot: int, seed: int, block: int = 64) -> np.ndarray:
    n = x.size
    rng = np.random.Generator(np.random.Philox(key=np.array([seed & ((1 << 64) - 1),
                                                             BOOTSTRAP_STREAM], dtype=np.uint64)))
    out = np.empty(n_boot)
    rows = max(1, min(block, (1 << 22) // max(n, 1)))
    for lo in range(0, n_boot, rows):
        hi = min(lo + rows, n_boot)
        idx = rng.integers(0, n, size=(hi - lo, n), dtype=np.int64)
        out[lo:hi] = x[idx].mean(axis=1)
    return out


def lp_norm_estimate(samples, q: float, level: float = 0.99, n_bootstrap: int = 2000,
                     seed: int = 0) -> MomentEstimate:
    """``(mean s_i^q)^(1/q)`` with a percentile-bootstrap interval.

    Resampling acts on indices with a seeded generator, so the interval is
    equivariant under rescaling of the samples.
    """
    s = np.asarray(samples, dtype=float).ravel()
    if not q > 0:
        raise InvalidParameter(f"q must be positive, got {q}")
    if not 0 < level < 1:
        raise InvalidParameter("level must lie in (0, 1)")
    if s.size == 0:
        raise InvalidParameter("no samples")
    if not np.all(np.isfinite(s)):
        raise InvalidParameter("samples contain non-finite values")
    if np.any(s < 0):
        raise InvalidParameter("samples must be nonnegative")
    if np.all(s == s[0]):
        point = float(s[0])
        return MomentEstimate(q, point, point, point, level, s.size)
    powered = s ** q
    point = float(np.mean(powered) ** (1.0 / q))
    if s.size < 2 or n_bootstrap < 1:
        return MomentEstimate(q, point, point, point, level, s.size)
    means = _bootstrap_means(powered, n_bootstrap, seed)
    alpha = 1.0 - level
    lo, hi = np.quantile(means, [alpha / 2, 1 - alpha / 2])
    ci_lo = min(float(lo) ** (1.0 / q), point)
    ci_hi = max(float(hi) ** (1.0 / q), point)
    return MomentEstimate(q, point, ci_lo, ci_hi, level, s.size)


def _valid(batch: PathBatch, values):
    return np.asarray(values)[batch.valid()]


def sup_lp_estimate(batch: PathBatch, q: float, **kw) -> MomentEstimate:
    """L^q norm of the running grid supremum of ``|X|``."""
    est = lp_norm_estimate(_valid(batch, batch.sup_norms), q, **kw)
    return est.scaled(1.0, (GRID_SUP_FLAG,))


def terminal_lp_estimate(batch: PathBatch, q: float, **kw) -> MomentEstimate:
    """L^q norm of ``|X_tau|`` with ``tau = min(T, exit)``."""
    norms = np.linalg.norm(batch.terminal_states, axis=1)
    return lp_norm_estimate(_valid(batch, norms), q, **kw)


def exp_exponents(times: np.ndarray, traj: np.ndarray, exit_steps: np.ndarray,
                  cert: LyapunovCertificate, mode: Literal["marginal", "uniform"],
                  q: Optional[float] = None) -> np.ndarray:
    """Per-path logarithm of the exponential functional.

    marginal: ``e^{-alpha tau} U(tau, X_tau) + int_0^tau e^{-alpha s} Ubar ds``
    uniform:  ``max_t q (e^{-alpha t} U(t, X_t) + int_0^t e^{-alpha s} Ubar ds)``
    over grid nodes ``t <= tau``; the time integral is a left-point sum.
    """
    n, K1, _ = traj.shape
    last = np.minimum(exit_steps, K1) - 1
    dt = np.diff(times)
    running = np.zeros(n)
    best = np.full(n, -np.inf)
    terminal = np.zeros(n)
    for k in range(K1):
        t = times[k]
        x = traj[:, k]
        val = math.exp(-cert.alpha * t) * cert.U.value(t, x) + running
        active = k <= last
        best = np.where(active, np.maximum(best, val), best)
        terminal = np.where(k == last, val, terminal)
        if k < K1 - 1:
            running = running + np.where(active & (k < last),
                                         math.exp(-cert.alpha * t) * cert.Ubar(t, x) * dt[k], 0.0)
    if mode == "marginal":
        return terminal
    if mode == "uniform":
        if q is None or not 0 < q < 1:
            raise InvalidParameter("uniform mode needs q in (0, 1)")
        return q * best
    raise InvalidParameter(f"unknown mode {mode!r}")


def exp_observer(cert: LyapunovCertificate, mode: str, q: Optional[float] = None):
    """Simulation observer producing :func:`exp_exponents` chunk by chunk."""
    def observe(times, traj, dws, exits):
        return exp_exponents(times, traj, exits, cert, mode, q)
    return observe


def exp_functional_estimate(exponents, level: float = 0.99, n_bootstrap: int = 2000,
                            seed: int = 0, kurtosis_threshold: float = 20.0) -> MomentEstimate:
    """``E exp(Z)`` from per-path exponents ``Z``, computed in log space.

    The final exponent is clamped at 700; a clamped estimate carries a
    disqualifying flag.
    """
    z = np.asarray(exponents, dtype=float).ravel()
    if z.size == 0:
        raise InvalidParameter("no samples")
    if not np.all(np.isfinite(z)):
        raise InvalidParameter("exponents contain non-finite values")
    shift = float(z.max())
    est = lp_norm_estimate(np.exp(z - shift), 1.0, level, n_bootstrap, seed)
    flags = ()
    log_scale = shift
    if shift + math.log(est.ci_hi) > EXP_CLAMP:
        flags += (CLAMP_FLAG,)
        log_scale = EXP_CLAMP - math.log(est.ci_hi)
    if z.size > 3 and np.ptp(z) > 0:
        kurt = float(stats.kurtosis(z))
        if kurt > kurtosis_threshold:
            flags += (f"{HEAVY_TAIL_FLAG} (excess kurtosis {kurt:.1f})",)
    return est.scaled(math.exp(log_scale), flags)


def mismatch_integrals(batch: PerturbedBatch, p: float) -> tuple[float, float]:
    """``int_0^T |||mu(Y_t) - a_t|^2||_{L^{p/2}} dt`` and the diffusion analogue.

    Per-node norms come from the path means of ``|.|^p`` recorded during the
    simulation; the time integral is trapezoidal over the sub-nodes of each step.
    """
    if p not in batch.mismatch_means:
        raise InvalidParameter(f"power {p} was not recorded; simulate with powers=({p},)")
    means = batch.mismatch_means[p]
    norms = np.maximum(means, 0.0) ** (2.0 / p)
    dt_sub = (batch.times[1] - batch.times[0]) / batch.substeps
    per_step = np.trapezoid(norms, dx=dt_sub, axis=2)
    drift, diffusion = per_step.sum(axis=1)
    return float(drift), float(diffusion)
