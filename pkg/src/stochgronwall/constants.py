"""Maximal-inequality constants for the running-supremum bounds.

Every uniform (running-supremum) moment bound in this package carries a
factor built from the improper integral

    I(r, a) = int_a^inf s^r / (s + 1)^2 ds,        0 < r < 1, a >= 0,

namely ``(p/q3 * I(q3/p, (p - q3)/q3) + 1) ** e`` with ``e = p/(2 q3)`` for
norm-level statements about the state and ``e = p/q3`` for statements about
a general Lyapunov function.  Integrals are computed after the substitution
``s = exp(y)``, which turns the algebraic endpoint behaviour into exponential
decay at both ends; the truncated tails are bracketed analytically, their
midpoint added to the value and their half-width to the error bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import InvalidParameter
from .quadrature import integrate

DEFAULT_TOL = 1e-10

Variant = Literal["half", "full"]


@dataclass(frozen=True)
class TailIntegralSpec:
    r: float
    a: float

    def __post_init__(self):
        if not (0.0 < self.r < 1.0):
            raise InvalidParameter(f"exponent r must lie in (0, 1), got {self.r}")
        if not (math.isfinite(self.a) and self.a >= 0.0):
            raise InvalidParameter(f"lower limit a must be finite and >= 0, got {self.a}")


@dataclass(frozen=True)
class ConstantValue:
    value: float
    abs_error_bound: float

    def __float__(self):
        return self.value


def power_ratio_tail(c: float, k: int, a: float, tol: float, strict: bool = True):
    """Integral of ``s**c / (s + 1)**k`` over ``[a, inf)``.

    Requires ``c > -1`` when ``a == 0`` and ``k - c > 1``.  Returns
    ``(value, abs_error_bound)``.
    """
    decay = k - c - 1.0  # integrand ~ exp(-decay * y) as y -> inf
    growth = c + 1.0     # integrand ~ exp(growth * y) as y -> -inf
    if decay <= 0.0:
        raise InvalidParameter("integral diverges at infinity (need k - c > 1)")
    if a == 0.0 and growth <= 0.0:
        raise InvalidParameter("integral diverges at zero (need c > -1)")

    def integrand(y):
        y = np.asarray(y, dtype=float)
        out = np.empty_like(y)
        pos = y > 0.0
        yp = y[pos]
        out[pos] = np.exp(-decay * yp - k * np.log1p(np.exp(-yp)))
        yn = y[~pos]
        out[~pos] = np.exp(growth * yn - k * np.log1p(np.exp(yn)))
        return out

    budget = tol / 4.0
    # upper truncation: int_Y^inf e^{-decay y} dy <= budget
    y_hi = max(1.0, math.log(1.0 / (budget * decay)) / decay)
    # each truncated tail is bracketed by [env * (1 + e^{-|Y|})^{-k}, env]
    env = math.exp(-decay * y_hi) / decay
    lo_end = env * (1.0 + math.exp(-y_hi)) ** (-k)
    tail_val = 0.5 * (env + lo_end)
    tail_err = 0.5 * (env - lo_end)
    if a > 0.0:
        y_lo = math.log(a)
    else:
        y_lo = -max(1.0, math.log(1.0 / (budget * growth)) / growth)
        env = math.exp(growth * y_lo) / growth
        lo_end = env * (1.0 + math.exp(y_lo)) ** (-k)
        tail_val += 0.5 * (env + lo_end)
        tail_err += 0.5 * (env - lo_end)
    if y_lo >= y_hi:
        # the whole range sits in the far tail; bracket it analytically
        env = math.exp(-decay * y_lo) / decay
        lo_end = env * (1.0 + math.exp(-y_lo)) ** (-k)
        return 0.5 * (env + lo_end), 0.5 * (env - lo_end)
    panels = max(4, int(math.ceil((y_hi - y_lo) / 8.0)))
    res = integrate(integrand, y_lo, y_hi, tol=tol - tail_err, initial_panels=panels,
                    strict=strict)
    return res.value + tail_val, res.abs_error + tail_err


def tail_integral(spec: TailIntegralSpec, tol: float = DEFAULT_TOL) -> ConstantValue:
    """``int_a^inf s^r/(s+1)^2 ds`` to absolute accuracy ``tol``."""
    if not tol > 0.0:
        raise InvalidParameter("tol must be positive")
    value, err = power_ratio_tail(spec.r, 2, spec.a, tol)
    return ConstantValue(value, err)


def sup_constant_base(p: float, q3: float, tol: float = DEFAULT_TOL) -> ConstantValue:
    """Base ``p/q3 * I(q3/p, (p-q3)/q3) + 1`` shared by every sup-constant."""
    if not (p >= 1.0):
        raise InvalidParameter(f"p must be >= 1, got {p}")
    if not (0.0 < q3 < p):
        raise InvalidParameter(f"q3 must lie in (0, p) = (0, {p}), got {q3}")
    scale = p / q3
    tail = tail_integral(TailIntegralSpec(q3 / p, (p - q3) / q3), tol / scale)
    return ConstantValue(scale * tail.value + 1.0, scale * tail.abs_error_bound)


def sup_exponent(p: float, q3: float, variant: Variant) -> float:
    if variant == "half":
        return p / (2.0 * q3)
    if variant == "full":
        return p / q3
    raise InvalidParameter(f"unknown variant {variant!r}")


def sup_constant(p: float, q3: float, variant: Variant = "half",
                 tol: float = DEFAULT_TOL) -> ConstantValue:
    """Running-supremum constant ``base(p, q3) ** e``.

    ``variant="half"`` uses ``e = p/(2 q3)`` (state-norm bounds), ``"full"``
    uses ``e = p/q3`` (Lyapunov-function bounds).  The error bound is the
    first-order propagation of the base's quadrature error and is held below
    ``tol * max(1, value)``.
    """
    base_guess = sup_constant_base(p, q3, 1e-6).value
    e = sup_exponent(p, q3, variant)
    # |d(b^e)/db| = e b^(e-1); the target is tol relative to max(1, value)
    target = tol * max(1.0, base_guess ** e)
    sens = max(1.0, e * base_guess ** (e - 1.0))
    base = sup_constant_base(p, q3, min(tol, target / sens))
    value = base.value ** e
    err = e * (base.value + base.abs_error_bound) ** (e - 1.0) * base.abs_error_bound
    return ConstantValue(value, err)


def burkholder_forms(q: float, tol: float = DEFAULT_TOL) -> tuple[float, float]:
    """Both sides of the optimal-constant identity for ``q`` in (0, 1).

    form A: ((1/q - 1)^q + int_{1/q-1}^inf s^(q-1)/(s+1) ds)^(1/q)
    form B: (1/q int_{(1-q)/q}^inf s^q/(s+1)^2 ds)^(1/q)

    Each integral is evaluated with a tolerance scaled by the sensitivity of
    the outer power so that each form is accurate to about ``tol``.
    """
    if not (0.0 < q < 1.0):
        raise InvalidParameter(f"q must lie in (0, 1), got {q}")
    b = 1.0 / q - 1.0
    # coarse pass to size the sensitivities
    ia, _ = power_ratio_tail(q - 1.0, 1, b, 1e-6)
    ib, _ = power_ratio_tail(q, 2, b, 1e-6)
    base_a = b ** q + ia
    fa = base_a ** (1.0 / q)
    fb = (ib / q) ** (1.0 / q)
    sens_a = fa / (q * base_a)
    sens_b = fb / (q * ib)
    floor = 1e-16
    ia, _ = power_ratio_tail(q - 1.0, 1, b, max(tol / (2.0 * sens_a), floor), strict=False)
    ib, _ = power_ratio_tail(q, 2, b, max(tol / (2.0 * sens_b), floor), strict=False)
    return (b ** q + ia) ** (1.0 / q), (ib / q) ** (1.0 / q)


def burkholder_identity_gap(q: float, tol: float = DEFAULT_TOL) -> float:
    """``|form A - form B|`` for the optimal maximal-inequality constant."""
    a, b = burkholder_forms(q, tol)
    return abs(a - b)


def scheutzow_constant(q3: float) -> ConstantValue:
    """``(min{4, 1/q3} * pi q3 / sin(pi q3) + 1) ** (1/q3)`` in closed form.

    Returns ``inf`` once ``sin(pi q3)`` underflows relative to ``pi q3``.
    """
    if not (0.0 < q3 < 1.0):
        raise InvalidParameter(f"q3 must lie in (0, 1), got {q3}")
    s = math.sin(math.pi * q3)
    if s <= 0.0:
        return ConstantValue(math.inf, 0.0)
    base = min(4.0, 1.0 / q3) * math.pi * q3 / s + 1.0
    try:
        value = base ** (1.0 / q3)
    except OverflowError:
        value = math.inf
    return ConstantValue(value, 0.0)


def constants_table(ps, q3s, variants=("half", "full"), tol: float = DEFAULT_TOL):
    """Rows ``{p, q3, variant, value, abs_error_bound}`` for every combination."""
    rows = []
    for p in ps:
        for q3 in q3s:
            for variant in variants:
                c = sup_constant(p, q3, variant, tol)
                rows.append({"p": p, "q3": q3, "variant": variant,
                             "value": c.value, "abs_error_bound": c.abs_error_bound})
    return rows
