"""Potentials W with exact derivatives, well data and assumption checks.

Every potential is evaluated in two coordinates:

* ``eval(t, order)`` uses the natural variable ``t``;
* ``gap(w, order)`` returns the same derivative of ``W`` at ``t = mu - w``
  and stays accurate to full relative precision for tiny ``w``.  The solvers
  work with the gap ``w = mu - u`` so that exponentially small distances to
  the well are resolved.

Outside the window ``[mu_minus - r, mu + r]`` (``r = extension_radius``) the
potential continues linearly, so ``W''`` vanishes there.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial.polynomial import polyval

KINDS = ("double_well", "pure_power", "cubic_genetics", "multi_well", "polynomial")

_SCHEMA_FIELDS = (
    "kind",
    "mu",
    "mu_minus",
    "p",
    "a",
    "wells",
    "coeffs",
    "extension_radius",
    "truncation",
)


class PotentialError(ValueError):
    """Invalid potential parameters or evaluation domain."""


@dataclass(frozen=True)
class Potential:
    """Immutable description of a potential ``W``.

    ``coeffs`` are ascending powers of ``t``.  ``wells`` is a list of
    ``(location, depth)`` pairs for ``multi_well``; the last depth must be 0
    and ``mu`` is then the last location.  ``truncation`` (1-based) marks a
    multi-well potential that was cut at one of its wells, see
    :func:`truncate_to_wells`.
    """

    kind: str
    mu: float = 1.0
    mu_minus: float = 0.0
    p: float | None = None
    a: float | None = None
    wells: tuple[tuple[float, float], ...] | None = None
    coeffs: tuple[float, ...] | None = None
    extension_radius: float = 2.0
    truncation: int | None = None
    _core: "_Core" = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PotentialError(f"unknown potential kind {self.kind!r}")
        if self.wells is not None:
            object.__setattr__(
                self, "wells", tuple((float(m), float(d)) for m, d in self.wells)
            )
        if self.coeffs is not None:
            object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if self.kind == "multi_well" and self.wells:
            target = self.wells[-1][0] if self.truncation is None else None
            if self.truncation is not None:
                if not 1 <= self.truncation <= len(self.wells):
                    raise PotentialError("truncation index out of range")
                target = self.wells[self.truncation - 1][0]
            object.__setattr__(self, "mu", float(target))
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise PotentialError("mu must be a finite positive number")
        if self.mu_minus > 0:
            raise PotentialError("mu_minus must be <= 0")
        if self.extension_radius <= 0:
            raise PotentialError("extension_radius must be positive")
        object.__setattr__(self, "_core", _build_core(self))

    # -- evaluation -------------------------------------------------------

    @property
    def window(self) -> tuple[float, float]:
        """Interval outside which ``W`` is continued linearly."""
        r = self.extension_radius
        lo = self.mu_minus - r
        if self.kind == "double_well":
            lo = min(lo, -self.mu - r)  # keeps W even
        return lo, self.mu + r

    def eval(self, t, order: int = 0):
        """``W``, ``W'`` or ``W''`` at ``t`` (scalar or array)."""
        return evaluate(self, t, order)

    def gap(self, w, order: int = 0):
        """Derivative ``order`` of ``W`` (in ``t``) evaluated at ``t = mu - w``."""
        if order not in (0, 1, 2):
            raise PotentialError("order must be 0, 1 or 2")
        w_arr = np.asarray(w, dtype=float)
        if not np.all(np.isfinite(w_arr)):
            raise PotentialError("non-finite argument")
        lo, hi = self.window
        w_lo, w_hi = self.mu - hi, self.mu - lo
        inner = np.clip(w_arr, w_lo, w_hi)
        vals = self._core.gap(inner, order)
        out_lo = w_arr < w_lo
        out_hi = w_arr > w_hi
        if np.any(out_lo) or np.any(out_hi):
            vals = np.array(vals, dtype=float, copy=True)
            for mask, edge in ((out_lo, w_lo), (out_hi, w_hi)):
                if not np.any(mask):
                    continue
                if order == 2:
                    vals[mask] = 0.0
                elif order == 1:
                    vals[mask] = self._core.gap(np.array(edge), 1)
                else:
                    w0 = self._core.gap(np.array(edge), 0)
                    d1 = self._core.gap(np.array(edge), 1)
                    # dW/dw = -W'(t)
                    vals[mask] = w0 - d1 * (w_arr[mask] - edge)
        if np.ndim(w) == 0:
            return float(vals)
        return vals

    def W(self, t):
        return evaluate(self, t, 0)

    def dW(self, t):
        return evaluate(self, t, 1)

    def d2W(self, t):
        return evaluate(self, t, 2)

    @cached_property
    def max_abs_d2W(self) -> float:
        """``max |W''|`` over ``[min(0, mu_minus), mu]`` (dense sample)."""
        lo = min(0.0, self.mu_minus)
        t = np.linspace(lo, self.mu, 20001)
        return float(np.max(np.abs(self.d2W(t))))

    @property
    def is_even(self) -> bool:
        return self.kind == "double_well"

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        out = {}
        for name in _SCHEMA_FIELDS:
            val = getattr(self, name)
            if isinstance(val, tuple):
                val = [list(v) if isinstance(v, tuple) else v for v in val]
            out[name] = val
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "Potential":
        unknown = set(data) - set(_SCHEMA_FIELDS)
        if unknown:
            raise PotentialError(f"unknown potential fields: {sorted(unknown)}")
        if "kind" not in data:
            raise PotentialError("potential JSON requires 'kind'")
        kwargs = {k: v for k, v in data.items() if v is not None}
        if "wells" in kwargs:
            kwargs["wells"] = tuple(tuple(w) for w in kwargs["wells"])
        if "coeffs" in kwargs:
            kwargs["coeffs"] = tuple(kwargs["coeffs"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "Potential":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise PotentialError(f"malformed potential JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise PotentialError("potential JSON must be an object")
        return cls.from_dict(data)


# -- constructors -----------------------------------------------------------


def double_well(mu: float = 1.0, **kw) -> Potential:
    """Allen-Cahn potential ``(t^2 - mu^2)^2 / 4``."""
    return Potential("double_well", mu=mu, **kw)


def pure_power(p: float, mu: float = 1.0, **kw) -> Potential:
    """``|t - mu|^(p+1)``."""
    return Potential("pure_power", mu=mu, p=p, **kw)


def cubic_genetics(a: float, mu: float = 1.0, **kw) -> Potential:
    """Potential with ``W'(t) = t (t - a)(t - mu)``, ``0 < a < mu/2``."""
    return Potential("cubic_genetics", mu=mu, a=a, **kw)


def multi_well(wells: Sequence[tuple[float, float]], **kw) -> Potential:
    return Potential("multi_well", wells=tuple(tuple(w) for w in wells), **kw)


def polynomial(coeffs: Sequence[float], mu: float, **kw) -> Potential:
    return Potential("polynomial", mu=mu, coeffs=tuple(coeffs), **kw)


def evaluate(potential: Potential, t, order: int = 0):
    """Evaluate ``W`` (order 0), ``W'`` (1) or ``W''`` (2) at ``t``."""
    if order not in (0, 1, 2):
        raise PotentialError("order must be 0, 1 or 2")
    t_arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t_arr)):
        raise PotentialError("non-finite argument")
    if potential.kind == "double_well":
        vals = _double_well_t(potential, t_arr, order)
    else:
        vals = potential.gap(potential.mu - t_arr, order)
    if np.ndim(t) == 0:
        return float(vals)
    return np.asarray(vals, dtype=float)


def _double_well_t(pot: Potential, t, order):
    # evaluated in t so that W(-t) == W(t) bit for bit
    mu = pot.mu
    lo, hi = pot.window
    edge = max(-lo, hi)
    s = np.clip(t, -edge, edge)
    if order == 0:
        v = 0.25 * ((s - mu) * (s + mu)) ** 2
        outside = np.abs(t) > edge
        if np.any(outside):
            d_edge = edge * (edge - mu) * (edge + mu)
            v = np.where(outside, v + d_edge * (np.abs(t) - edge), v)
        return v
    if order == 1:
        return s * (s - mu) * (s + mu)
    v = 3.0 * s * s - mu * mu
    return np.where(np.abs(t) > edge, 0.0, v)


# -- kind-specific cores ----------------------------------------------------


class _Core:
    """Evaluates d^k W / dt^k at ``t = mu - w`` inside the linear window."""

    def gap(self, w, order):  # pragma: no cover - interface
        raise NotImplementedError


class _PolyCore(_Core):
    """Polynomial in the gap variable: ``W(mu - w) = sum q_k w^k``."""

    def __init__(self, q: np.ndarray):
        q = np.array(q, dtype=float)
        q[:2] = 0.0  # W(mu) = W'(mu) = 0 exactly
        self.q = Polynomial(q)
        self._c = [q, self.q.deriv(1).coef, self.q.deriv(2).coef]

    def gap(self, w, order):
        val = polyval(w, self._c[order])
        return -val if order == 1 else val


class _DoubleWellCore(_Core):
    def __init__(self, mu):
        self.mu = mu

    def gap(self, w, order):
        mu = self.mu
        if order == 0:
            return 0.25 * (w * (2 * mu - w)) ** 2
        if order == 1:
            return -(mu - w) * w * (2 * mu - w)
        return 2 * mu * mu - 6 * mu * w + 3 * w * w


class _PurePowerCore(_Core):
    def __init__(self, p):
        self.p = p

    def gap(self, w, order):
        p = self.p
        aw = np.abs(w)
        if order == 0:
            return aw ** (p + 1)
        if order == 1:
            # W'(t) = (p+1)|t-mu|^(p-1) (t-mu), t - mu = -w
            return -(p + 1) * aw ** (p - 1) * w
        return (p + 1) * p * aw ** (p - 1)


class _TruncatedCore(_Core):
    """Multi-well potential cut at well ``mu_i`` and re-extended.

    On ``[0, mu_i]`` it equals ``W - W(mu_i)``; above ``mu_i`` it is the
    second-order Taylor polynomial plus ``(t-mu_i)^4 / (1 + (t-mu_i)^2)``
    (C^2, quadratic growth); below 0 ``W'`` is continued as
    ``W'(0) + W''(0) t - K t^2`` which stays negative.
    """

    def __init__(self, poly_core: _PolyCore, mu_i: float):
        self.inner = poly_core
        self.mu_i = mu_i
        self.c2 = float(poly_core.gap(np.array(0.0), 2))
        w0 = mu_i  # gap at t = 0
        self.W0 = float(poly_core.gap(np.array(w0), 0))
        self.d1_0 = float(poly_core.gap(np.array(w0), 1))
        self.d2_0 = float(poly_core.gap(np.array(w0), 2))
        if self.d1_0 >= 0:
            raise PotentialError("truncation requires W'(0) < 0")
        self.K = self.d2_0**2 / (4 * abs(self.d1_0)) + 1.0

    def gap(self, w, order):
        w = np.asarray(w, dtype=float)
        out = np.empty(w.shape)
        right = w < 0
        left = w > self.mu_i
        mid = ~(right | left)
        out[mid] = self.inner.gap(w[mid], order)
        if right.any():
            # right of the well: x = t - mu_i = -w > 0
            x = -w[right]
            if order == 0:
                out[right] = 0.5 * self.c2 * x**2 + x**4 / (1 + x**2)
            elif order == 1:
                out[right] = self.c2 * x + (4 * x**3 + 2 * x**5) / (1 + x**2) ** 2
            else:
                out[right] = self.c2 + (12 * x**2 + 6 * x**4 + 2 * x**6) / (1 + x**2) ** 3
        if left.any():
            # left of zero: t = mu_i - w < 0
            t = self.mu_i - w[left]
            if order == 0:
                out[left] = self.W0 + self.d1_0 * t + 0.5 * self.d2_0 * t**2 - self.K * t**3 / 3
            elif order == 1:
                out[left] = self.d1_0 + self.d2_0 * t - self.K * t**2
            else:
                out[left] = self.d2_0 - 2 * self.K * t
        return out if out.ndim else float(out)


def _shift_to_gap(poly_t: Polynomial, mu: float) -> np.ndarray:
    """Coefficients of ``w -> P(mu - w)``."""
    return poly_t(Polynomial([mu, -1.0])).coef


def _multi_well_poly(wells) -> Polynomial:
    """W as a polynomial in t for ordered wells with given depths.

    ``W'(t) = (t - mu_m) prod_{i<m} (t - mu_i)^2 g(t)`` with ``g`` of degree
    ``m - 2`` fitted to the depth differences.
    """
    locs = np.array([w[0] for w in wells])
    depths = np.array([w[1] for w in wells])
    m = len(wells)
    if m < 1:
        raise PotentialError("multi_well needs at least one well")
    if np.any(np.diff(locs) <= 0) or locs[0] <= 0:
        raise PotentialError("well locations must be positive and strictly increasing")
    if np.any(np.diff(depths) >= 0):
        raise PotentialError("well depths must be strictly decreasing")
    if depths[-1] != 0.0:
        raise PotentialError("the last well must have depth 0")
    base = Polynomial([-locs[-1], 1.0])
    for loc in locs[:-1]:
        base = base * Polynomial([-loc, 1.0]) ** 2
    if m == 1:
        g_coef = np.array([1.0])
    else:
        # depth differences are linear in the coefficients of g
        cols = []
        for j in range(m - 1):
            Wj = (base * Polynomial([0.0] * j + [1.0])).integ()
            cols.append([Wj(locs[i]) - Wj(locs[i + 1]) for i in range(m - 1)])
        A = np.array(cols).T
        g_coef = np.linalg.solve(A, depths[:-1] - depths[1:])
    g = Polynomial(g_coef)
    tt = np.linspace(0.0, locs[-1], 4001)
    if np.any(g(tt) <= 0):
        raise PotentialError("well depths not realizable by the product form")
    dW = base * g
    Wp = dW.integ()
    return Wp - Wp(locs[-1])


def _build_core(pot: Potential) -> _Core:
    kind = pot.kind
    if kind == "double_well":
        return _DoubleWellCore(pot.mu)
    if kind == "pure_power":
        if pot.p is None or pot.p <= 1:
            raise PotentialError("pure_power requires p > 1")
        return _PurePowerCore(float(pot.p))
    if kind == "cubic_genetics":
        a, mu = pot.a, pot.mu
        if a is None or not 0 < a < mu / 2:
            raise PotentialError("cubic_genetics requires 0 < a < mu/2")
        q = [0.0, 0.0, mu * (mu - a) / 2, -(2 * mu - a) / 3, 0.25]
        return _PolyCore(np.array(q))
    if kind == "polynomial":
        if not pot.coeffs:
            raise PotentialError("polynomial requires coeffs")
        P = Polynomial(pot.coeffs)
        scale = 1.0 + float(np.max(np.abs(pot.coeffs)))
        if abs(P(pot.mu)) > 1e-10 * scale or abs(P.deriv()(pot.mu)) > 1e-10 * scale:
            raise PotentialError("polynomial must satisfy W(mu) = W'(mu) = 0")
        return _PolyCore(_shift_to_gap(P, pot.mu))
    # multi_well
    if not pot.wells:
        raise PotentialError("multi_well requires wells")
    P = _multi_well_poly(pot.wells)
    if pot.truncation is None:
        return _PolyCore(_shift_to_gap(P, pot.mu))
    mu_i = pot.mu
    shifted = _PolyCore(_shift_to_gap(P - P(mu_i), mu_i))
    return _TruncatedCore(shifted, mu_i)


def truncate_to_wells(potential: Potential, i: int) -> Potential:
    """Cut a multi-well potential at its ``i``-th well (1-based).

    The result equals ``W - W(mu_i)`` on ``[0, mu_i]`` and has ``mu_i`` as
    its zero-energy well, so the single-well checks apply to it.
    """
    if potential.kind != "multi_well" or not potential.wells:
        raise PotentialError("truncate_to_wells needs a multi_well potential")
    if not 1 <= i <= len(potential.wells):
        raise PotentialError(f"well index {i} out of range 1..{len(potential.wells)}")
    return Potential(
        "multi_well",
        wells=potential.wells,
        mu_minus=potential.mu_minus,
        extension_radius=potential.extension_radius,
        truncation=i,
    )


# -- assumption checks ------------------------------------------------------


@dataclass(frozen=True)
class AssumptionReport:
    a_prime: bool
    a_double_prime: bool
    monotone_b: bool
    convex_near_mu: bool
    power_bound: bool
    power_c: float
    power_p: float
    krasnoselski: bool
    resolution: float

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def check_assumptions(potential: Potential, resolution: float = 1e-4) -> AssumptionReport:
    """Sampled verdicts for the structural hypotheses on ``W``.

    Verdicts are advisory; no solver refuses to run on a failed check.
    """
    pot = potential
    mu, mm = pot.mu, pot.mu_minus
    n_pts = int(round((mu - mm + 2.0) / resolution)) + 1
    t = np.linspace(mm - 1.0, mu + 1.0, n_pts)
    Wt = pot.W(t)
    W_at_mu = pot.gap(0.0, 0)
    dW_at_mu = pot.gap(0.0, 1)
    at_well = abs(W_at_mu) <= 1e-12 and abs(dW_at_mu) <= 1e-12
    nonneg = bool(np.all(Wt >= -1e-14))

    def positive_below_mu(lo):
        # sample in the gap variable so values next to mu keep their sign
        w = np.linspace(resolution, mu - lo, max(int((mu - lo) / resolution), 2))
        return bool(np.all(pot.gap(w, 0) > 0))

    def side_condition(center):
        # W(2 center - t) >= W(t) on [center, mu], or W' < 0 left of center
        s = t[(t >= center) & (t <= mu)]
        reflect = bool(np.all(pot.W(2 * center - s) >= pot.W(s) - 1e-14))
        left = t[t < center]
        decreasing = bool(left.size == 0 or np.all(pot.dW(left) < 0))
        return reflect or decreasing

    a_prime = at_well and nonneg and positive_below_mu(0.0) and side_condition(0.0)
    a_dprime = (
        mm <= 0 and at_well and nonneg and positive_below_mu(mm) and side_condition(mm)
    )
    inner = t[(t > 0) & (t < mu)]
    monotone_b = bool(np.all(pot.dW(inner) <= 1e-14))

    delta = min(0.1, mu / 4)
    w_near = np.linspace(0.0, delta, max(int(delta / resolution), 2))
    convex = bool(np.all(pot.gap(w_near, 2) >= -1e-12))

    # -W'(mu - w) >= c w^p near the well
    w_fit = np.geomspace(max(resolution, 1e-4), delta, 200)
    neg = -pot.gap(w_fit, 1)
    if np.all(neg > 0):
        slope, _ = np.polyfit(np.log(w_fit), np.log(neg), 1)
        p_fit = float(slope)
        if abs(p_fit - round(p_fit)) < 1e-6:
            p_fit = float(round(p_fit))
        c_fit = float(np.min(neg / w_fit**p_fit))
        power = p_fit > 1.0 + 1e-9 and c_fit > 0
    else:
        p_fit, c_fit, power = float("nan"), 0.0, False

    tk = t[(t > 0) & (t <= mu + 1.0)]
    ratio = pot.dW(tk) / tk
    kras = bool(np.all(np.diff(ratio) > 0))

    return AssumptionReport(
        a_prime=bool(a_prime),
        a_double_prime=bool(a_dprime),
        monotone_b=monotone_b,
        convex_near_mu=convex,
        power_bound=bool(power),
        power_c=c_fit,
        power_p=p_fit,
        krasnoselski=kras,
        resolution=resolution,
    )
