"""The connecting profile U'' = W'(U), U(0) = 0, U(inf) = mu.

The profile is obtained from the first integral ``U' = sqrt(2 W(U))``:
the arclength to reach a value ``u`` is ``s(u) = int_0^u dt / sqrt(2 W(t))``.
All quadratures run in the gap variable ``w = mu - t``, so values close to
the well keep full relative precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

from .potentials import Potential


class ProfileError(RuntimeError):
    pass


class AssumptionViolated(ProfileError):
    """W vanishes (or is negative) somewhere it must stay positive."""


class InsufficientData(ProfileError):
    pass


_GL_LO = np.polynomial.legendre.leggauss(12)
_GL_HI = np.polynomial.legendre.leggauss(24)


def _gl(f, a, b, rule):
    x, wts = rule
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    pts = mid[:, None] + half[:, None] * x[None, :]
    return half * (f(pts) @ wts)


def _adaptive_gl(f, a, b, rtol=1e-13, max_depth=30):
    """Vectorized adaptive Gauss-Legendre on each subinterval ``[a_k, b_k]``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.zeros_like(a)
    idx = np.arange(a.size)
    lo, hi = a.copy(), b.copy()
    for _ in range(max_depth):
        coarse = _gl(f, lo, hi, _GL_LO)
        fine = _gl(f, lo, hi, _GL_HI)
        ok = np.abs(fine - coarse) <= rtol * np.abs(fine) + 1e-300
        np.add.at(out, idx[ok], fine[ok])
        if np.all(ok):
            return out
        bad = ~ok
        mid = 0.5 * (lo[bad] + hi[bad])
        idx = np.concatenate([idx[bad], idx[bad]])
        lo, hi = np.concatenate([lo[bad], mid]), np.concatenate([mid, hi[bad]])
    raise ProfileError(
        f"quadrature did not converge on gap interval [{lo[0]:.3e}, {hi[0]:.3e}]"
    )


def _integrand(pot: Potential):
    def f(w):
        W = pot.gap(w, 0)
        if np.any(W <= 0):
            bad = np.asarray(w)[W <= 0].ravel()[0]
            raise AssumptionViolated(
                f"W(t) <= 0 at t = {pot.mu - bad:.6g}, inside [0, mu)"
            )
        return 1.0 / np.sqrt(2.0 * W)

    return f


@dataclass
class ProfileU:
    """Samples of the profile with Hermite interpolation in ``s``."""

    s: np.ndarray
    u: np.ndarray
    gap: np.ndarray  # mu - u, computed directly
    uprime: np.ndarray
    slope0: float
    mu: float
    first_integral_residual: float
    algebraic_tail: bool = False  # degenerate well: mu - U decays like a power of s

    def __post_init__(self):
        self._u = CubicHermiteSpline(self.s, self.u, self.uprime)
        # log(gap) is interpolated against s for an exponential tail and against
        # log(1 + s) for an algebraic one; both are then nearly linear
        x = self._x(self.s)
        dxds = 1.0 / (1.0 + self.s) if self.algebraic_tail else 1.0
        self._g = CubicHermiteSpline(x, np.log(self.gap), -self.uprime / self.gap / dxds)

    def _x(self, s):
        return np.log1p(s) if self.algebraic_tail else s

    @property
    def s_max(self) -> float:
        return float(self.s[-1])

    def __call__(self, s):
        """U(s); clamped to the last sample beyond the computed range."""
        s = np.asarray(s, dtype=float)
        return np.where(s >= self.s_max, self.u[-1], self._u(np.clip(s, 0.0, self.s_max)))

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        inner = self._u.derivative()(np.clip(s, 0.0, self.s_max))
        return np.where(s >= self.s_max, self.uprime[-1], inner)

    def gap_at(self, s):
        """``mu - U(s)`` with relative accuracy near the well."""
        s = np.asarray(s, dtype=float)
        return np.where(s >= self.s_max, self.gap[-1], np.exp(self._g(self._x(np.clip(s, 0.0, self.s_max)))))

    def to_csv(self) -> str:
        lines = ["s,U,Uprime,mu_minus_U"]
        for row in zip(self.s, self.u, self.uprime, self.gap):
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def _degenerate_well(pot: Potential) -> bool:
    return abs(pot.gap(0.0, 2)) < 1e-12


def compute_profile(potential: Potential, u_max: float, n_points: int = 2000) -> ProfileU:
    """Sample U on ``[0, s(u_max)]`` by inverting the first-integral quadrature.

    The u-nodes are Chebyshev-clustered toward ``u_max`` where the integrand
    ``1/sqrt(2W)`` blows up.
    """
    pot = potential
    mu = pot.mu
    if not 0 < u_max < mu:
        raise ValueError("need 0 < u_max < mu")
    if n_points < 16:
        raise ValueError("n_points must be >= 16")
    degenerate = _degenerate_well(pot)
    if degenerate:
        u_max = min(u_max, mu - 1e-9)
    g_min = mu - u_max
    theta = np.linspace(0.0, 0.5 * np.pi, n_points)
    # gap nodes: from mu (u = 0) down to g_min, dense near g_min
    gap = g_min + (mu - g_min) * (1.0 - np.sin(theta))
    gap[0], gap[-1] = mu, g_min
    f = _integrand(pot)
    pieces = _adaptive_gl(f, gap[1:], gap[:-1])
    s = np.concatenate([[0.0], np.cumsum(pieces)])
    u = mu - gap
    u[0] = 0.0
    uprime = np.sqrt(2.0 * pot.gap(gap, 0))
    slope0 = float(np.sqrt(2.0 * pot.W(0.0)))
    uprime[0] = slope0

    # first integral checked against second-order divided differences of u(s)
    h0 = s[1:-1] - s[:-2]
    h1 = s[2:] - s[1:-1]
    du = (
        -h1 / (h0 * (h0 + h1)) * u[:-2]
        + (h1 - h0) / (h0 * h1) * u[1:-1]
        + h0 / (h1 * (h0 + h1)) * u[2:]
    )
    resid = np.abs(0.5 * du**2 - pot.gap(gap[1:-1], 0))
    return ProfileU(
        s=s,
        u=u,
        gap=gap,
        uprime=uprime,
        slope0=slope0,
        mu=mu,
        first_integral_residual=float(np.max(resid)),
        algebraic_tail=degenerate,
    )


def compute_Dprime(potential: Potential, epsilon: float) -> float:
    """Arclength ``D'`` at which U reaches ``mu - epsilon``."""
    mu = potential.mu
    if not 0 < epsilon < mu:
        raise ValueError(f"epsilon must lie in (0, mu={mu})")
    f = _integrand(potential)
    val, err = integrate.quad(
        lambda w: float(f(np.array(w))), epsilon, mu, epsabs=0.0, epsrel=1e-13, limit=200
    )
    if err > 1e-10 * max(abs(val), 1e-300):
        raise ProfileError(f"D' quadrature error estimate {err:.2e} too large")
    return float(val)


@dataclass
class DecayFit:
    model: str  # "exp" or "alg"
    rate: float
    constant: float
    r2: float
    window: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "rate": self.rate,
            "constant": self.constant,
            "r2": self.r2,
            "window": list(self.window),
        }


def fit_decay(x, gap, window, min_points: int = 8) -> DecayFit:
    """Fit ``gap ~ C exp(-rate x)`` and ``gap ~ C x^-rate``; keep the better r^2."""
    x = np.asarray(x, dtype=float)
    gap = np.asarray(gap, dtype=float)
    lo, hi = window
    sel = (x >= lo) & (x <= hi) & (gap > 1e-300) & np.isfinite(gap)
    if np.count_nonzero(sel) < min_points:
        raise InsufficientData(
            f"only {np.count_nonzero(sel)} usable points in window {window}"
        )
    xs, ys = x[sel], np.log(gap[sel])
    fits = {}
    for model, xx in (("exp", xs), ("alg", np.log(xs) if np.all(xs > 0) else None)):
        if xx is None:
            continue
        slope, icpt = np.polyfit(xx, ys, 1)
        pred = slope * xx + icpt
        ss_res = float(np.sum((ys - pred) ** 2))
        ss_tot = float(np.sum((ys - ys.mean()) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
        fits[model] = DecayFit(model, float(-slope), float(np.exp(icpt)), r2, (lo, hi))
    return max(fits.values(), key=lambda f: f.r2)


def fit_profile_decay(profile: ProfileU, window: tuple[float, float]) -> DecayFit:
    lo, hi = window
    if lo < 0 or hi > profile.s_max + 1e-12 or lo >= hi:
        raise InsufficientData(f"window {window} not inside [0, {profile.s_max:.4g}]")
    return fit_decay(profile.s, profile.gap, window)
