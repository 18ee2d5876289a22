"""Principal eigenpair of the radial linearization -Laplace + W''(u_R).

Inverse iteration on the volume-symmetrized tridiagonal operator.  The shift
starts below the spectrum (-max|W''| - 1) and is then raised towards the
principal eigenvalue with a Sturm-count bisection, which keeps it provably
below the spectrum while making the iteration converge in a few steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .radial import RadialSolution, _Grid, _solve_sym_tridiag


class SpectrumError(RuntimeError):
    pass


@dataclass
class EigenResult:
    mu_R: float
    phi: np.ndarray  # on the solution grid, sup-normalized, phi(R) = 0
    r: np.ndarray
    iterations: int
    rayleigh: float
    shift: float

    def to_csv(self) -> str:
        lines = ["r,phi"]
        for row in zip(self.r, self.phi):
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def linearized_tridiagonal(solution: RadialSolution):
    """Diagonal and off-diagonal of V^(1/2) (-L + W''(u)) V^(-1/2)."""
    prob = solution.problem
    grid = _Grid(prob.n, prob.R, prob.K)
    pot = prob.potential
    d2 = pot.gap(solution.w[:-1], 2)
    main, off = grid.bands(d2)
    V = grid.V[:-1]
    sq = np.sqrt(V)
    return main / V, off / (sq[:-1] * sq[1:]), grid


def sturm_count(diag, off, sigma) -> int:
    """Number of eigenvalues below ``sigma`` (negative LDL^T pivots)."""
    count = 0
    # pivots smaller than this are nudged away from zero (standard LDL^T guard)
    tiny = np.finfo(float).eps * (np.max(np.abs(diag)) + 2 * np.max(np.abs(off), initial=0.0) + abs(sigma) + 1.0)
    d = diag[0] - sigma
    if d < 0:
        count += 1
    for k in range(1, diag.size):
        if abs(d) < tiny:
            d = -tiny if d < 0 else tiny
        d = diag[k] - sigma - off[k - 1] ** 2 / d
        if d < 0:
            count += 1
    return count


def _tridiag_matvec(diag, off, x):
    y = diag * x
    y[:-1] += off * x[1:]
    y[1:] += off * x[:-1]
    return y


def principal_eigenpair(
    solution: RadialSolution, tol: float = 1e-10, max_iter: int = 500
) -> EigenResult:
    if solution.trivial:
        raise SpectrumError("principal eigenpair requested for the trivial solution")
    diag, off, grid = linearized_tridiagonal(solution)
    pot = solution.problem.potential
    lower = -pot.max_abs_d2W - 1.0
    if sturm_count(diag, off, lower) != 0:
        raise SpectrumError("shift is not below the spectrum")

    # crude Rayleigh quotient from a positive vector gives an upper bound
    x = np.sqrt(grid.V[:-1]) * np.cos(0.5 * np.pi * grid.r[:-1] / grid.R)
    upper = float(x @ _tridiag_matvec(diag, off, x) / (x @ x))
    lo, hi = lower, upper
    if sturm_count(diag, off, hi) == 0:
        hi = upper + 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if sturm_count(diag, off, mid) == 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-7 * max(1.0, abs(hi)):
            break
    shift = lo - 1e-7 * max(1.0, abs(lo))

    main = diag - shift
    x = x / np.linalg.norm(x)
    mu_old = np.inf
    for it in range(1, max_iter + 1):
        y = _solve_sym_tridiag(main, off, x)
        x = y / np.linalg.norm(y)
        mu = float(x @ _tridiag_matvec(diag, off, x))
        if abs(mu - mu_old) < tol:
            break
        mu_old = mu
    else:
        raise SpectrumError(f"inverse iteration did not converge after {max_iter} steps")

    phi = np.zeros(grid.K + 1)
    phi[:-1] = x / np.sqrt(grid.V[:-1])
    if phi[np.argmax(np.abs(phi))] < 0:
        phi = -phi
    phi /= np.max(phi)
    return EigenResult(
        mu_R=mu, phi=phi, r=grid.r, iterations=it, rayleigh=rayleigh_quotient(solution, phi), shift=shift
    )


def rayleigh_quotient(solution: RadialSolution, phi) -> float:
    """Discrete energy quotient of the linearized operator."""
    prob = solution.problem
    grid = _Grid(prob.n, prob.R, prob.K)
    d2 = prob.potential.gap(solution.w, 2)
    grad = np.sum(grid.a * np.diff(phi) ** 2) / grid.h
    pot_term = np.sum(grid.V * d2 * phi**2)
    return float((grad + pot_term) / np.sum(grid.V * phi**2))


def eigenfunction_profile_gap(eig: EigenResult, solution: RadialSolution, profile, S: float = 5.0) -> float:
    """sup over s <= S of |phi_R(R - s) - U'(s) / max U'|."""
    R = solution.problem.R
    s = R - eig.r
    sel = s <= S
    target = profile.derivative(s[sel]) / np.max(profile.uprime)
    return float(np.max(np.abs(eig.phi[sel] - target)))


@dataclass
class ZetaCheck:
    residual: float
    max_abs_zeta: float
    max_phi: float
    flagged: bool


def zeta_identity(solution: RadialSolution, r0: float = 1e-4, rtol: float = 1e-12) -> ZetaCheck:
    """Check zeta(r) - zeta(0) = -2 int_0^r W'(u) phi s^(n-1) ds.

    ``u`` and a solution ``phi`` of the homogeneous linearization
    (phi(0) = 1, phi'(0) = 0) are integrated together from the centre value
    of ``solution``; the integral is carried as an extra state.
    """
    prob = solution.problem
    pot = prob.potential
    n, R = prob.n, prob.R
    w0 = float(solution.w[0])

    f0 = pot.gap(w0, 1)  # W'(u(0))
    g0 = pot.gap(w0, 2)
    # series start: w = w0 - f0 r^2 / (2n), phi = 1 + g0 r^2 / (2n)
    y0 = np.array(
        [
            w0 - f0 * r0**2 / (2 * n),
            -f0 * r0 / n,
            1 + g0 * r0**2 / (2 * n),
            g0 * r0 / n,
            f0 * r0**n / n,
        ]
    )

    def rhs(r, y):
        w, dw, phi, dphi, _ = y
        Wp = pot.gap(w, 1)
        Wpp = pot.gap(w, 2)
        # u'' = W'(u) - (n-1)/r u'  with u = mu - w
        return [
            dw,
            -Wp - (n - 1) / r * dw,
            dphi,
            Wpp * phi - (n - 1) / r * dphi,
            Wp * phi * r ** (n - 1),
        ]

    r_eval = solution.r[solution.r >= r0]
    sol = solve_ivp(rhs, (r0, R), y0, method="DOP853", rtol=rtol, atol=1e-14, t_eval=r_eval)
    if not sol.success:
        raise SpectrumError(f"zeta integration failed: {sol.message}")
    r = sol.t
    w, dw, phi, dphi, integral = sol.y
    if np.max(np.abs(phi)) > 1e300:
        return ZetaCheck(float("nan"), float("nan"), float(np.max(np.abs(phi))), True)
    du = -dw
    Wp = pot.gap(w, 1)
    zeta = r**n * (du * dphi - Wp * phi) + (n - 2) * r ** (n - 1) * du * phi
    # zeta(0) = 0 for every n (u'(0) = 0)
    diff = zeta + 2 * integral
    scale = float(np.max(np.abs(zeta)))
    if scale == 0.0:
        return ZetaCheck(0.0, 0.0, float(np.max(np.abs(phi))), False)
    return ZetaCheck(float(np.max(np.abs(diff)) / scale), scale, float(np.max(np.abs(phi))), False)


def zeta_identity_residual(solution: RadialSolution) -> float:
    return zeta_identity(solution).residual


@dataclass
class StabilityRow:
    R: float
    mu_R: float
    status: str = "ok"


def stability_sweep(sweep) -> list[StabilityRow]:
    """Principal eigenvalue for each solved row of a radial sweep."""
    rows = []
    for row in sweep.rows:
        if row.status != "ok" or row.solution is None:
            rows.append(StabilityRow(row.R, float("nan"), row.status))
            continue
        try:
            rows.append(StabilityRow(row.R, principal_eigenpair(row.solution).mu_R))
        except SpectrumError as exc:
            rows.append(StabilityRow(row.R, float("nan"), f"failed: {exc}"))
    return rows


def stability_threshold(rows: list[StabilityRow]) -> float | None:
    """Smallest R beyond which every computed mu_R is positive."""
    good = [r for r in rows if np.isfinite(r.mu_R)]
    thr = None
    for r in reversed(good):
        if r.mu_R > 0:
            thr = r.R
        else:
            break
    return thr
