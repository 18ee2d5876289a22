"""Energy-minimizing radial solutions of Laplace(u) = W'(u) on B_R.

The radial Laplacian is discretized in conservative form on ``r_k = k h``::

    (L u)_k = [a_{k+1/2} (u_{k+1} - u_k) - a_{k-1/2} (u_k - u_{k-1})] / (h V_k)

with ``a = r^(n-1)`` and ``V_k`` the exact shell volume of the dual cell, so
that ``L`` is (up to the volume weights) the gradient of the discrete energy
and the centre stencil reduces to ``2n (u_1 - u_0) / h^2``.  The unknown is
the gap ``w = mu - u``; this keeps the exponentially small distance to the
well accurate on the plateau.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import gamma, jn_zeros

from .potentials import Potential
from .profile1d import DecayFit, InsufficientData, compute_Dprime, compute_profile, fit_decay


class RadialError(RuntimeError):
    pass


class NewtonStagnation(RadialError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class DomainError(ValueError):
    pass


def sphere_area(n: int) -> float:
    """Measure of the unit sphere S^(n-1) (2 for n = 1)."""
    return 2.0 * math.pi ** (n / 2) / gamma(n / 2)


@dataclass(frozen=True)
class RadialProblem:
    n: int
    R: float
    potential: Potential
    boundary_value: float = 0.0
    h: float | None = None

    def __post_init__(self):
        if self.n < 1 or int(self.n) != self.n:
            raise DomainError("n must be a positive integer")
        if not self.R > 0:
            raise DomainError("R must be positive")
        pot = self.potential
        b = self.boundary_value
        if b >= pot.mu:
            raise DomainError("boundary value must lie below mu")
        if b < min(pot.mu_minus, 0.0):
            raise DomainError("boundary value below mu_minus")
        if pot.dW(b) > 1e-12:
            raise DomainError("need W'(boundary_value) <= 0")
        h = self.h if self.h is not None else min(0.01, self.R / 2000)
        K = max(int(math.ceil(self.R / h - 1e-9)), 32)
        object.__setattr__(self, "h", self.R / K)

    @property
    def K(self) -> int:
        return int(round(self.R / self.h))

    @property
    def r(self) -> np.ndarray:
        return np.linspace(0.0, self.R, self.K + 1)


class _Grid:
    """Weights of the conservative radial operator."""

    def __init__(self, n: int, R: float, K: int):
        self.n, self.R, self.K = n, R, K
        h = R / K
        self.h = h
        r = np.linspace(0.0, R, K + 1)
        self.r = r
        rh = r[:-1] + 0.5 * h  # r_{k+1/2}
        self.a = rh ** (n - 1)
        lo = np.maximum(r - 0.5 * h, 0.0)
        hi = np.minimum(r + 0.5 * h, R)
        self.V = (hi**n - lo**n) / n
        self.area = sphere_area(n)

    def apply_L(self, w):
        """(L w)_k for k = 0..K-1 (w includes the boundary node)."""
        flux = self.a * np.diff(w)  # a_{k+1/2} (w_{k+1} - w_k)
        div = flux.copy()
        div[1:] -= flux[:-1]
        return div / (self.h * self.V[:-1])

    def bands(self, diag_extra):
        """Symmetric tridiagonal of V (-L + diag_extra) on k = 0..K-1."""
        h = self.h
        c = self.a / h  # coupling for edge k+1/2
        main = c.copy()
        main[1:] += c[:-1]
        main = main + self.V[:-1] * diag_extra
        off = -c[:-1]  # between k and k+1, k = 0..K-2
        return main, off

    def energy(self, w, pot: Potential):
        """Discrete J on B_R (sphere factor included); w is the gap."""
        grad = 0.5 * self.a * np.diff(w) ** 2 / self.h
        return self.area * (np.sum(grad) + np.sum(self.V * pot.gap(w, 0)))


def _solve_sym_tridiag(main, off, rhs):
    ab = np.zeros((3, main.size))
    ab[0, 1:] = off
    ab[1] = main
    ab[2, :-1] = off
    return solve_banded((1, 1), ab, rhs)


@dataclass
class RadialSolution:
    problem: RadialProblem
    r: np.ndarray
    w: np.ndarray  # gap mu - u
    u: np.ndarray
    uprime: np.ndarray
    flux: float
    energy: float
    residual: float
    trivial: bool
    iterations: dict = field(default_factory=dict)

    @property
    def mu(self) -> float:
        return self.problem.potential.mu

    def to_csv(self) -> str:
        lines = ["r,u,uprime"]
        for row in zip(self.r, self.u, self.uprime):
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def _derivative(r, w, h):
    """Centered u' = -w'; 0 at the centre, one-sided second order at R."""
    du = np.empty_like(w)
    du[1:-1] = -(w[2:] - w[:-2]) / (2 * h)
    du[0] = 0.0
    du[-1] = -(3 * w[-1] - 4 * w[-2] + w[-3]) / (2 * h)
    return du


def _residual(grid, pot, w):
    return grid.apply_L(w) + pot.gap(w[:-1], 1)


def _newton(grid, pot, w, tol, max_steps=50):
    """Damped Newton on L w + W'(mu - w) = 0 (Armijo factor 1/2)."""
    F = _residual(grid, pot, w)
    res = float(np.max(np.abs(F)))
    steps = 0
    polished = False
    while steps < max_steps:
        if res <= tol:
            if polished:
                break
            polished = True  # one extra step for relative accuracy in the tail
        main, off = grid.bands(pot.gap(w[:-1], 2))
        # V (L - W'') delta = -V F  <=>  bands delta = V F
        delta = _solve_sym_tridiag(main, off, grid.V[:-1] * F)
        t = 1.0
        while True:
            trial = w.copy()
            trial[:-1] += t * delta
            Ft = _residual(grid, pot, trial)
            rt = float(np.max(np.abs(Ft)))
            if rt <= (1 - 1e-4 * t) * res or (polished and rt <= tol):
                break
            t *= 0.5
            if t < 1e-10:
                if res <= tol:
                    return w, res, steps
                raise NewtonStagnation(f"Newton stagnated at residual {res:.3e}", res)
        w, F, res = trial, Ft, rt
        steps += 1
    if res > tol:
        raise NewtonStagnation(f"Newton did not converge: residual {res:.3e}", res)
    return w, res, steps


def _gradient_flow(grid, pot, w, lo_gap, hi_gap, tol, max_iter):
    """Projected semi-implicit gradient flow (Lam - L) w+ = Lam w + W'(mu - w)."""
    lam = pot.max_abs_d2W + 1.0
    main, off = grid.bands(np.full(grid.K, lam))
    for it in range(max_iter):
        F = _residual(grid, pot, w)
        if float(np.max(np.abs(F))) <= tol:
            return w, it
        rhs = grid.V[:-1] * (lam * w[:-1] + pot.gap(w[:-1], 1))
        rhs[-1] += grid.a[-1] / grid.h * w[-1]
        w = w.copy()
        w[:-1] = np.clip(_solve_sym_tridiag(main, off, rhs), lo_gap, hi_gap)
    return w, max_iter


def _initial_gap(problem: RadialProblem) -> np.ndarray:
    pot = problem.potential
    r = problem.r
    try:
        prof = compute_profile(pot, pot.mu * (1 - 1e-8), 2000)
        g = prof.gap_at(problem.R - r)
    except Exception:
        g = np.full(r.size, 0.5 * pot.mu)
    g = np.clip(g, 0.0, pot.mu - problem.boundary_value)
    g[-1] = pot.mu - problem.boundary_value
    return g


def solve_radial_minimizer(
    problem: RadialProblem,
    flow_tol: float = 1e-4,
    newton_tol: float = 1e-10,
    max_flow_iter: int = 20000,
) -> RadialSolution:
    """Global-minimizer candidate on B_R by projected flow + Newton polish.

    The candidate is compared with the constant boundary value; the lower
    energy wins and ``trivial`` records which one it was.
    """
    pot = problem.potential
    mu, b = pot.mu, problem.boundary_value
    grid = _Grid(problem.n, problem.R, problem.K)
    lo = min(0.0, pot.mu_minus)
    lo_gap, hi_gap = 0.0, mu - lo
    if mu <= b:
        raise DomainError("projection infeasible: mu <= boundary value")

    w = _initial_gap(problem)
    w, flow_iters = _gradient_flow(grid, pot, w, lo_gap, hi_gap, flow_tol, max_flow_iter)
    # roundoff floor of the residual: nodal rounding amplified by 1/h^2
    floor = 8 * np.finfo(float).eps * (
        4 * np.max(np.abs(w)) / grid.h**2 + np.max(np.abs(pot.gap(w, 1)))
    )
    tol = max(newton_tol, floor)
    w, res, newton_steps = _newton(grid, pot, w, tol)
    w = np.clip(w, lo_gap, hi_gap)
    w[-1] = mu - b
    J = grid.energy(w, pot)

    const = np.full(grid.K + 1, mu - b)
    J_const = grid.energy(const, pot)
    trivial = not J < J_const - 1e-13 * max(abs(J_const), 1.0)
    if trivial:
        w = const
        res = float(np.max(np.abs(_residual(grid, pot, w))))
        J = J_const
    u = mu - w
    uprime = _derivative(grid.r, w, grid.h)
    return RadialSolution(
        problem=problem,
        r=grid.r,
        w=w,
        u=u,
        uprime=uprime,
        flux=float(abs(uprime[-1])),
        energy=float(J),
        residual=float(res),
        trivial=bool(trivial),
        iterations={"flow": flow_iters, "newton": newton_steps},
    )


def discrete_energy(problem: RadialProblem, u) -> float:
    """Discrete J(u; B_R) for nodal values ``u`` (boundary node included)."""
    grid = _Grid(problem.n, problem.R, problem.K)
    return grid.energy(problem.potential.mu - np.asarray(u, dtype=float), problem.potential)


def linear_ramp_competitor(problem: RadialProblem, width: float = 1.0) -> np.ndarray:
    """mu inside B_{R-width}, linear down to the boundary value at R."""
    r = problem.r
    mu, b = problem.potential.mu, problem.boundary_value
    frac = np.clip((problem.R - r) / width, 0.0, 1.0)
    return b + (mu - b) * frac


# -- diagnostics ------------------------------------------------------------


@dataclass
class RadialDiagnostics:
    epsilon: float
    plateau_width: float  # radius of the largest ball where u >= mu - eps
    layer_width: float  # R - plateau_width
    flux_sq_gap: float
    modica_margin: float
    modica_min_node: int
    r_sub: np.ndarray
    monotonicity_seq: np.ndarray
    caffarelli_seq: np.ndarray
    center_slope_bound: float
    energy_ratio: float

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "plateau_width": self.plateau_width,
            "layer_width": self.layer_width,
            "flux_sq_gap": self.flux_sq_gap,
            "modica_margin": self.modica_margin,
            "center_slope_bound": self.center_slope_bound,
            "energy_ratio": self.energy_ratio,
            "r_sub": self.r_sub.tolist(),
            "monotonicity_seq": self.monotonicity_seq.tolist(),
            "caffarelli_seq": self.caffarelli_seq.tolist(),
        }


class DiagnosticUndefined(ValueError):
    pass


def plateau_radius(r, w, epsilon) -> float:
    """inf{r : u(r) < mu - eps} with linear interpolation (R if never below)."""
    below = np.nonzero(w > epsilon)[0]
    if below.size == 0:
        return float(r[-1])
    k = below[0]
    if k == 0:
        return 0.0
    # w crosses epsilon between r[k-1] and r[k]
    t = (epsilon - w[k - 1]) / (w[k] - w[k - 1])
    return float(r[k - 1] + t * (r[k] - r[k - 1]))


def _running_min_W(pot: Potential, u_vals):
    """min{W(t) : t in [0, u]} for each u (u >= 0)."""
    tt = np.linspace(0.0, pot.mu, 20001)
    cm = np.minimum.accumulate(pot.W(tt))
    idx = np.clip(np.searchsorted(tt, u_vals, side="right") - 1, 0, tt.size - 1)
    return cm[idx]


def diagnostics(solution: RadialSolution, epsilon: float, sub_stride: int = 5) -> RadialDiagnostics:
    sol = solution
    prob = sol.problem
    pot = prob.potential
    if sol.trivial:
        raise DiagnosticUndefined("diagnostics are undefined for the trivial solution")
    if not 0 < epsilon < pot.mu - prob.boundary_value:
        raise ValueError("epsilon out of range")
    n, R, h = prob.n, prob.R, prob.h
    r, w, du = sol.r, sol.w, sol.uprime
    Wu = pot.gap(w, 0)

    plateau = plateau_radius(r, w, epsilon)
    interior = slice(1, -1)
    margin_arr = Wu[interior] - 0.5 * du[interior] ** 2
    k_min = int(np.argmin(margin_arr)) + 1

    dens = (0.5 * du**2 + Wu) * r ** (n - 1)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (dens[1:] + dens[:-1]))])
    cum *= sphere_area(n)
    sub = np.arange(sub_stride, r.size, sub_stride)
    r_sub = r[sub]
    mono = cum[sub] / r_sub ** (n - 1)

    caffa = (R - r_sub) * np.minimum(_running_min_W(pot, sol.u[sub]), Wu[sub])
    center = -pot.gap(w[0], 1) * R**2
    return RadialDiagnostics(
        epsilon=epsilon,
        plateau_width=plateau,
        layer_width=R - plateau,
        flux_sq_gap=abs(sol.flux**2 - 2 * pot.W(prob.boundary_value)),
        modica_margin=float(margin_arr.min()),
        modica_min_node=k_min,
        r_sub=r_sub,
        monotonicity_seq=mono,
        caffarelli_seq=caffa,
        center_slope_bound=float(center),
        energy_ratio=sol.energy / R ** (n - 1),
    )


def is_nondecreasing(seq, rel_tol: float = 1e-12) -> bool:
    seq = np.asarray(seq)
    return bool(np.all(np.diff(seq) >= -rel_tol * np.max(np.abs(seq))))


# -- sweeps -----------------------------------------------------------------

SWEEP_COLUMNS = (
    "R",
    "flux",
    "u0",
    "plateau_width",
    "energy_ratio",
    "decay_rate",
    "profile_gap",
    "status",
)


@dataclass
class SweepRow:
    R: float
    flux: float = float("nan")
    u0: float = float("nan")
    plateau_width: float = float("nan")
    energy_ratio: float = float("nan")
    decay_rate: float = float("nan")
    profile_gap: float = float("nan")
    status: str = "ok"
    solution: RadialSolution | None = field(default=None, repr=False)

    def values(self):
        return [getattr(self, c) for c in SWEEP_COLUMNS]


@dataclass
class SweepTable:
    template: RadialProblem
    rows: list[SweepRow]
    epsilon: float
    S: float

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def ok_rows(self):
        return [r for r in self.rows if r.status == "ok"]

    def to_csv(self) -> str:
        lines = [",".join(SWEEP_COLUMNS)]
        for row in self.rows:
            vals = [v if isinstance(v, str) else repr(float(v)) for v in row.values()]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


def decay_window(pot: Potential, R: float, epsilon: float = 0.1) -> tuple[float, float]:
    """Distance window from the boundary past the layer and before the centre."""
    s_lo = compute_Dprime(pot, min(epsilon, 0.5 * pot.mu)) + 2.0
    return s_lo, max(min(0.5 * R, s_lo + 12.0), s_lo + 1.0)


def profile_gap(sol: RadialSolution, S: float = 5.0, profile=None) -> float:
    pot = sol.problem.potential
    if profile is None:
        profile = compute_profile(pot, pot.mu * (1 - 1e-8), 2000)
    s = sol.problem.R - sol.r
    sel = s <= S
    return float(np.max(np.abs(sol.u[sel] - profile(s[sel]))))


def _sweep_row(args) -> SweepRow:
    template, R, epsilon, S, keep = args
    row = SweepRow(R=R)
    try:
        h = template.h if template.h is not None and template.h < R / 32 else None
        prob = replace(template, R=R, h=h)
        if h is None:
            prob = RadialProblem(template.n, R, template.potential, template.boundary_value)
        sol = solve_radial_minimizer(prob)
        row.flux = sol.flux
        row.u0 = float(sol.u[0])
        row.energy_ratio = sol.energy / R ** (template.n - 1)
        if sol.trivial:
            row.status = "trivial"
        else:
            row.plateau_width = plateau_radius(sol.r, sol.w, epsilon)
            try:
                row.decay_rate = fit_radial_decay(sol, model="exp").rate
            except InsufficientData:
                pass
            row.profile_gap = profile_gap(sol, S)
        if keep:
            row.solution = sol
    except Exception as exc:  # noqa: BLE001 - a failed row must not stop the sweep
        row.status = f"failed: {type(exc).__name__}"
    return row


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("ELAND_THREADS", "1")))
    except ValueError:
        return 1


def sweep_R(
    problem_template: RadialProblem,
    R_list,
    epsilon: float = 0.1,
    S: float = 5.0,
    keep_solutions: bool = True,
    workers: int | None = None,
) -> SweepTable:
    R_list = [float(R) for R in R_list]
    if any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise ValueError("R_list must be increasing")
    jobs = [(problem_template, R, epsilon, S, keep_solutions) for R in R_list]
    workers = workers or _workers()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(j) for j in jobs]
    return SweepTable(problem_template, rows, epsilon, S)


def fit_radial_decay(sol: RadialSolution, window=None, model: str | None = None) -> DecayFit:
    """Fit mu - u_R against the distance R - r to the boundary."""
    pot = sol.problem.potential
    R = sol.problem.R
    if window is None:
        window = decay_window(pot, R)
    s = R - sol.r
    if model is None:
        return fit_decay(s, sol.w, window)
    fit = fit_decay(s, sol.w, window)
    if fit.model == model:
        return fit
    lo, hi = window
    sel = (s >= lo) & (s <= hi) & (sol.w > 1e-300)
    x = s[sel] if model == "exp" else np.log(s[sel])
    y = np.log(sol.w[sel])
    slope, icpt = np.polyfit(x, y, 1)
    pred = slope * x + icpt
    r2 = 1 - np.sum((y - pred) ** 2) / np.sum((y - y.mean()) ** 2)
    return DecayFit(model, float(-slope), float(np.exp(icpt)), float(r2), window)


def dancer_ratio(sol: RadialSolution, s: float = 0.5) -> float:
    """R^-1 ln(mu - u_R(R s)); the gap is interpolated in log scale."""
    R = sol.problem.R
    logw = np.log(sol.w)
    return float(np.interp(R * s, sol.r, logw) / R)


# -- comparisons ------------------------------------------------------------


@dataclass
class OrderReport:
    min_gap: float  # min over B_R1 of u_R2 - u_R1
    barrier_violation: float  # max over [0, R2] of u_R2(R2 - r) - U(r)
    h: float


def compare_nested(sol_small: RadialSolution, sol_large: RadialSolution, profile=None) -> OrderReport:
    p1, p2 = sol_small.problem, sol_large.problem
    if p1.n != p2.n or p1.potential != p2.potential or p1.boundary_value != p2.boundary_value:
        raise DomainError("incompatible problems")
    if p1.R > p2.R:
        raise DomainError("need R1 <= R2")
    ratio = p1.h / p2.h
    if abs(ratio - round(ratio)) > 1e-9:
        raise DomainError("meshes are not commensurate")
    step = int(round(ratio))
    idx = np.arange(0, p1.K + 1) * step
    # compare in the gap variable: u2 - u1 = w1 - w2
    min_gap = float(np.min(sol_small.w - sol_large.w[idx]))
    pot = p2.potential
    if profile is None:
        profile = compute_profile(pot, pot.mu * (1 - 1e-8), 2000)
    s = p2.R - sol_large.r
    # u_R(R - s) - U(s) = gap_U(s) - w_R(R - s)
    viol = float(np.max(profile.gap_at(s) - sol_large.w))
    return OrderReport(min_gap=min_gap, barrier_violation=viol, h=p2.h)


# -- critical radius --------------------------------------------------------


def principal_dirichlet_eigenvalue(n: int) -> float:
    """lambda_1 of -Laplace on the unit ball of R^n."""
    if n == 1:
        return (math.pi / 2) ** 2
    if n == 3:
        return math.pi**2
    if n == 2:
        return float(jn_zeros(0, 1)[0] ** 2)
    raise ValueError("lambda_1 only tabulated for n <= 3; pass it explicitly")


@dataclass
class CriticalRadius:
    numeric: float
    analytic: float
    bracket: tuple[float, float]
    solves: int


class BracketError(ValueError):
    pass


def critical_radius(
    potential: Potential,
    n: int,
    bracket: tuple[float, float],
    width: float = 1e-3,
    lambda1: float | None = None,
) -> CriticalRadius:
    """Bisection on the trivial/nontrivial verdict of the radial minimizer."""
    pot = potential
    if abs(pot.dW(0.0)) > 1e-12 or not pot.d2W(0.0) < 0:
        raise DomainError("critical radius needs W'(0) = 0 and W''(0) < 0")
    lam = lambda1 if lambda1 is not None else principal_dirichlet_eigenvalue(n)
    analytic = math.sqrt(-lam / pot.d2W(0.0))

    def trivial(R):
        return solve_radial_minimizer(RadialProblem(n, R, pot)).trivial

    lo, hi = bracket
    t_lo, t_hi = trivial(lo), trivial(hi)
    solves = 2
    if t_lo == t_hi:
        raise BracketError(f"bracket {bracket} does not straddle the transition")
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        t_mid = trivial(mid)
        solves += 1
        if t_mid == t_lo:
            lo = mid
        else:
            hi = mid
    return CriticalRadius(0.5 * (lo + hi), analytic, (lo, hi), solves)


# -- centre bound -----------------------------------------------------------


def torsion_center(n: int, K: int = 400) -> float:
    """z(0) for Laplace(z) = -1 on B_1, z = 0 on the sphere (radial FD)."""
    grid = _Grid(n, 1.0, K)
    main, off = grid.bands(np.zeros(K))
    # V (-L z) = V  (boundary value 0)
    z = _solve_sym_tridiag(main, off, grid.V[:-1])
    return float(z[0])


@dataclass
class FitReport:
    slope: float
    R: np.ndarray
    values: np.ndarray
    excluded: list
    torsion_z0: float
    n: int


def center_bound_scan(sweep: SweepTable) -> FitReport:
    """Log-log slope of -W'(u_R(0)) against R."""
    pot = sweep.template.potential
    Rs, vals, excluded = [], [], []
    for row in sweep.rows:
        if row.status != "ok" or row.solution is None:
            excluded.append(row.R)
            continue
        v = -pot.gap(row.solution.w[0], 1)
        if not v > 0:
            excluded.append(row.R)
            continue
        Rs.append(row.R)
        vals.append(v)
    Rs, vals = np.array(Rs), np.array(vals)
    slope = float(np.polyfit(np.log(Rs), np.log(vals), 1)[0]) if Rs.size >= 2 else float("nan")
    n = sweep.template.n
    return FitReport(slope, Rs, vals, excluded, torsion_center(n), n)
