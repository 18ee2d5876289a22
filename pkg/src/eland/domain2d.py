"""Dirichlet solutions of Laplace(u) = W'(u) on planar domains.

Discretization
--------------
Nodes ``(x_i, y_j) = (x_min + i h, y_min + j h)``.  A node is an unknown when
the shape's level set ``phi`` (positive inside) is positive there.  The
stiffness matrix ``K`` is the 5-point stencil written edge by edge, so that
``0.5 u.K.u`` is the discrete Dirichlet energy:

* an edge joining two unknowns contributes ``omega (u_a - u_b)^2 / 2``;
* an edge leaving the domain is cut at ``theta h`` (``theta`` from linear
  interpolation of ``phi``) and contributes ``omega u_a^2 / (2 theta)``.
  This is the symmetric second-order cut-cell treatment of a zero Dirichlet
  value on a curved boundary;
* ``omega = 1/2`` on edges that lie on a Neumann side, and nodal volumes are
  halved there (quartered at a Neumann corner).

With nodal volumes ``V`` the discrete equation reads
``K u + s V W'(u) = 0`` where ``s`` is an optional scale (``lambda^2`` for the
singular-perturbation experiment).  As in the radial solver the unknown is
the gap ``w = mu - u``.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from scipy.sparse.linalg import LinearOperator, minres, splu
from scipy.spatial import cKDTree

from .potentials import Potential, truncate_to_wells
from .profile1d import compute_Dprime, compute_profile
from .radial import (
    DiagnosticUndefined,
    DomainError,
    NewtonStagnation,
    RadialProblem,
    RadialSolution,
    _running_min_W,
    _workers,
    plateau_radius,
    solve_radial_minimizer,
)

SHAPES = ("rectangle", "disk", "union_of_disks", "annulus", "square_with_odd_symmetry")

NODE_BUDGET = 4_000_000


class MonotonicityBroken(RuntimeError):
    """An iterate of the monotone scheme moved the wrong way."""


class Solve2DError(RuntimeError):
    pass


class BudgetError(ValueError):
    pass


# -- domains ----------------------------------------------------------------


@dataclass(frozen=True)
class DomainSpec:
    shape: str
    params: dict
    h: float

    @classmethod
    def from_dict(cls, data: dict) -> "DomainSpec":
        if not isinstance(data, dict):
            raise DomainError("domain spec must be a JSON object")
        unknown = set(data) - {"shape", "params", "h"}
        if unknown:
            raise DomainError(f"unknown domain fields: {sorted(unknown)}")
        try:
            return cls(str(data["shape"]), dict(data.get("params", {})), float(data["h"]))
        except KeyError as exc:
            raise DomainError(f"domain spec missing {exc}") from None

    def to_dict(self) -> dict:
        return {"shape": self.shape, "params": dict(self.params), "h": self.h}

    def with_h(self, h: float) -> "DomainSpec":
        return DomainSpec(self.shape, dict(self.params), h)


@dataclass
class Domain2D:
    spec: DomainSpec
    bbox: tuple[float, float, float, float]
    x: np.ndarray
    y: np.ndarray
    phi: np.ndarray
    inside: np.ndarray
    dist: np.ndarray
    neumann: tuple[str, ...] = ()
    boundary_points: np.ndarray = field(default=None, repr=False)

    @property
    def shape(self) -> str:
        return self.spec.shape

    @property
    def h(self) -> float:
        return self.spec.h

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.inside.shape

    @property
    def n_nodes(self) -> int:
        return int(self.inside.size)

    def mesh(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    def nearest_node(self, point) -> tuple[int, int]:
        i = int(round((point[0] - self.x[0]) / self.h))
        j = int(round((point[1] - self.y[0]) / self.h))
        return min(max(i, 0), self.x.size - 1), min(max(j, 0), self.y.size - 1)

    def deepest_point(self) -> tuple[float, float]:
        i, j = np.unravel_index(np.argmax(self.dist), self.dist.shape)
        return float(self.x[i]), float(self.y[j])


def _cells(length: float, h: float, exact: bool) -> int:
    n = length / h
    m = int(round(n))
    if exact:
        if abs(n - m) > 1e-9 * max(1.0, n):
            raise DomainError(f"h = {h} does not divide the side length {length}")
        return m
    return int(math.ceil(n - 1e-9))


def _shape_geometry(shape: str, p: dict, h: float):
    """Bounding box, level set (positive inside) and Neumann sides."""
    if shape == "rectangle":
        ox, oy = p.get("origin", (0.0, 0.0))
        wdt, hgt = float(p["width"]), float(p["height"])
        if wdt <= 0 or hgt <= 0:
            raise DomainError("rectangle sides must be positive")
        nx, ny = _cells(wdt, h, True), _cells(hgt, h, True)
        bbox = (ox, ox + nx * h, oy, oy + ny * h)

        def phi(X, Y):
            return np.minimum(np.minimum(X - ox, ox + wdt - X), np.minimum(Y - oy, oy + hgt - Y))

        return bbox, (nx, ny), phi, ()
    if shape == "disk":
        cx, cy = p.get("center", (0.0, 0.0))
        r = float(p["radius"])
        if r <= 0:
            raise DomainError("disk radius must be positive")
        n = _cells(2 * r, h, False)
        bbox = (cx - r, cx - r + n * h, cy - r, cy - r + n * h)

        def phi(X, Y):
            return r - np.hypot(X - cx, Y - cy)

        return bbox, (n, n), phi, ()
    if shape == "union_of_disks":
        disks = [tuple(map(float, d)) for d in p["disks"]]
        if not disks or any(len(d) != 3 or d[2] <= 0 for d in disks):
            raise DomainError("union_of_disks needs [cx, cy, r] entries with r > 0")
        x0 = min(d[0] - d[2] for d in disks)
        x1 = max(d[0] + d[2] for d in disks)
        y0 = min(d[1] - d[2] for d in disks)
        y1 = max(d[1] + d[2] for d in disks)
        nx, ny = _cells(x1 - x0, h, False), _cells(y1 - y0, h, False)
        bbox = (x0, x0 + nx * h, y0, y0 + ny * h)

        def phi(X, Y):
            return np.max([d[2] - np.hypot(X - d[0], Y - d[1]) for d in disks], axis=0)

        return bbox, (nx, ny), phi, ()
    if shape == "annulus":
        cx, cy = p.get("center", (0.0, 0.0))
        r_in, r_out = float(p["r_in"]), float(p["r_out"])
        if not 0 < r_in < r_out:
            raise DomainError("annulus needs 0 < r_in < r_out")
        n = _cells(2 * r_out, h, False)
        bbox = (cx - r_out, cx - r_out + n * h, cy - r_out, cy - r_out + n * h)

        def phi(X, Y):
            rho = np.hypot(X - cx, Y - cy)
            return np.minimum(rho - r_in, r_out - rho)

        return bbox, (n, n), phi, ()
    if shape == "square_with_odd_symmetry":
        L = float(p["L"])
        if L <= 0:
            raise DomainError("L must be positive")
        n = _cells(L, h, True)

        def phi(X, Y):
            return np.minimum(X, Y)

        return (0.0, n * h, 0.0, n * h), (n, n), phi, ("x_max", "y_max")
    raise DomainError(f"unknown shape {shape!r}; expected one of {SHAPES}")


def build_domain(spec) -> Domain2D:
    """Grid, inside mask and distance-to-boundary field for a domain spec.

    The distance of a node is measured to the nearest sub-grid boundary
    crossing (``theta`` points on the cut edges), found with a k-d tree.
    """
    if isinstance(spec, dict):
        spec = DomainSpec.from_dict(spec)
    h = spec.h
    if not h > 0:
        raise DomainError("h must be positive")
    if spec.shape not in SHAPES:
        raise DomainError(f"unknown shape {spec.shape!r}; expected one of {SHAPES}")
    try:
        bbox, (nx, ny), phi_fn, neumann = _shape_geometry(spec.shape, spec.params, h)
    except KeyError as exc:
        raise DomainError(f"missing shape parameter {exc}") from None
    if (nx + 1) * (ny + 1) > NODE_BUDGET:
        raise BudgetError(
            f"grid of {(nx + 1) * (ny + 1)} nodes exceeds the budget of {NODE_BUDGET}"
        )
    x = bbox[0] + h * np.arange(nx + 1)
    y = bbox[2] + h * np.arange(ny + 1)
    X, Y = np.meshgrid(x, y, indexing="ij")
    phi = phi_fn(X, Y)
    inside = phi > 1e-12 * h
    if not inside.any():
        raise DomainError("domain has no interior nodes at this resolution")
    labels, count = ndimage.label(inside)
    if count > 1:
        raise DomainError(f"interior mask has {count} components (disjoint shape)")
    points = _boundary_points(x, y, phi, inside, h)
    dist = np.zeros_like(phi)
    tree = cKDTree(points)
    dist[inside] = tree.query(np.column_stack([X[inside], Y[inside]]))[0]
    return Domain2D(spec, bbox, x, y, phi, inside, dist, neumann, points)


def _theta(phi_a, phi_b):
    return np.clip(phi_a / (phi_a - np.minimum(phi_b, 0.0)), 1e-6, 1.0)


def _edges(inside):
    """Yield (slice_a, slice_b, axis) for the horizontal and vertical edges."""
    yield (slice(None, -1), slice(None)), (slice(1, None), slice(None)), 0
    yield (slice(None), slice(None, -1)), (slice(None), slice(1, None)), 1


def _boundary_points(x, y, phi, inside, h):
    X, Y = np.meshgrid(x, y, indexing="ij")
    pts = []
    for sa, sb, axis in _edges(inside):
        for src, dst, sign in ((sa, sb, 1.0), (sb, sa, -1.0)):
            cut = inside[src] & ~inside[dst]
            if not cut.any():
                continue
            th = _theta(phi[src][cut], phi[dst][cut])
            px, py = X[src][cut], Y[src][cut]
            if axis == 0:
                px = px + sign * th * h
            else:
                py = py + sign * th * h
            pts.append(np.column_stack([px, py]))
    if not pts:
        raise DomainError("domain has no boundary crossings")
    return np.concatenate(pts)


# -- discrete operator --------------------------------------------------------


@dataclass
class _Operator:
    K: sp.csc_matrix
    bnd: np.ndarray  # K applied to the constant 1 (boundary edge weights)
    V: np.ndarray
    flat: np.ndarray  # flat grid indices of the unknowns
    grid_shape: tuple[int, int]

    @property
    def size(self) -> int:
        return self.flat.size

    def scatter(self, values, fill=0.0):
        out = np.full(self.grid_shape[0] * self.grid_shape[1], fill, dtype=float)
        out[self.flat] = values
        return out.reshape(self.grid_shape)

    def gather(self, grid_values):
        return np.asarray(grid_values, dtype=float).ravel()[self.flat]

    def laplace_u(self, w, mu):
        """Discrete Laplacian of ``u = mu - w`` (zero Dirichlet data)."""
        return (self.K @ w - mu * self.bnd) / self.V

    def residual(self, w, pot: Potential, scale: float, tilt: float = 0.0):
        return self.laplace_u(w, pot.mu) - scale * (pot.gap(w, 1) + tilt)

    def energy(self, w, pot: Potential, scale: float) -> float:
        u = pot.mu - w
        return float(0.5 * u @ (self.K @ u) + scale * np.sum(self.V * pot.gap(w, 0)))


def _assemble(domain: Domain2D, inside=None, phi=None) -> _Operator:
    inside = domain.inside if inside is None else inside
    phi = domain.phi if phi is None else phi
    h = domain.h
    nx1, ny1 = inside.shape
    index = -np.ones(inside.shape, dtype=np.int64)
    index[inside] = np.arange(int(inside.sum()))
    N = int(inside.sum())
    diag = np.zeros(N)
    bnd = np.zeros(N)
    rows, cols, vals = [], [], []

    omega_x = np.ones((nx1 - 1, ny1))
    omega_y = np.ones((nx1, ny1 - 1))
    if "y_max" in domain.neumann:
        omega_x[:, -1] = 0.5
    if "x_max" in domain.neumann:
        omega_y[-1, :] = 0.5
    for (sa, sb, _), omega in zip(_edges(inside), (omega_x, omega_y)):
        both = inside[sa] & inside[sb]
        a, b, om = index[sa][both], index[sb][both], omega[both]
        rows += [a, b]
        cols += [b, a]
        vals += [-om, -om]
        np.add.at(diag, a, om)
        np.add.at(diag, b, om)
        for src, dst in ((sa, sb), (sb, sa)):
            cut = inside[src] & ~inside[dst]
            k = index[src][cut]
            wgt = omega[cut] / _theta(phi[src][cut], phi[dst][cut])
            np.add.at(diag, k, wgt)
            np.add.at(bnd, k, wgt)
    idx = np.arange(N)
    rows.append(idx)
    cols.append(idx)
    vals.append(diag)
    K = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )

    frac = np.ones(inside.shape)
    if "x_max" in domain.neumann:
        frac[-1, :] *= 0.5
    if "y_max" in domain.neumann:
        frac[:, -1] *= 0.5
    V = h * h * frac[inside]
    flat = np.flatnonzero(inside.ravel())
    return _Operator(K, bnd, V, flat, inside.shape)


def _factor(A):
    return splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})


# -- fields and reports -------------------------------------------------------


@dataclass
class GridField2D:
    """Nodal values on a grid; zero outside ``inside``."""

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray
    inside: np.ndarray
    bc: str = "dirichlet_zero"
    residual: float = float("nan")
    gap: np.ndarray | None = None  # mu - u with full relative precision
    trivial: bool = False
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.where(self.inside, self.values, 0.0)

    def interior_values(self) -> np.ndarray:
        return self.values[self.inside]

    def to_csv(self) -> str:
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        lines = ["x,y,u"]
        for row in zip(X.ravel(), Y.ravel(), self.values.ravel()):
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def _field(domain: Domain2D, op: _Operator, w, pot, scale, bc=None, **kw) -> GridField2D:
    res = float(np.max(np.abs(op.residual(w, pot, scale)))) / scale
    return GridField2D(
        x=domain.x,
        y=domain.y,
        values=op.scatter(pot.mu - w),
        inside=domain.inside,
        bc=bc or ("odd_symmetry" if domain.shape == "square_with_odd_symmetry" else "dirichlet_zero"),
        residual=res,
        gap=op.scatter(w, fill=pot.mu),
        **kw,
    )


@dataclass
class MonotoneReport:
    minimal_iterations: int
    maximal: GridField2D | None
    maximal_iterations: int
    min_to_max_gap: float  # sup |maximal - minimal|
    ordered: bool  # minimal <= maximal nodewise
    lam: float
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "minimal_iterations": self.minimal_iterations,
            "maximal_iterations": self.maximal_iterations,
            "min_to_max_gap": self.min_to_max_gap,
            "ordered": self.ordered,
            "lam": self.lam,
            "wall_time": self.wall_time,
        }


@dataclass
class Solve2DReport:
    u_min: float
    u_max: float
    epsilon: float
    D: float
    plateau_fraction: float
    R_hat: float
    plateau_holds: bool
    plateau_min_u: float
    bounds_hold: bool
    exp_fit: dict | None
    alg_exponent: float | None
    alg_window: tuple[float, float] | None
    curvature_seq: list
    energy_seq: list
    iterations: dict
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "u_min": self.u_min,
            "u_max": self.u_max,
            "epsilon": self.epsilon,
            "D": self.D,
            "plateau_fraction": self.plateau_fraction,
            "R_hat": self.R_hat,
            "plateau_holds": self.plateau_holds,
            "plateau_min_u": self.plateau_min_u,
            "bounds_hold": self.bounds_hold,
            "exp_fit": self.exp_fit,
            "alg_exponent": self.alg_exponent,
            "alg_window": list(self.alg_window) if self.alg_window else None,
            "curvature_seq": self.curvature_seq,
            "energy_seq": self.energy_seq,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
        }


# -- lower solutions ----------------------------------------------------------


def lower_solution_field(domain: Domain2D, radial: RadialSolution, center) -> GridField2D:
    """``u_R(|x - P|)`` on ``B_R(P)`` extended by zero."""
    R = radial.problem.R
    pot = radial.problem.potential
    P = (float(center[0]), float(center[1]))
    X, Y = domain.mesh()
    rho = np.hypot(X - P[0], Y - P[1])
    d_P = _distance_at(domain, P)
    if not d_P > R:
        raise DomainError(f"ball of radius {R} at {P} not inside the domain (dist {d_P:.4g})")
    ball = (rho < R) & domain.inside
    gap = np.interp(rho, radial.r, radial.w)
    values = np.where(ball, pot.mu - gap, 0.0)
    return GridField2D(
        x=domain.x,
        y=domain.y,
        values=values,
        inside=domain.inside,
        gap=np.where(ball, gap, pot.mu),
        info={"center": list(P), "R": R},
    )


def _distance_at(domain: Domain2D, point) -> float:
    """Distance from an interior point to the sampled boundary (0 outside)."""
    X0, X1, Y0, Y1 = domain.bbox
    if not (X0 <= point[0] <= X1 and Y0 <= point[1] <= Y1):
        return 0.0
    if not domain.inside[domain.nearest_node(point)]:
        return 0.0
    tree = cKDTree(domain.boundary_points)
    return float(tree.query(np.asarray(point, dtype=float))[0])


def _ball_subsolution(domain: Domain2D, pot: Potential, lower: GridField2D, tilt: float, tol: float):
    """Discrete solution of ``Laplace v = W'(v) + tilt`` on the ball of ``lower``.

    Extended by zero, ``v`` satisfies ``Laplace_h v - W'(v) >= tilt - tol`` at
    ball nodes and is therefore a strict discrete lower solution on the whole
    grid.  It starts from the interpolated radial profile.
    """
    P = lower.info["center"]
    R = lower.info["R"]
    X, Y = domain.mesh()
    phi_ball = R - np.hypot(X - P[0], Y - P[1])
    ball = (phi_ball > 1e-12 * domain.h) & domain.inside
    op = _assemble(domain, inside=ball, phi=phi_ball)
    w0 = op.gather(lower.gap)
    w, it, res = _sattinger(op, pot, w0, 1.0, tilt=tilt, tol=tol, project=(0.0, pot.mu))
    return op.scatter(w, fill=pot.mu), it


def _sattinger(
    op: _Operator,
    pot: Potential,
    w,
    scale: float,
    tilt: float = 0.0,
    tol: float = 1e-8,
    inc_tol: float | None = None,
    max_iter: int = 20000,
    project=None,
    direction: int = 0,
    order_tol: float = 1e-12,
    lu=None,
):
    """Fixed-point iteration ``(K + Lam s V) w+ = mu bnd + s V (Lam w + W'(u) + tilt)``.

    ``direction`` = -1 demands a nodewise nonincreasing gap (increasing u),
    +1 a nondecreasing one; a violation beyond ``order_tol`` raises.
    Stops when the residual is below ``tol`` and (if given) the sup increment
    below ``inc_tol``.
    """
    lam = pot.max_abs_d2W + 1.0
    if lu is None:
        lu = _factor(op.K + sp.diags(lam * scale * op.V))
    mu = pot.mu
    w = np.array(w, dtype=float)
    inc = np.inf
    for it in range(max_iter + 1):
        res = float(np.max(np.abs(op.residual(w, pot, scale, tilt)))) / scale
        if it > 0 and res <= tol and (inc_tol is None or inc <= inc_tol):
            return w, it, res
        if it == max_iter:
            break
        rhs = mu * op.bnd + scale * op.V * (lam * w + pot.gap(w, 1) + tilt)
        new = lu.solve(rhs)
        if project is not None:
            new = np.clip(new, *project)
        step = new - w
        if direction and np.max(direction * -step) > order_tol:
            k = int(np.argmax(direction * -step))
            raise MonotonicityBroken(
                f"iterate {it + 1} moved against the ordering by {float(-direction * step[k]):.3e}"
            )
        inc = float(np.max(np.abs(step)))
        w = new
    raise Solve2DError(f"fixed-point iteration did not converge in {max_iter} steps (residual {res:.3e})")


def _monotone_run(op, pot, w0, direction, tol, polish_from, order_tol, lu, max_iter):
    """Monotone phase, then Newton polish checked against the last iterate."""
    if polish_from is None:
        w, it, _ = _sattinger(
            op, pot, w0, 1.0, tol=tol, inc_tol=tol, direction=direction,
            order_tol=order_tol, lu=lu, max_iter=max_iter,
        )
        return w, it, 0
    w, it, _ = _sattinger(
        op, pot, w0, 1.0, tol=np.inf, inc_tol=polish_from, direction=direction,
        order_tol=order_tol, lu=lu, max_iter=max_iter,
    )
    try:
        polished, _, steps = _newton(op, pot, w, 1.0, min(tol, 1e-10), lu)
    except NewtonStagnation:
        w, more, _ = _sattinger(
            op, pot, w, 1.0, tol=tol, inc_tol=tol, direction=direction,
            order_tol=order_tol, lu=lu, max_iter=max_iter,
        )
        return w, it + more, 0
    # the fixed point lies beyond every iterate in the direction of motion
    if np.max(direction * (w - polished)) > order_tol:
        raise MonotonicityBroken("polished limit falls behind the last monotone iterate")
    return polished, it, steps


def solve_monotone(
    domain: Domain2D,
    potential: Potential,
    lower: GridField2D,
    tol: float = 1e-8,
    maximal: bool = True,
    order_tol: float = 1e-12,
    tilt: float = 1e-6,
    polish_from: float | None = 1e-6,
    max_iter: int = 20000,
) -> tuple[GridField2D, MonotoneReport]:
    """Minimal solution above ``lower`` by monotone (Sattinger) iteration.

    ``lower`` is first replaced by a strict discrete lower solution: the ball
    problem with ``W'`` raised by ``tilt`` is solved on the same grid, starting
    from the interpolated radial profile (a ``lower`` without ball data is
    used as given).  The iteration runs until the sup increment drops below
    ``polish_from`` and is then finished by Newton; the polished limit must
    lie above the last iterate.  ``polish_from=None`` iterates to ``tol``.
    With ``maximal`` a second run from the constant ``mu`` gives the maximal
    solution.
    """
    t0 = time.perf_counter()
    pot = potential
    op = _assemble(domain)
    lam = pot.max_abs_d2W + 1.0
    lu = _factor(op.K + sp.diags(lam * op.V))
    if "center" in lower.info:
        gap0, _ = _ball_subsolution(domain, pot, lower, tilt, 0.1 * tilt)
    else:
        gap0 = lower.gap if lower.gap is not None else pot.mu - lower.values
    w0 = op.gather(gap0)
    w_min, it_min, nt_min = _monotone_run(op, pot, w0, -1, tol, polish_from, order_tol, lu, max_iter)
    minimal = _field(domain, op, w_min, pot, 1.0, info={"route": "monotone", "newton_steps": nt_min})
    max_field, it_max, gap, ordered = None, 0, float("nan"), True
    if maximal:
        w_max, it_max, nt_max = _monotone_run(
            op, pot, np.zeros(op.size), 1, tol, polish_from, order_tol, lu, max_iter
        )
        max_field = _field(
            domain, op, w_max, pot, 1.0, info={"route": "monotone_from_mu", "newton_steps": nt_max}
        )
        # maximal has the smaller gap
        gap = float(np.max(np.abs(w_min - w_max)))
        ordered = bool(np.all(w_max <= w_min + 1e-12))
    report = MonotoneReport(
        minimal_iterations=it_min,
        maximal=max_field,
        maximal_iterations=it_max,
        min_to_max_gap=gap,
        ordered=ordered,
        lam=lam,
        wall_time=time.perf_counter() - t0,
    )
    return minimal, report


# -- energy minimization -------------------------------------------------------


def _initial_gap(domain: Domain2D, pot: Potential, scale: float):
    try:
        prof = compute_profile(pot, pot.mu * (1 - 1e-8), 2000)
        g = prof.gap_at(domain.dist * math.sqrt(scale))
    except Exception:
        g = np.full(domain.dist.shape, 0.5 * pot.mu)
    return np.clip(g, 0.0, pot.mu)


def _newton(op: _Operator, pot, w, scale, tol, lu_pre, max_steps=30):
    """Damped Newton with MINRES solves preconditioned by the flow factor."""
    F = op.residual(w, pot, scale)
    res = float(np.max(np.abs(F))) / scale
    M = LinearOperator((op.size, op.size), matvec=lu_pre.solve, dtype=float)
    steps = 0
    polished = False
    while steps < max_steps:
        if res <= tol:
            if polished:
                break
            polished = True
        J = op.K + sp.diags(scale * op.V * pot.gap(w, 2))
        delta, info = minres(J, -op.V * F, M=M, rtol=1e-12, maxiter=500)
        if info < 0:
            raise NewtonStagnation(f"MINRES breakdown ({info})", res)
        t = 1.0
        while True:
            trial = w + t * delta
            Ft = op.residual(trial, pot, scale)
            rt = float(np.max(np.abs(Ft))) / scale
            if rt <= (1 - 1e-4 * t) * res or (polished and rt <= tol):
                break
            t *= 0.5
            if t < 1e-8:
                if res <= tol:
                    return w, res, steps
                raise NewtonStagnation(f"Newton stagnated at residual {res:.3e}", res)
        w, F, res = trial, Ft, rt
        steps += 1
    if res > tol:
        raise NewtonStagnation(f"Newton did not converge: residual {res:.3e}", res)
    return w, res, steps


def plateau_competitor(domain: Domain2D, pot: Potential, width: float = 1.0):
    """Gap of ``mu min(dist / width, 1)``: the plateau with a linear ramp."""
    return pot.mu * (1.0 - np.clip(domain.dist / width, 0.0, 1.0))


def solve_minimizer_2d(
    domain: Domain2D,
    potential: Potential,
    scale: float = 1.0,
    flow_tol: float = 1e-4,
    newton_tol: float = 1e-10,
    max_flow_iter: int = 20000,
) -> GridField2D:
    """Discrete global-minimizer candidate by projected flow and Newton polish.

    Solves ``Laplace u = scale W'(u)``.  The result is compared with the zero
    field and with the plateau competitor; when the competitor has lower
    energy the flow is restarted from it.
    """
    t0 = time.perf_counter()
    pot = potential
    op = _assemble(domain)
    lam = pot.max_abs_d2W + 1.0
    lu = _factor(op.K + sp.diags(lam * scale * op.V))
    lo = min(0.0, pot.mu_minus)
    box = (0.0, pot.mu - lo)
    h = domain.h
    floor = 8 * np.finfo(float).eps * (4 * pot.mu / (h * h * scale) + 1.0)
    tol = max(newton_tol, 10 * floor)

    def descend(w):
        w, it, _ = _sattinger(op, pot, w, scale, tol=flow_tol, project=box, lu=lu, max_iter=max_flow_iter)
        try:
            w, res, steps = _newton(op, pot, w, scale, tol, lu)
        except NewtonStagnation:
            w, more, res = _sattinger(op, pot, w, scale, tol=tol, project=box, lu=lu, max_iter=max_flow_iter)
            it, steps = it + more, 0
        return np.clip(w, *box), it, steps

    w, it, steps = descend(op.gather(_initial_gap(domain, pot, scale)))
    J = op.energy(w, pot, scale)
    comp = op.gather(plateau_competitor(domain, pot, 1.0 / math.sqrt(scale)))
    J_comp = op.energy(comp, pot, scale)
    restarted = False
    if J_comp < J:
        w2, it2, steps2 = descend(comp)
        J2 = op.energy(w2, pot, scale)
        if J2 < J:
            w, J, it, steps, restarted = w2, J2, it + it2, steps + steps2, True
    zero = np.full(op.size, pot.mu)
    J_zero = op.energy(zero, pot, scale)
    trivial = not J < J_zero - 1e-13 * max(abs(J_zero), 1.0)
    if trivial:
        w, J = zero, J_zero
    return _field(
        domain,
        op,
        w,
        pot,
        scale,
        trivial=bool(trivial),
        info={
            "route": "minimizer",
            "energy": J,
            "energy_zero": J_zero,
            "energy_competitor": J_comp,
            "restarted_from_competitor": restarted,
            "flow_iterations": it,
            "newton_steps": steps,
            "scale": scale,
            "wall_time": time.perf_counter() - t0,
        },
    )


def field_energy(domain: Domain2D, potential: Potential, field_: GridField2D, scale: float = 1.0) -> float:
    op = _assemble(domain)
    return op.energy(potential.mu - op.gather(field_.values), potential, scale)


# -- verification of the estimates ---------------------------------------------


def _cover_radius(domain: Domain2D, bad: np.ndarray, D: float) -> float:
    """Smallest R with no ``bad`` node in the union of ``B(P, dist(P) - D)``, dist(P) > R."""
    X, Y = domain.mesh()
    cand = domain.inside & (domain.dist > D)
    cx, cy, cd = X[cand], Y[cand], domain.dist[cand]
    R_hat = 0.0
    for bx, by in zip(X[bad], Y[bad]):
        covers = cd - np.hypot(cx - bx, cy - by) >= D
        if covers.any():
            R_hat = max(R_hat, float(cd[covers].max()))
    return R_hat


def _binned_max(d, vals, width):
    """(bin centre, max) pairs over bins of ``d``."""
    if d.size == 0:
        return []
    k = np.floor(d / width).astype(int)
    out = []
    for b in np.unique(k):
        sel = k == b
        out.append([float((b + 0.5) * width), float(np.max(vals[sel]))])
    return out


def _envelope(d, gap, lo, hi, width):
    sel = (d >= lo) & (d <= hi) & (gap > 0)
    pairs = _binned_max(d[sel], gap[sel], width)
    if not pairs:
        return np.empty(0), np.empty(0)
    arr = np.array(pairs)
    return arr[:, 0], arr[:, 1]


def verify_main_theorem(
    u: GridField2D,
    domain: Domain2D,
    potential: Potential,
    epsilon: float,
    D: float,
    alg_window: tuple[float, float] | None = None,
) -> Solve2DReport:
    """Plateau radius, lower bound, decay fits and curvature-type sequences.

    ``R_hat`` is the smallest ``R`` such that ``u >= mu - eps`` on every ball
    ``B(P, dist(P) - D)`` with ``dist(P) > R``.  The lower bound is then checked
    on ``Omega_R + B_(R - D)``.  Decay fits use the upper envelope of
    ``mu - u`` over distance bins of width ``h``.
    """
    t0 = time.perf_counter()
    pot = potential
    mu = pot.mu
    if u.trivial or np.max(u.interior_values()) <= 0:
        raise DiagnosticUndefined("trivial solution: estimates are undefined")
    if not D > compute_Dprime(pot, epsilon):
        raise ValueError("need D > D'(eps)")
    h = domain.h
    inside = domain.inside
    dist = domain.dist
    gap = u.gap if u.gap is not None else mu - u.values
    vals = u.values[inside]
    bounds = bool(np.all(vals > 0) and np.all(gap[inside] > 0))

    bad = inside & (u.values < mu - epsilon) & (dist >= D)
    R_hat = max(_cover_radius(domain, bad, D), D)
    omega_R = inside & (dist > R_hat)
    if omega_R.any() and R_hat > D:
        near = ndimage.distance_transform_edt(~omega_R, sampling=h)
        region = inside & (near < R_hat - D)
    else:
        region = inside & (dist >= D)
    plateau_min = float(np.min(u.values[region])) if region.any() else float("nan")
    plateau_ok = bool(region.any() and plateau_min >= mu - epsilon)

    d_in, g_in = dist[inside], gap[inside]
    dmax = float(d_in.max())
    exp_fit = None
    if abs(pot.gap(0.0, 2)) > 1e-12:
        xs, ys = _envelope(d_in, g_in, 2.0, dmax - 2.0, h)
        if xs.size >= 8:
            slope, icpt = np.polyfit(xs, np.log(ys), 1)
            k = float(-slope)
            K_env = float(np.max(g_in * np.exp(k * d_in)))
            exp_fit = {"k": k, "K_fit": float(np.exp(icpt)), "K_bound": K_env, "window": [2.0, dmax - 2.0]}
    alg = None
    win = None
    if pot.kind == "pure_power":
        win = alg_window or (dmax / 6, dmax / 2)
        xs, ys = _envelope(d_in, g_in, win[0], win[1], h)
        if xs.size >= 8:
            alg = float(-np.polyfit(np.log(xs), np.log(ys), 1)[0])

    sel = d_in > R_hat
    caf = _binned_max(d_in[sel], d_in[sel] ** 2 * (-pot.gap(g_in[sel], 1)), 1.0)
    energy = _binned_max(d_in[sel], d_in[sel] * _running_min_W(pot, vals[sel]), 1.0)
    return Solve2DReport(
        u_min=float(vals.min()),
        u_max=float(vals.max()),
        epsilon=epsilon,
        D=D,
        plateau_fraction=float(np.mean(vals >= mu - epsilon)),
        R_hat=float(R_hat),
        plateau_holds=plateau_ok,
        plateau_min_u=plateau_min,
        bounds_hold=bounds,
        exp_fit=exp_fit,
        alg_exponent=alg,
        alg_window=tuple(win) if win else None,
        curvature_seq=caf,
        energy_seq=energy,
        iterations={k: v for k, v in u.info.items() if "iter" in k or "steps" in k},
        wall_time=time.perf_counter() - t0,
    )


# -- boundary-layer experiment ---------------------------------------------------


LAYER_COLUMNS = ("dim", "lam", "h", "nodes", "width", "width_lambda", "status")


@dataclass
class LayerRow:
    dim: int
    lam: float
    h: float
    nodes: int
    width: float
    width_lambda: float
    status: str = "ok"

    def values(self):
        return [self.dim, self.lam, self.h, self.nodes, self.width, self.width_lambda, self.status]


@dataclass
class LayerTable:
    rows: list[LayerRow]
    epsilon: float
    target: float  # D'(eps)

    def to_csv(self) -> str:
        lines = [",".join(LAYER_COLUMNS)]
        for r in self.rows:
            lines.append(",".join(v if isinstance(v, str) else repr(v) for v in r.values()))
        return "\n".join(lines) + "\n"

    def select(self, dim: int) -> list[LayerRow]:
        return [r for r in self.rows if r.dim == dim]


def layer_width(u: GridField2D, domain: Domain2D, level: float) -> float:
    """``inf{d : u >= level wherever dist >= d}`` on the edge-wise linear interpolant."""
    inside, dist, vals = domain.inside, domain.dist, u.values
    bad = inside & (vals < level)
    if not bad.any():
        return 0.0
    if bad.sum() == inside.sum():
        raise DiagnosticUndefined("no node reaches the level: layer width undefined")
    width = float(dist[bad].max())
    for sa, sb, _ in _edges(inside):
        both = inside[sa] & inside[sb]
        ua, ub = vals[sa][both], vals[sb][both]
        da, db = dist[sa][both], dist[sb][both]
        cross = (ua - level) * (ub - level) < 0
        if cross.any():
            t = (level - ua[cross]) / (ub[cross] - ua[cross])
            width = max(width, float(np.max(da[cross] + t * (db[cross] - da[cross]))))
    return width


def _layer_2d(args):
    spec, pot, lam, eps, h_factor = args
    h = h_factor / lam
    try:
        dom = build_domain(spec.with_h(h))
    except BudgetError as exc:
        raise BudgetError(f"{exc}; use a smaller lambda than {lam}") from None
    u = solve_minimizer_2d(dom, pot, scale=lam * lam)
    if u.trivial:
        return LayerRow(2, lam, h, dom.n_nodes, float("nan"), float("nan"), "trivial")
    w = layer_width(u, dom, pot.mu - eps)
    return LayerRow(2, lam, h, dom.n_nodes, w, w * lam)


def _layer_1d(args):
    length, pot, lam, eps, h_stretched = args
    # Laplace u = lam^2 W'(u) on an interval of length L is the radial n = 1
    # problem on the ball of radius lam L / 2 in the stretched variable
    prob = RadialProblem(1, 0.5 * lam * length, pot, h=h_stretched)
    sol = solve_radial_minimizer(prob)
    nodes = prob.K + 1
    if sol.trivial:
        return LayerRow(1, lam, h_stretched / lam, nodes, float("nan"), float("nan"), "trivial")
    width_s = prob.R - plateau_radius(sol.r, sol.w, eps)
    return LayerRow(1, lam, h_stretched / lam, nodes, width_s / lam, width_s)


def layer_experiment(
    spec,
    potential: Potential,
    lambdas,
    epsilon: float,
    h_factor: float = 0.2,
    analog_length: float = 1.0,
    analog_lambdas=None,
    analog_h: float = 0.01,
) -> LayerTable:
    """Boundary-layer width of ``Laplace u = lambda^2 W'(u)`` versus ``lambda``.

    The 2-D rows use ``h = h_factor / lambda``; the 1-D analog rows solve the
    interval of length ``analog_length`` with stretched spacing ``analog_h``.
    Either part may be skipped by passing ``spec=None`` or empty lambdas.
    """
    pot = potential
    if not 0 < epsilon < pot.mu:
        raise ValueError("epsilon must lie in (0, mu)")
    lambdas = [float(v) for v in (lambdas or [])]
    analog = [float(v) for v in (analog_lambdas if analog_lambdas is not None else lambdas)]
    if any(v < 10 for v in lambdas + analog):
        raise ValueError("lambda values must be >= 10")
    if h_factor > 0.2:
        raise ValueError("mesh must satisfy h <= 0.2 / lambda")
    if spec is not None:
        spec = DomainSpec.from_dict(spec) if isinstance(spec, dict) else spec
        for lam in lambdas:
            # budget check before any solve starts
            build_probe = _cells_estimate(spec, h_factor / lam)
            if build_probe > NODE_BUDGET:
                raise BudgetError(
                    f"lambda = {lam} needs about {build_probe} nodes (> {NODE_BUDGET}); use a smaller lambda"
                )
    jobs_2d = [(spec, pot, lam, epsilon, h_factor) for lam in lambdas] if spec is not None else []
    jobs_1d = [(analog_length, pot, lam, epsilon, analog_h) for lam in analog]
    workers = _workers()
    if workers > 1 and len(jobs_2d) + len(jobs_1d) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_layer_1d, jobs_1d)) + list(ex.map(_layer_2d, jobs_2d))
    else:
        rows = [_layer_1d(j) for j in jobs_1d] + [_layer_2d(j) for j in jobs_2d]
    return LayerTable(rows, epsilon, compute_Dprime(pot, epsilon))


def _cells_estimate(spec: DomainSpec, h: float) -> int:
    bbox, (nx, ny), _, _ = _shape_geometry(spec.shape, spec.params, h)
    return (nx + 1) * (ny + 1)


# -- ordered multi-well solutions ------------------------------------------------


@dataclass
class MultiwellResult:
    fields: list[GridField2D]
    potentials: list[Potential]
    min_gaps: list[float]  # min over interior of u_i - u_(i-1)
    plateau_ok: list[bool]
    failure_index: int | None = None

    def to_dict(self) -> dict:
        return {
            "count": len(self.fields),
            "min_gaps": self.min_gaps,
            "plateau_ok": self.plateau_ok,
            "failure_index": self.failure_index,
            "maxima": [float(f.values.max()) for f in self.fields],
        }


def multiwell_ordered(
    domain: Domain2D,
    potential: Potential,
    epsilon: float,
    ball_margin: float = 1.0,
    radial_h: float = 0.01,
) -> MultiwellResult:
    """Ordered solutions ``u_1 < ... < u_m`` from truncated potentials.

    Well ``i`` uses the truncated potential, the constant ``mu_i`` as upper
    solution and ``max(u_(i-1), ball lower solution)`` as lower solution; the
    ball sits at the deepest node with radius ``dist - ball_margin``.
    """
    wells = potential.wells
    if potential.kind != "multi_well" or not wells:
        raise ValueError("multiwell_ordered needs a multi_well potential")
    locs = [w[0] for w in wells]
    gaps_mu = np.diff([0.0] + locs)
    if not 0 < epsilon < float(np.min(gaps_mu)):
        raise ValueError("epsilon must lie in (0, min(mu_i - mu_(i-1)))")
    P = domain.deepest_point()
    R = float(domain.dist.max()) - ball_margin
    if R <= 0:
        raise DomainError("domain too small for a ball lower solution")
    fields_, pots, min_gaps, plateau = [], [], [], []
    prev = None
    X, Y = domain.mesh()
    for i in range(1, len(wells) + 1):
        pot_i = truncate_to_wells(potential, i)
        radial = solve_radial_minimizer(RadialProblem(2, R, pot_i, h=radial_h))
        if radial.trivial:
            return MultiwellResult(fields_, pots, min_gaps, plateau, failure_index=i)
        lower = lower_solution_field(domain, radial, P)
        ball_gap, _ = _ball_subsolution(domain, pot_i, lower, 1e-6, 1e-7)
        # gap with respect to mu_i of max(u_(i-1), ball) is the min of gaps
        start = ball_gap if prev is None else np.minimum(ball_gap, pot_i.mu - prev.values)
        start_field = GridField2D(domain.x, domain.y, pot_i.mu - start, domain.inside, gap=start)
        try:
            u_i, _ = solve_monotone(domain, pot_i, start_field, maximal=False)
        except MonotonicityBroken:
            return MultiwellResult(fields_, pots, min_gaps, plateau, failure_index=i)
        if prev is not None:
            gap_i = float(np.min((u_i.values - prev.values)[domain.inside]))
            min_gaps.append(gap_i)
            if not gap_i > 0:
                fields_.append(u_i)
                pots.append(pot_i)
                return MultiwellResult(fields_, pots, min_gaps, plateau, failure_index=i)
        inner = domain.inside & (np.hypot(X - P[0], Y - P[1]) < R - 2 * ball_margin)
        plateau.append(bool(np.all(u_i.values[inner] > pot_i.mu - epsilon)))
        fields_.append(u_i)
        pots.append(pot_i)
        prev = u_i
    return MultiwellResult(fields_, pots, min_gaps, plateau)


# -- saddle demo -------------------------------------------------------------------


@dataclass
class SaddleResult:
    quadrant: GridField2D
    full: GridField2D
    flux_x2: np.ndarray
    flux: np.ndarray
    sign_ok: bool
    positive_ok: bool
    axis_jump: float
    trivial: bool

    def flux_at(self, x2: float) -> float:
        return float(np.interp(x2, self.flux_x2, self.flux))

    def flux_csv(self) -> str:
        lines = ["x2,flux"]
        for a, b in zip(self.flux_x2, self.flux):
            lines.append(f"{float(a)!r},{float(b)!r}")
        return "\n".join(lines) + "\n"


def saddle_demo(L: float, potential: Potential, h: float = 0.05) -> SaddleResult:
    """Quadrant solution with zero data on the axes, reflected oddly to ``[-L, L]^2``."""
    if not potential.is_even:
        raise ValueError("saddle demo needs an even potential")
    if L < 20:
        raise ValueError("need L >= 20")
    dom = build_domain(DomainSpec("square_with_odd_symmetry", {"L": L}, h))
    u = solve_minimizer_2d(dom, potential)
    q = u.values
    # full grid: index 0 of the quadrant is the axis
    full = np.zeros((2 * q.shape[0] - 1, 2 * q.shape[1] - 1))
    n0, n1 = q.shape
    full[n0 - 1 :, n1 - 1 :] = q
    full[: n0 - 1, n1 - 1 :] = -q[:0:-1, :]
    full[n0 - 1 :, : n1 - 1] = -q[:, :0:-1]
    full[: n0 - 1, : n1 - 1] = q[:0:-1, :0:-1]
    xs = np.concatenate([-dom.x[:0:-1], dom.x])
    ys = np.concatenate([-dom.y[:0:-1], dom.y])
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    full_field = GridField2D(xs, ys, full, np.ones_like(full, dtype=bool), bc="odd_symmetry", residual=u.residual)
    sign_ok = bool(np.all(full * X * Y >= 0))
    # jump across the axes: the reflected values on both sides of x = 0 meet at 0
    axis_jump = float(max(np.max(np.abs(full[n0 - 1, :])), np.max(np.abs(full[:, n1 - 1]))))
    positive_ok = bool(np.all(q[1:, 1:] > 0))
    # one-sided second-order d u / d x1 at x1 = 0
    flux = (4 * q[1, :] - q[2, :]) / (2 * h)
    return SaddleResult(
        quadrant=u,
        full=full_field,
        flux_x2=dom.y.copy(),
        flux=flux,
        sign_ok=sign_ok,
        positive_ok=positive_ok,
        axis_jump=axis_jump,
        trivial=u.trivial,
    )


def report_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
