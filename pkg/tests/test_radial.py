import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_bvp, trapezoid
from scipy.special import jn_zeros

from eland.potentials import double_well, pure_power
from eland.profile1d import compute_profile
from eland.radial import (
    SWEEP_COLUMNS,
    DiagnosticUndefined,
    DomainError,
    RadialProblem,
    compare_nested,
    critical_radius,
    dancer_ratio,
    diagnostics,
    discrete_energy,
    fit_radial_decay,
    is_nondecreasing,
    linear_ramp_competitor,
    plateau_radius,
    principal_dirichlet_eigenvalue,
    solve_radial_minimizer,
    sweep_R,
    torsion_center,
)

DW = double_well()


@pytest.fixture(scope="module")
def sol_n2_R10():
    return solve_radial_minimizer(RadialProblem(2, 10.0, DW, h=0.005))


def _bvp_oracle(n, R, pot):
    """Independent collocation solution of u'' + (n-1)/r u' = W'(u), u'(0)=0, u(R)=0."""
    prof = compute_profile(pot, pot.mu * (1 - 1e-8), 2000)
    r = np.linspace(0, R, 400)
    y0 = np.vstack([prof(R - r), prof.derivative(R - r)])
    # singular term (n-1)/r handled through S
    S = np.array([[0.0, 0.0], [0.0, -(n - 1.0)]])

    def f(r, y):
        return np.vstack([y[1], pot.dW(y[0])])

    def bc(ya, yb):
        return np.array([ya[1], yb[0]])

    res = solve_bvp(f, bc, r, y0, S=S, tol=1e-9, max_nodes=200000)
    assert res.success
    return res


def test_against_collocation_oracle(sol_n2_R10):
    res = _bvp_oracle(2, 10.0, DW)
    u_ref = res.sol(sol_n2_R10.r)[0]
    assert np.max(np.abs(sol_n2_R10.u - u_ref)) < 1e-5
    assert sol_n2_R10.flux == pytest.approx(abs(res.sol(10.0)[1]), rel=1e-4)


def test_flux_energy_identity(sol_n2_R10):
    # d/dr (u'^2/2 - W(u)) = -(n-1) u'^2 / r, integrated from 0 to R
    sol = sol_n2_R10
    r, du = sol.r[1:], sol.uprime[1:]
    loss = trapezoid(du**2 / r, r)
    expected = 2 * DW.W(0.0) - 2 * DW.W(sol.u[0]) - 2 * loss
    assert sol.flux**2 == pytest.approx(expected, rel=2e-4)


def test_one_dimensional_first_integral():
    sol = solve_radial_minimizer(RadialProblem(1, 20.0, DW))
    # n = 1: u'^2/2 - W(u) is constant, so flux^2 = 2 W(0) - 2 W(u(0))
    # the one-sided boundary derivative is second order, error O(h^2)
    assert sol.flux**2 == pytest.approx(2 * DW.W(0.0) - 2 * DW.W(sol.u[0]), abs=1e-4)
    fine = solve_radial_minimizer(RadialProblem(1, 20.0, DW, h=0.005))
    assert abs(fine.flux - math.sqrt(0.5)) < 0.3 * abs(sol.flux - math.sqrt(0.5))
    assert diagnostics(sol, 0.1).layer_width == pytest.approx(math.sqrt(2) * math.atanh(0.9), abs=1e-3)


def test_mesh_convergence_second_order():
    u0 = [solve_radial_minimizer(RadialProblem(2, 5.0, DW, h=h)).u[0] for h in (0.04, 0.02, 0.01)]
    ratio = (u0[0] - u0[1]) / (u0[1] - u0[2])
    assert 3.5 < ratio < 4.5


def test_bounds_and_ramp(sol_n2_R10):
    sol = sol_n2_R10
    assert np.all(sol.u >= 0) and np.all(sol.u < 1)
    assert np.all(np.diff(sol.u) <= 1e-14)  # radially decreasing
    assert sol.u[-1] == 0.0
    ramp = linear_ramp_competitor(sol.problem)
    assert sol.energy < discrete_energy(sol.problem, ramp)
    assert sol.energy < discrete_energy(sol.problem, np.zeros_like(sol.u))
    assert sol.residual < 1e-8


def test_trivial_below_critical_radius():
    sol = solve_radial_minimizer(RadialProblem(1, 1.4, DW))
    assert sol.trivial
    assert np.all(sol.u == 0)
    with pytest.raises(DiagnosticUndefined):
        diagnostics(sol, 0.1)


def test_critical_radius_oracle():
    # R_c = sqrt(lambda_1 / |W''(0)|) with lambda_1 = j_{0,1}^2 for n = 2
    res = critical_radius(DW, 2, (2.0, 3.0), width=1e-3)
    assert res.analytic == pytest.approx(jn_zeros(0, 1)[0], rel=1e-12)
    assert abs(res.numeric - res.analytic) < 0.01


@pytest.mark.parametrize("n", [1, 2, 3])
def test_torsion_center(n):
    assert torsion_center(n) == pytest.approx(1 / (2 * n), abs=1e-6)
    assert principal_dirichlet_eigenvalue(n) > 0


def test_nested_ordering():
    s1 = solve_radial_minimizer(RadialProblem(2, 8.0, DW, h=0.01))
    s2 = solve_radial_minimizer(RadialProblem(2, 12.0, DW, h=0.01))
    rep = compare_nested(s1, s2)
    assert rep.min_gap >= -1e-12
    assert rep.barrier_violation <= 1e-6


def test_diagnostics(sol_n2_R10):
    d = diagnostics(sol_n2_R10, 0.1)
    assert d.modica_margin > 0
    assert is_nondecreasing(d.monotonicity_seq)
    assert d.plateau_width + d.layer_width == pytest.approx(10.0)
    # curvature widens the layer beyond the flat value D'(0.1) = 2.082
    assert 2.082 < d.layer_width < 2.5


def test_decay_rate_and_dancer_ratio():
    sol = solve_radial_minimizer(RadialProblem(1, 30.0, DW))
    assert fit_radial_decay(sol, model="exp").rate == pytest.approx(math.sqrt(2), rel=0.02)
    assert dancer_ratio(sol) == pytest.approx(-math.sqrt(0.5), rel=0.1)


def test_pure_power_decay_is_algebraic():
    sol = solve_radial_minimizer(RadialProblem(1, 40.0, pure_power(3.0)))
    fit = fit_radial_decay(sol, window=(5.0, 15.0))
    assert fit.model == "alg"


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=40), st.floats(0.01, 0.99))
def test_plateau_radius_properties(vals, eps):
    w = np.sort(np.asarray(vals))
    r = np.linspace(0, 1, w.size)
    rho = plateau_radius(r, w, eps)
    assert 0.0 <= rho <= 1.0
    assert np.all(w[r < rho - 1e-12] <= eps + 1e-12)


def test_problem_validation():
    with pytest.raises(DomainError):
        RadialProblem(0, 5.0, DW)
    with pytest.raises(DomainError):
        RadialProblem(2, -1.0, DW)
    with pytest.raises(DomainError):
        RadialProblem(2, 5.0, DW, boundary_value=1.0)
    p = RadialProblem(2, 5.0, DW, h=0.3)
    assert p.R / p.h == pytest.approx(p.K)


def test_sweep_columns():
    table = sweep_R(RadialProblem(1, 5.0, DW), [1.0, 5.0, 10.0], keep_solutions=False)
    assert table.to_csv().splitlines()[0] == ",".join(SWEEP_COLUMNS)
    assert [r.status for r in table.rows] == ["trivial", "ok", "ok"]
    with pytest.raises(ValueError):
        sweep_R(RadialProblem(1, 5.0, DW), [5.0, 1.0])
