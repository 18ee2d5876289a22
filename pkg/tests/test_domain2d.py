import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from eland.domain2d import (
    LAYER_COLUMNS,
    BudgetError,
    DomainError,
    DomainSpec,
    _assemble,
    build_domain,
    field_energy,
    layer_experiment,
    lower_solution_field,
    multiwell_ordered,
    plateau_competitor,
    saddle_demo,
    solve_minimizer_2d,
    solve_monotone,
    verify_main_theorem,
)
from eland.potentials import double_well, multi_well
from eland.radial import RadialProblem, solve_radial_minimizer

DW = double_well()


def _poisson(spec, f):
    """Solve -Laplace z = f with the assembled operator; returns (domain, z on grid)."""
    dom = build_domain(spec)
    op = _assemble(dom)
    X, Y = dom.mesh()
    rhs = op.V * op.gather(f(X, Y))
    z = spla.spsolve(op.K.tocsc(), rhs)
    return dom, op.scatter(z)


def test_rectangle_poisson_second_order():
    errs = []
    for h in (0.1, 0.05, 0.025):
        spec = DomainSpec("rectangle", {"width": 1.0, "height": 1.0}, h)
        dom, z = _poisson(spec, lambda X, Y: 2 * np.pi**2 * np.sin(np.pi * X) * np.sin(np.pi * Y))
        X, Y = dom.mesh()
        errs.append(np.max(np.abs(z - np.sin(np.pi * X) * np.sin(np.pi * Y))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.9)


def test_disk_poisson_cut_cells_converge():
    # -Laplace z = 1 on the unit disk: z = (1 - r^2) / 4
    errs = []
    for h in (0.1, 0.05, 0.025):
        dom, z = _poisson(DomainSpec("disk", {"radius": 1.0}, h), lambda X, Y: np.ones_like(X))
        X, Y = dom.mesh()
        exact = np.where(dom.inside, (1 - X**2 - Y**2) / 4, 0.0)
        errs.append(np.max(np.abs(z - exact)))
    assert errs[0] < 0.02
    assert errs[2] < errs[1] < errs[0]
    assert errs[0] / errs[2] > 3.5  # at least first order


def test_neumann_sides():
    # z = sin(pi x / 2L) sin(pi y / 2L) vanishes on the axes and is flat at x, y = L
    L = 1.0
    k = np.pi / (2 * L)
    dom, z = _poisson(
        DomainSpec("square_with_odd_symmetry", {"L": L}, 0.025),
        lambda X, Y: 2 * k**2 * np.sin(k * X) * np.sin(k * Y),
    )
    X, Y = dom.mesh()
    assert np.max(np.abs(z - np.sin(k * X) * np.sin(k * Y))) < 2e-3


@settings(max_examples=15, deadline=None)
@given(st.floats(1.0, 4.0), st.sampled_from([0.05, 0.1, 0.2]), st.floats(-1, 1), st.floats(-1, 1))
def test_disk_distance_field(radius, h, cx, cy):
    dom = build_domain(DomainSpec("disk", {"center": [cx, cy], "radius": radius}, h))
    X, Y = dom.mesh()
    exact = radius - np.hypot(X - cx, Y - cy)
    assert np.max(np.abs(dom.dist - exact)[dom.inside]) <= 2 * h
    assert np.all(dom.dist[~dom.inside] == 0)


def test_rectangle_distance_exact_on_axes():
    dom = build_domain(DomainSpec("rectangle", {"width": 30, "height": 30}, 0.5))
    i, j = dom.nearest_node((15, 15))
    assert dom.dist[i, j] == pytest.approx(15.0)
    assert dom.deepest_point() == pytest.approx((15.0, 15.0))


def test_spec_validation():
    with pytest.raises(DomainError):
        DomainSpec.from_dict({"shape": "disk", "params": {"radius": 1}, "h": 0.1, "extra": 1})
    with pytest.raises(DomainError):
        build_domain(DomainSpec("rectangle", {"width": 1.0, "height": 1.0}, 0.3))
    with pytest.raises(DomainError):
        build_domain(DomainSpec("hexagon", {}, 0.1))
    with pytest.raises(DomainError):
        build_domain(DomainSpec("disk", {}, 0.1))
    with pytest.raises(DomainError):
        build_domain(DomainSpec("union_of_disks", {"disks": [[0, 0, 1], [5, 0, 1]]}, 0.1))
    with pytest.raises(BudgetError):
        build_domain(DomainSpec("disk", {"radius": 10.0}, 0.001))
    spec = DomainSpec("annulus", {"r_in": 1.0, "r_out": 2.0}, 0.1)
    assert DomainSpec.from_dict(spec.to_dict()) == spec


@pytest.fixture(scope="module")
def square12():
    dom = build_domain(DomainSpec("rectangle", {"width": 12, "height": 12}, 0.1))
    radial = solve_radial_minimizer(RadialProblem(2, 4.0, DW))
    lower = lower_solution_field(dom, radial, (6.0, 6.0))
    mono, rep = solve_monotone(dom, DW, lower)
    mini = solve_minimizer_2d(dom, DW)
    return dom, lower, mono, rep, mini


def test_monotone_and_minimizer_agree(square12):
    dom, lower, mono, rep, mini = square12
    assert rep.ordered and rep.min_to_max_gap < 1e-10
    assert np.max(np.abs(mono.values - mini.values)) < 5e-3
    assert mono.residual < 1e-8 and mini.residual < 1e-8


def test_solution_above_lower_solution(square12):
    dom, lower, mono, _, _ = square12
    assert np.all(mono.values >= lower.values - 1e-12)
    assert np.all(mono.values[dom.inside] > 0) and np.all(mono.values < 1)


def test_minimizer_energy_beats_competitors(square12):
    dom, _, _, _, mini = square12
    J = field_energy(dom, DW, mini)
    assert J == pytest.approx(mini.info["energy"], rel=1e-12)
    assert J < mini.info["energy_zero"]
    assert J <= mini.info["energy_competitor"]
    comp = plateau_competitor(dom, DW)
    assert comp.shape == dom.grid_shape


def test_main_theorem_report(square12):
    dom, _, mono, _, _ = square12
    rep = verify_main_theorem(mono, dom, DW, 0.1, 2.6)
    assert rep.bounds_hold and rep.plateau_holds
    assert rep.plateau_min_u >= 0.9
    assert rep.exp_fit["k"] == pytest.approx(math.sqrt(2), rel=0.15)


def test_field_csv(square12):
    dom, _, mono, _, _ = square12
    lines = mono.to_csv().splitlines()
    assert lines[0] == "x,y,u"
    assert len(lines) == dom.n_nodes + 1


def test_lower_solution_must_fit(square12):
    dom = square12[0]
    radial = solve_radial_minimizer(RadialProblem(2, 4.0, DW))
    with pytest.raises(DomainError):
        lower_solution_field(dom, radial, (2.0, 6.0))


def test_layer_width_one_dimensional():
    table = layer_experiment(None, DW, [], 0.1, analog_lambdas=[20.0, 40.0])
    assert table.to_csv().splitlines()[0] == ",".join(LAYER_COLUMNS)
    rows = table.select(1)
    assert rows[0].width > rows[1].width
    for r in rows:
        assert r.width_lambda == pytest.approx(table.target, rel=0.01)
    with pytest.raises(ValueError):
        layer_experiment(None, DW, [], 0.1, analog_lambdas=[5.0])


def test_layer_budget_checked_before_solving():
    with pytest.raises(BudgetError):
        layer_experiment({"shape": "disk", "params": {"radius": 1.0}, "h": 0.1}, DW, [2000.0], 0.1, analog_lambdas=[])


def test_multiwell_small_square():
    dom = build_domain(DomainSpec("rectangle", {"width": 16, "height": 16}, 0.1))
    res = multiwell_ordered(dom, multi_well([(1.0, 0.25), (2.0, 0.0)]), 0.1)
    assert res.failure_index is None
    assert len(res.fields) == 2
    assert res.min_gaps[0] > 0
    assert all(res.plateau_ok)
    assert np.all(res.fields[1].values >= res.fields[0].values)


def test_saddle_symmetry():
    res = saddle_demo(20.0, DW, h=0.1)
    u = res.full.values
    assert np.allclose(u, -u[::-1, :]) and np.allclose(u, -u[:, ::-1])
    assert res.sign_ok and res.positive_ok and res.axis_jump == 0.0
    assert res.flux_at(15.0) == pytest.approx(math.sqrt(0.5), rel=0.05)
    with pytest.raises(ValueError):
        saddle_demo(10.0, DW)
