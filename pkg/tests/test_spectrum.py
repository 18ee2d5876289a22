import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import eigh_tridiagonal

from eland.potentials import double_well
from eland.radial import RadialProblem, solve_radial_minimizer
from eland.spectrum import (
    SpectrumError,
    linearized_tridiagonal,
    principal_eigenpair,
    rayleigh_quotient,
    stability_sweep,
    stability_threshold,
    sturm_count,
    zeta_identity,
)
from eland.radial import sweep_R

DW = double_well()


@pytest.fixture(scope="module")
def sol20():
    return solve_radial_minimizer(RadialProblem(2, 20.0, DW))


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=2, max_size=30),
    st.floats(-8, 8),
    st.integers(0, 2**31 - 1),
)
def test_sturm_count_matches_dense(diag, sigma, seed):
    d = np.asarray(diag)
    e = np.random.default_rng(seed).uniform(-2, 2, d.size - 1)
    ev = eigh_tridiagonal(d, e, eigvals_only=True)
    if np.min(np.abs(ev - sigma)) < 1e-8:
        return
    assert sturm_count(d, e, sigma) == int(np.sum(ev < sigma))


def test_principal_eigenvalue_matches_lapack(sol20):
    eig = principal_eigenpair(sol20)
    d, e, _ = linearized_tridiagonal(sol20)
    ref = eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, 0))[0]
    assert eig.mu_R == pytest.approx(ref, rel=1e-9)
    assert eig.rayleigh == pytest.approx(eig.mu_R, rel=1e-6)


def test_eigenfunction_shape(sol20):
    eig = principal_eigenpair(sol20)
    assert eig.phi[-1] == 0.0
    assert np.max(eig.phi) == pytest.approx(1.0)
    assert np.all(eig.phi[:-1] > 0)  # principal eigenfunction has one sign
    assert eig.to_csv().splitlines()[0] == "r,phi"


def test_stable_and_lower_bound(sol20):
    mu = principal_eigenpair(sol20).mu_R
    assert mu > 0
    assert mu >= -DW.max_abs_d2W


def test_rayleigh_of_other_vector_is_larger(sol20):
    eig = principal_eigenpair(sol20)
    trial = np.cos(0.5 * np.pi * eig.r / eig.r[-1])
    assert rayleigh_quotient(sol20, trial) >= eig.mu_R - 1e-10


def test_zeta_identity(sol20):
    z = zeta_identity(sol20)
    assert not z.flagged
    assert z.residual < 1e-6


def test_trivial_solution_rejected():
    sol = solve_radial_minimizer(RadialProblem(2, 1.0, DW))
    assert sol.trivial
    with pytest.raises(SpectrumError):
        principal_eigenpair(sol)


def test_stability_sweep():
    table = sweep_R(RadialProblem(2, 5.0, DW), [1.0, 5.0, 10.0])
    rows = stability_sweep(table)
    assert rows[0].status == "trivial" and np.isnan(rows[0].mu_R)
    assert all(r.mu_R > 0 for r in rows[1:])
    assert stability_threshold(rows) == 5.0
