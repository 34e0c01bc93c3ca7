import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sshjunction.dynamics import IntegratorConfig, initial_state, integrate_trajectory
from sshjunction.field import FieldParams
from sshjunction.ground_state import normal_modes, sample_wigner
from sshjunction.model import LatticeState, SystemParams, build_electronic_hamiltonian
from sshjunction.observables import (
    TrajectoryResult,
    currents,
    density_matrix,
    efficiency,
    rectification_and_efficiency,
)
from sshjunction.open_system import instantaneous_projector


def test_localised_orbital_density():
    c = np.zeros((5, 1), dtype=complex)
    c[0, 0] = 1j
    np.testing.assert_array_equal(density_matrix(c, [2.0]), np.diag([2.0, 0, 0, 0, 0]))


def test_index_convention():
    # rho[n, m] = f <m|e><e|n>
    c = np.array([[1.0], [1j]]) / np.sqrt(2)
    rho = density_matrix(c, [1.0])
    assert rho[0, 1] == pytest.approx(np.conj(c[0, 0]) * c[1, 0])


def test_ground_state_density(relaxed_geometry):
    p = SystemParams(n_sites=20)
    st_ = initial_state(LatticeState(relaxed_geometry(20)), p)
    rho = st_.orbitals.density()
    assert np.trace(rho).real == pytest.approx(20.0)
    np.testing.assert_allclose((rho / 2) @ (rho / 2), rho / 2, atol=1e-10)
    np.testing.assert_allclose(rho, rho.conj().T, atol=1e-15)


def test_ground_state_carries_no_current(relaxed_geometry):
    p = SystemParams(n_sites=20)
    u = relaxed_geometry(20)
    rho = initial_state(LatticeState(u), p).orbitals.density()
    pd = instantaneous_projector(build_electronic_hamiltonian(u, 0.0, p))
    jl, jr = currents(rho, pd, 0.1)
    assert abs(jl) < 1e-12 and abs(jr) < 1e-12


def test_symmetric_excited_orbital_by_hand():
    # 4-site uniform chain, top orbital doubly occupied: j = 4 gamma psi_b^2 / hbar
    p = SystemParams(n_sites=4)
    pd = instantaneous_projector(build_electronic_hamiltonian(np.zeros(4), 0.0, p))
    sites = np.arange(1, 5)
    psi = np.sqrt(2 / 5) * np.sin(sites * 4 * np.pi / 5)
    rho = density_matrix(psi[:, None], [2.0])
    jl, jr = currents(rho, pd, 0.1, p.hbar)
    expected = 4 * 0.1 * psi[0] ** 2 / p.hbar
    assert jl == pytest.approx(expected, rel=1e-12)
    assert jr == pytest.approx(expected, rel=1e-12)
    assert jl > 0


def test_mirror_swaps_currents(relaxed_geometry):
    p = SystemParams(n_sites=10)
    rng = np.random.default_rng(3)
    u = relaxed_geometry(10) + np.r_[0, 0.01 * rng.standard_normal(8), 0]
    c = rng.standard_normal((10, 5)) + 1j * rng.standard_normal((10, 5))
    e = 0.02
    pd = instantaneous_projector(build_electronic_hamiltonian(u, e, p))
    pd_m = instantaneous_projector(build_electronic_hamiltonian(-u[::-1], -e, p))
    jl, jr = currents(density_matrix(c, np.full(5, 2.0)), pd, 0.1)
    jl_m, jr_m = currents(density_matrix(c[::-1], np.full(5, 2.0)), pd_m, 0.1)
    assert jl_m == pytest.approx(jr, rel=1e-12)
    assert jr_m == pytest.approx(jl, rel=1e-12)


def _result(t, jl, jr):
    z = np.zeros_like(t)
    return TrajectoryResult(t, z, jl, jr, np.r_[0, np.cumsum(0.5 * (jl[1:] + jl[:-1]) * np.diff(t))],
                            np.r_[0, np.cumsum(0.5 * (jr[1:] + jr[:-1]) * np.diff(t))], z + 4, np.zeros((t.size, 0)))


def test_rectification_examples():
    t = np.linspace(0, 10, 101)
    j = np.sin(t) ** 2
    for recorded in (True, False):
        rect, eta = rectification_and_efficiency(_result(t, j, j), recorded)
        assert rect == pytest.approx(0.0, abs=1e-15) and eta == pytest.approx(0.0, abs=1e-15)
        rect, eta = rectification_and_efficiency(_result(t, 0 * j, j), recorded)
        assert eta == -1.0 and rect < 0
        _, eta = rectification_and_efficiency(_result(t, 1e-9 * j, 0 * j), recorded)
        assert eta is None


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10))
def test_efficiency_bounded(ql, qr):
    eta = efficiency(ql, qr)
    if ql + qr < 1e-6:
        assert eta is None
    else:
        assert -1.0 <= eta <= 1.0


def test_charge_balance_and_trapezoid(relaxed_geometry):
    p = SystemParams(n_sites=10)
    fp = FieldParams(eps_2w=0.03, t_ramp_on=20.0, t_plateau=40.0, t_ramp_off=20.0)
    modes = normal_modes(relaxed_geometry(10), p)
    init = initial_state(sample_wigner(modes, np.random.default_rng(0)).lattice(), p)
    res = integrate_trajectory(init, IntegratorConfig(t_final=80.0), fp, p)
    assert res.absorbed[-1] > 1e-5
    assert abs(res.absorbed[-1] - res.q_left[-1] - res.q_right[-1]) < 1e-6 * res.norm[0]
    ql, qr = res.trapezoid_charges()
    scale = max(res.q_left[-1], res.q_right[-1])
    assert np.max(np.abs(ql - res.q_left)) < 1e-4 * scale
    assert np.max(np.abs(qr - res.q_right)) < 1e-4 * scale
    assert np.all(np.diff(res.q_left) >= 0) and np.all(np.diff(res.q_right) >= 0)
