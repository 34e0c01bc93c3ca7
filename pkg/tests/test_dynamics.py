import numpy as np
import pytest
from scipy.linalg import expm

from sshjunction.dynamics import (
    RK8_A,
    RK8_B,
    RK8_C,
    MAX_NONMARKOVIAN_SITES,
    ConfigurationError,
    IntegratorConfig,
    NumericalBlowupError,
    OrbitalSet,
    TrajectoryState,
    closed_system_energy,
    default_dt,
    ground_orbitals,
    initial_state,
    integrate_nonmarkovian,
    integrate_trajectory,
    load_checkpoint,
    rhs,
    rk8_step,
    save_checkpoint,
)
from sshjunction.field import FieldParams
from sshjunction.ground_state import normal_modes, sample_wigner
from sshjunction.model import LatticeState, SystemParams, build_electronic_hamiltonian
from sshjunction.verification import excited_state


def test_tableau_consistency():
    assert RK8_B.sum() == pytest.approx(1.0, abs=1e-15)
    for i, row in enumerate(RK8_A):
        assert np.sum(row) == pytest.approx(RK8_C[i], abs=1e-14)


def test_rk8_order():
    # y' = -y + cos t, exact solution with y(0) = 1
    def exact(t):
        return 0.5 * (np.cos(t) + np.sin(t)) + 0.5 * np.exp(-t)

    def f(t, y):
        return -y + np.cos(t)

    errs = []
    for n in (8, 16, 32):
        y, h = np.array([1.0]), 2.0 / n
        for k in range(n):
            y = rk8_step(f, k * h, y, h)
        errs.append(abs(y[0] - exact(2.0)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 7.5), orders


def test_default_dt_resolves_carrier():
    fp = FieldParams()
    assert default_dt(fp) == pytest.approx(fp.period_2w / 400)
    assert default_dt(fp) == pytest.approx(0.04, rel=0.01)
    IntegratorConfig(dt=default_dt(fp)).check_resolution(fp)
    with pytest.raises(ConfigurationError):
        IntegratorConfig(dt=fp.period_2w / 150).check_resolution(fp)
    with pytest.raises(ConfigurationError):
        IntegratorConfig(dt=0.0)


def test_rhs_eigenstate_evolution(relaxed_geometry):
    p = SystemParams(n_sites=10, gamma_eff=0.0)
    u = relaxed_geometry(10)
    state = initial_state(LatticeState(u), p)
    du, dv, dc = rhs(state, FieldParams(eps_2w=0.0), p)
    w = np.linalg.eigvalsh(build_electronic_hamiltonian(u, 0.0, p))[:5]
    c = state.orbitals.amplitudes
    np.testing.assert_allclose(dc, (-1j / p.hbar) * w[None, :] * c, atol=1e-12)
    assert np.all(du == 0)
    assert np.max(np.abs(dv)) < 1e-6 / p.mass


def test_rhs_norm_preserving_without_leads(relaxed_geometry):
    p = SystemParams(n_sites=10, gamma_eff=0.0)
    rng = np.random.default_rng(0)
    c = rng.standard_normal((10, 5)) + 1j * rng.standard_normal((10, 5))
    state = TrajectoryState(LatticeState(relaxed_geometry(10)), OrbitalSet(c, np.full(5, 2.0)), t=250.0)
    _, _, dc = rhs(state, FieldParams(eps_2w=0.05), p)
    rate = np.real(np.sum(c.conj() * dc, axis=0))
    assert np.max(np.abs(rate)) < 1e-13 * np.max(np.abs(dc))


def test_rhs_lead_term_zero_on_ground_state(relaxed_geometry):
    u = relaxed_geometry(10)
    on = SystemParams(n_sites=10)
    off = on.with_(gamma_eff=0.0)
    state = initial_state(LatticeState(u), on)
    state.t = 300.0  # after the lead ramp
    fp = FieldParams(eps_2w=0.0)
    np.testing.assert_allclose(rhs(state, fp, on)[2], rhs(state, fp, off)[2], atol=1e-14)


def test_blowup_detected(relaxed_geometry):
    p = SystemParams(n_sites=6)
    state = initial_state(LatticeState(relaxed_geometry(6)), p)
    state.orbitals.amplitudes[0, 0] = np.nan
    with pytest.raises(NumericalBlowupError) as info:
        integrate_trajectory(state, IntegratorConfig(t_final=1.0), FieldParams(), p)
    assert info.value.t == 0.0


def test_size_mismatch_rejected(relaxed_geometry):
    p = SystemParams(n_sites=8)
    state = initial_state(LatticeState(relaxed_geometry(6)), SystemParams(n_sites=6))
    with pytest.raises(ConfigurationError):
        integrate_trajectory(state, IntegratorConfig(t_final=1.0), FieldParams(), p)


def _wigner_state(n, seed, relaxed_geometry, p=None):
    p = p or SystemParams(n_sites=n)
    modes = normal_modes(relaxed_geometry(n), p)
    lat = sample_wigner(modes, np.random.default_rng(seed)).lattice()
    return initial_state(lat, p)


def test_closed_system_matches_exact_propagator(relaxed_geometry):
    # frozen lattice, static field after t=0: C(t) = exp(-i H t / hbar) C(0)
    p = SystemParams(n_sites=8, gamma_eff=0.0)
    u = relaxed_geometry(8)
    fp = FieldParams(eps_2w=0.0)
    state = initial_state(LatticeState(u), p)
    rng = np.random.default_rng(9)
    state.orbitals.amplitudes = np.linalg.qr(rng.standard_normal((8, 4)) + 1j * rng.standard_normal((8, 4)))[0]
    res = integrate_trajectory(state, IntegratorConfig(t_final=20.0, freeze_lattice=True), fp, p)
    h = build_electronic_hamiltonian(u, 0.0, p)
    exact = expm(-1j * h * 20.0 / p.hbar) @ state.orbitals.amplitudes
    np.testing.assert_allclose(res.final_state.orbitals.amplitudes, exact, atol=1e-9)


def test_dt_halving_converges(relaxed_geometry):
    p = SystemParams(n_sites=10)
    fp = FieldParams(eps_2w=0.05, t_ramp_on=20.0, t_plateau=60.0, t_ramp_off=20.0)
    init = _wigner_state(10, 3, relaxed_geometry, p)
    a = integrate_trajectory(init, IntegratorConfig(dt=0.04, t_final=100.0, output_stride=100), fp, p)
    b = integrate_trajectory(init, IntegratorConfig(dt=0.02, t_final=100.0, output_stride=100), fp, p)
    assert a.q_right[-1] > 1e-6
    assert abs(a.q_right[-1] - b.q_right[-1]) < 1e-6 * abs(b.q_right[-1])


def test_norm_non_increasing_with_leads(relaxed_geometry):
    p = SystemParams(n_sites=10)
    fp = FieldParams(eps_2w=0.03, t_ramp_on=10.0, t_plateau=40.0, t_ramp_off=10.0)
    state = _wigner_state(10, 4, relaxed_geometry, p)
    norms = [state.orbitals.norms()]
    for k in range(1, 21):
        state = integrate_trajectory(state, IntegratorConfig(t_final=3.0 * k, output_stride=1000),
                                     fp, p).final_state
        norms.append(state.orbitals.norms())
    norms = np.array(norms)
    assert np.all(np.diff(norms, axis=0) <= 1e-10)
    assert np.all(norms <= 1 + 1e-8)
    assert norms[-1].sum() < norms[0].sum() - 1e-6


def test_restart_matches_continuous_run(tmp_path, relaxed_geometry):
    p = SystemParams(n_sites=6)
    fp = FieldParams(eps_2w=0.05)
    init = _wigner_state(6, 1, relaxed_geometry, p)
    full = integrate_trajectory(init, IntegratorConfig(t_final=20.0, output_stride=50), fp, p)
    half = integrate_trajectory(init, IntegratorConfig(t_final=10.0, output_stride=50), fp, p)
    path = tmp_path / "ck.npz"
    save_checkpoint(path, half.final_state)
    restored = load_checkpoint(path)
    assert restored.t == half.final_state.t
    np.testing.assert_array_equal(restored.orbitals.amplitudes, half.final_state.orbitals.amplitudes)
    np.testing.assert_array_equal(restored.lattice.v, half.final_state.lattice.v)
    rest = integrate_trajectory(restored, IntegratorConfig(t_final=20.0, output_stride=50), fp, p)
    np.testing.assert_allclose(rest.final_state.orbitals.amplitudes,
                               full.final_state.orbitals.amplitudes, atol=1e-11)
    assert rest.q_right[-1] == pytest.approx(full.q_right[-1], rel=1e-9, abs=1e-15)


def test_checkpoint_version_checked(tmp_path, relaxed_geometry):
    p = SystemParams(n_sites=6)
    path = tmp_path / "ck.npz"
    save_checkpoint(path, initial_state(LatticeState(relaxed_geometry(6)), p))
    data = dict(np.load(path))
    data["format_version"] = 99
    np.savez(path, **data)
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_deterministic(relaxed_geometry):
    p = SystemParams(n_sites=6)
    fp = FieldParams(eps_2w=0.05)
    cfg = IntegratorConfig(t_final=10.0)
    a = integrate_trajectory(_wigner_state(6, 2, relaxed_geometry), cfg, fp, p)
    b = integrate_trajectory(_wigner_state(6, 2, relaxed_geometry), cfg, fp, p)
    for name in ("times", "field", "j_left", "j_right", "q_left", "q_right", "norm", "spectrum"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


@pytest.mark.slow
def test_rigid_lattice_stays_put(relaxed_geometry):
    p = SystemParams(n_sites=10, rigid_mass_factor=1e6)
    init = initial_state(LatticeState(relaxed_geometry(10)), p)
    res = integrate_trajectory(init, IntegratorConfig(output_stride=500, record_lattice=True),
                               FieldParams(), p)
    assert np.max(np.abs(res.lattice - init.lattice.u)) < 1e-4


@pytest.mark.slow
def test_energy_conserved_without_field_and_leads(relaxed_geometry):
    p = SystemParams(n_sites=10, gamma_eff=0.0)
    fp = FieldParams(eps_2w=0.0)
    init = _wigner_state(10, 6, relaxed_geometry, p)
    res = integrate_trajectory(init, IntegratorConfig(output_stride=15000), fp, p)
    drift = abs(closed_system_energy(res.final_state, fp, p) - closed_system_energy(init, fp, p))
    assert drift < 1e-6


def test_spectrum_record_matches_static_diagonalisation(relaxed_geometry):
    p = SystemParams(n_sites=10)
    fp = FieldParams(eps_2w=0.0)
    init = _wigner_state(10, 8, relaxed_geometry, p)
    res = integrate_trajectory(init, IntegratorConfig(t_final=5.0, output_stride=25, record_lattice=True,
                                                      spectrum_window=4), fp, p)
    for u, spec in zip(res.lattice, res.spectrum):
        w = np.linalg.eigvalsh(build_electronic_hamiltonian(u, 0.0, p))
        np.testing.assert_allclose(spec, w[3:7], atol=1e-12)


# Non-Markovian reference


def test_nonmarkovian_cost_guard():
    n = MAX_NONMARKOVIAN_SITES + 2
    p = SystemParams(n_sites=n)
    state = initial_state(LatticeState(np.zeros(n)), p)
    with pytest.raises(ConfigurationError):
        integrate_nonmarkovian(state, IntegratorConfig(dt=0.01, t_final=1.0), FieldParams(), p, 5.0, 1.0)


def test_nonmarkovian_resolution_warning(relaxed_geometry):
    p = SystemParams(n_sites=6)
    state = initial_state(LatticeState(relaxed_geometry(6)), p)
    with pytest.warns(RuntimeWarning, match="under-resolves"):
        integrate_nonmarkovian(state, IntegratorConfig(dt=0.04, t_final=0.4), FieldParams(), p, 5.0, 1.0)


def test_nonmarkovian_zero_coupling_is_closed_evolution(relaxed_geometry):
    # trapezoidal rule: unitary, second order against the exact propagator
    p = SystemParams(n_sites=8)
    u = relaxed_geometry(8)
    init = excited_state(p, u)
    fp = FieldParams(eps_2w=0.0)
    h = build_electronic_hamiltonian(u, 0.0, p)
    exact = expm(-1j * h * 5.0 / p.hbar) @ init.orbitals.amplitudes
    errs = []
    for dt in (0.004, 0.002):
        res = integrate_nonmarkovian(init, IntegratorConfig(dt=dt, t_final=5.0), fp, p, 5.0, 0.0)
        assert np.all(res.j_left == 0) and np.all(res.q_right == 0)
        assert np.max(np.abs(res.norm - res.norm[0])) < 1e-12
        errs.append(np.max(np.abs(res.final_state.orbitals.amplitudes - exact)))
    assert errs[1] < 1e-3
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_nonmarkovian_early_time_quadratic(relaxed_geometry):
    p = SystemParams(n_sites=8)
    init = excited_state(p, relaxed_geometry(8))
    t_lead = 5.0
    tau = p.hbar / (2 * t_lead)
    fp = FieldParams(eps_2w=0.0)
    nm = integrate_nonmarkovian(init, IntegratorConfig(dt=tau / 100, t_final=0.2 * tau), fp, p,
                                t_lead, np.sqrt(0.1 * t_lead))
    mk = integrate_trajectory(init, IntegratorConfig(dt=tau / 100, t_final=0.2 * tau, lead_ramp=False,
                                                     freeze_lattice=True), fp, p)
    t = nm.times
    a_nm = np.interp([0.05 * tau, 0.1 * tau], t, nm.absorbed)
    a_mk = np.interp([0.05 * tau, 0.1 * tau], mk.times, mk.absorbed)
    assert np.log(a_nm[1] / a_nm[0]) / np.log(2) == pytest.approx(2.0, abs=0.1)
    assert np.log(a_mk[1] / a_mk[0]) / np.log(2) == pytest.approx(1.0, abs=0.1)
    assert np.all(a_nm < a_mk)


def test_ground_orbitals_orthonormal(relaxed_geometry):
    p = SystemParams(n_sites=10)
    orb = ground_orbitals(relaxed_geometry(10), p)
    c = orb.amplitudes
    np.testing.assert_allclose(c.conj().T @ c, np.eye(5), atol=1e-12)
    assert orb.electron_count() == pytest.approx(10.0)
