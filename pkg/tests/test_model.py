import numpy as np
import pytest

from transduction.model import (
    CHANNEL_LABELS,
    TransducerParams,
    build_collapse_channels,
    build_hamiltonian,
    check_modulation_window,
    default_params,
    initial_state,
    quality_to_rate,
)
from transduction.operators import MICROWAVE, destroy, embed, expectation, number

TWO_PI = 2 * np.pi


def _basis_index(dims, occupations):
    index = 0
    for dim, occ in zip(dims, occupations):
        index = index * dim + occ
    return index


def test_default_params_values():
    p = default_params()
    assert p.gamma_mw == pytest.approx(TWO_PI * 125e3)
    assert p.gamma_m == pytest.approx(TWO_PI * 12.5e9 / 22_000)
    assert p.gamma_e == pytest.approx(TWO_PI * 10e6)
    # optical linewidth from Q_opt = 12000 at 470 THz: about 39.2 GHz
    assert p.gamma_opt_internal == pytest.approx(TWO_PI * 470e12 / 12_000)
    assert p.gamma_opt_internal / TWO_PI == pytest.approx(39.2e9, rel=1e-2)
    assert p.gamma_wg == p.gamma_opt_internal  # critical coupling
    assert p.g_m_e == pytest.approx(TWO_PI * 16.4e6)
    assert p.g_mw_m == pytest.approx(TWO_PI * 0.3e6)
    assert p.g_e_opt == pytest.approx(TWO_PI * 1e9)
    assert p.omega_rabi == pytest.approx(TWO_PI * 5e9)
    assert p.omega_mw == p.omega_m == p.delta_opt == p.delta_e
    assert p.gamma_dephasing == 0.0
    assert p.alpha == 0.1
    assert p.dims == (3, 4, 2, 3)
    assert p.gamma_opt_total == pytest.approx(2 * p.gamma_opt_internal)


def test_quality_to_rate():
    omega = TWO_PI * 12.5e9
    assert quality_to_rate(omega, 1e5) == pytest.approx(TWO_PI * 125e3)
    # paper-quoted 568 kHz for the mechanical Q of 22000
    assert quality_to_rate(omega, 22_000) / TWO_PI == pytest.approx(568e3, rel=1e-3)
    qs = [1e3, 1e4, 1e5, 1e6, 1e9]
    rates = [quality_to_rate(omega, q) for q in qs]
    assert all(a > b for a, b in zip(rates, rates[1:]))  # monotone in Q
    assert rates[-1] < 1e-7 * omega
    with pytest.raises(ValueError):
        quality_to_rate(omega, 0.0)
    with pytest.raises(ValueError):
        quality_to_rate(-1.0, 10.0)


def test_params_validation():
    with pytest.raises(ValueError):
        default_params().with_updates(gamma_mw=-1.0)
    with pytest.raises(ValueError):
        default_params().with_updates(omega_m=0.0)
    with pytest.raises(ValueError):
        default_params(alpha=0.6)  # |alpha|^2 too large
    with pytest.raises(ValueError):
        default_params(dims=(3, 4, 3, 3))


def test_hamiltonian_is_hermitian_for_random_params():
    rng = np.random.default_rng(11)
    for _ in range(20):
        p = TransducerParams(
            omega_mw=rng.uniform(0.5, 2) * TWO_PI * 12.5e9,
            omega_m=rng.uniform(0.5, 2) * TWO_PI * 12.5e9,
            delta_e=rng.uniform(0, 2) * TWO_PI * 12.5e9,
            delta_opt=rng.uniform(0, 2) * TWO_PI * 12.5e9,
            omega_rabi=rng.uniform(0, 2) * TWO_PI * 5e9,
            g_mw_m=rng.uniform(0, 1) * TWO_PI * 1e6,
            g_m_e=rng.uniform(0, 1) * TWO_PI * 30e6,
            g_e_opt=rng.uniform(0, 1) * TWO_PI * 2e9,
            gamma_mw=0.0, gamma_m=0.0, gamma_e=0.0,
            gamma_opt_internal=0.0, gamma_wg=0.0,
            dims=(2, 3, 2, 2),
        )
        h = build_hamiltonian(p).mat
        scale = np.abs(h).max()
        assert np.abs(h - h.conj().T).max() < 1e-12 * scale


def test_hamiltonian_decoupled_limit_is_diagonal():
    p = default_params(dims=(2, 2, 2, 2)).with_updates(
        g_mw_m=0.0, g_m_e=0.0, g_e_opt=0.0
    )
    h = build_hamiltonian(p).mat
    assert np.abs(h - np.diag(np.diag(h))).max() == 0.0
    dims = p.dims
    for occ in [(1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1), (1, 1, 0, 1)]:
        k = _basis_index(dims, occ)
        expected = (
            occ[0] * p.omega_mw + occ[1] * p.omega_m
            + occ[2] * p.delta_e + occ[3] * p.delta_opt
        )
        assert h[k, k].real == pytest.approx(expected)


def test_hamiltonian_coupling_matrix_elements():
    # hand-expanded on the (2,2,2,2) basis
    p = default_params(dims=(2, 2, 2, 2))
    h = build_hamiltonian(p).mat
    dims = p.dims
    bra = _basis_index(dims, (1, 0, 0, 0))   # one microwave photon
    ket = _basis_index(dims, (0, 1, 0, 0))   # one phonon
    assert h[bra, ket] == pytest.approx(p.g_mw_m)

    bra = _basis_index(dims, (0, 1, 0, 0))   # one phonon
    ket = _basis_index(dims, (0, 0, 1, 0))   # excited electron
    expected = -p.omega_rabi * p.g_m_e / (2 * p.omega_m)
    assert h[bra, ket] == pytest.approx(expected)

    bra = _basis_index(dims, (0, 0, 1, 0))   # excited electron
    ket = _basis_index(dims, (0, 0, 0, 1))   # one optical photon
    assert h[bra, ket] == pytest.approx(p.g_e_opt)


def test_total_excitation_conserved_without_strain_coupling():
    p = default_params(dims=(2, 3, 2, 2)).with_updates(g_m_e=0.0)
    h = build_hamiltonian(p).mat
    layout = p.layout
    n_total = sum(
        embed(number(d), i, layout).mat for i, d in enumerate(layout.dims)
    )
    comm = h @ n_total - n_total @ h
    assert np.abs(comm).max() < 1e-10


def test_collapse_channels():
    p = default_params()
    channels = build_collapse_channels(p)
    assert tuple(ch.label for ch in channels) == CHANNEL_LABELS
    rates = {ch.label: ch.rate for ch in channels}
    assert rates["microwave-decay"] == p.gamma_mw
    assert rates["phonon-decay"] == p.gamma_m
    assert rates["electron-decay"] == p.gamma_e
    # optical channel carries waveguide extraction plus internal loss
    assert rates["optical-decay"] == pytest.approx(2 * TWO_PI * 470e12 / 12_000)
    assert rates["electron-dephasing"] == 0.0

    # dephasing rate is the plain reciprocal of T2*
    p10 = p.with_updates(gamma_dephasing=1.0 / 10e-9)
    channels = build_collapse_channels(p10)
    assert channels[-1].rate == pytest.approx(1e8)

    # the dephasing operator is the excited-state projector
    proj = channels[-1].operator.mat
    np.testing.assert_allclose(proj @ proj, proj, atol=1e-15)


def test_initial_state_vacuum():
    p = default_params(alpha=0.0, dims=(2, 2, 2, 2))
    rho = initial_state(p)
    n_mw = embed(number(2), MICROWAVE, p.layout)
    assert expectation(rho, n_mw) == 0.0
    assert rho.mat[0, 0] == pytest.approx(1.0)


def test_initial_state_weak_coherent():
    p = default_params(alpha=0.1, dims=(2, 2, 2, 2))
    rho = initial_state(p)
    assert rho.mat.trace().real == pytest.approx(1.0, abs=1e-15)
    assert rho.purity() == pytest.approx(1.0, abs=1e-12)
    n_mw = embed(number(2), MICROWAVE, p.layout)
    a = embed(destroy(2), MICROWAVE, p.layout)
    # renormalized two-level coherent state expectations
    assert expectation(rho, n_mw).real == pytest.approx(0.01 / 1.01, abs=1e-15)
    amp = expectation(rho, a)
    assert abs(amp) ** 2 == pytest.approx(0.01 / 1.01**2, abs=1e-15)


def test_initial_state_alpha_guard():
    with pytest.raises(ValueError):
        default_params(alpha=0.5 + 0.3j)


def test_modulation_window():
    nu_opt = 470e12
    omega_opt = TWO_PI * nu_opt
    gamma_opt = TWO_PI * 39e9
    omega_m = TWO_PI * 12.5e9
    # drive parked half a modulation below resonance: both tones fit
    omega_d = omega_opt - TWO_PI * 6.25e9
    assert check_modulation_window(omega_opt, gamma_opt, omega_d, omega_m)

    # modulation wider than the line: no drive position works
    wide = TWO_PI * 50e9
    for shift in np.linspace(-30e9, 30e9, 41):
        assert not check_modulation_window(
            omega_opt, TWO_PI * 39e9, omega_opt + TWO_PI * shift, wide
        )

    # degenerate case: drive on resonance, no modulation
    assert check_modulation_window(omega_opt, gamma_opt, omega_opt, 0.0)
    with pytest.raises(ValueError):
        check_modulation_window(omega_opt, 0.0, omega_opt, omega_m)
