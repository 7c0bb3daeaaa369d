"""Physical model of the microwave-to-optical quantum interface.

Builds the four-subsystem Hamiltonian of the transducer (microwave cavity,
mechanical breathing mode, color-center electron, optical cavity), its
dissipation channels in Lindblad form, and the weak-coherent initial state.

Conventions
-----------
* All frequencies, detunings, couplings and decay rates are *angular*
  (rad/s). Configuration files store ordinary frequencies in Hz and are
  converted once at load time (see :mod:`transduction.cli`).
* The Hamiltonian is returned divided by hbar, i.e. in angular-frequency
  units, so the Liouville equation needs no physical constants.
* Dissipators follow the convention
  ``(gamma/2) * (2 c rho c† - c†c rho - rho c†c)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .operators import (
    ELECTRON,
    MECHANICAL,
    MICROWAVE,
    OPTICAL,
    DensityMatrix,
    HilbertLayout,
    Operator,
    destroy,
    embed,
    sigma_minus,
)

__all__ = [
    "TransducerParams",
    "CollapseChannel",
    "default_params",
    "quality_to_rate",
    "build_hamiltonian",
    "build_collapse_channels",
    "initial_state",
    "check_modulation_window",
    "DEFAULT_DIMS",
    "CHANNEL_LABELS",
]

TWO_PI = 2.0 * np.pi

# The counter-rotating phonon-electron term can park a second phonon, so
# the phonon mode gets the deepest truncation.
DEFAULT_DIMS = (3, 4, 2, 3)

CHANNEL_LABELS = (
    "microwave-decay",
    "phonon-decay",
    "electron-decay",
    "optical-decay",
    "electron-dephasing",
)

# Maximum coherent amplitude: beyond this the two-level truncation of the
# coherent state is no longer a faithful weak-coherent approximation.
ALPHA_SQ_LIMIT = 0.25


@dataclass(frozen=True)
class TransducerParams:
    """Every rate, frequency and coupling of the transducer model (rad/s).

    Attributes
    ----------
    omega_mw, omega_m : float
        Microwave cavity and mechanical mode angular frequencies.
    delta_e, delta_opt : float
        Electron and optical-cavity detunings from the optical drive.
    omega_rabi : float
        Optical Rabi frequency of the drive on the electron.
    g_mw_m, g_m_e, g_e_opt : float
        Piezoelectric (microwave-phonon), strain (phonon-electron) and
        cavity QED (electron-photon) coupling rates.
    gamma_mw, gamma_m, gamma_e : float
        Energy decay rates of microwave photon, phonon and electron.
    gamma_opt_internal, gamma_wg : float
        Optical cavity internal loss and waveguide extraction rates; the
        total optical linewidth is their sum.
    gamma_dephasing : float
        Pure dephasing rate of the electron, 1/T2*.
    alpha : complex
        Amplitude of the weak coherent microwave input state.
    dims : tuple of int
        Subsystem truncations (microwave, mechanical, electron, optical).
    """

    omega_mw: float
    omega_m: float
    delta_e: float
    delta_opt: float
    omega_rabi: float
    g_mw_m: float
    g_m_e: float
    g_e_opt: float
    gamma_mw: float
    gamma_m: float
    gamma_e: float
    gamma_opt_internal: float
    gamma_wg: float
    gamma_dephasing: float = 0.0
    alpha: complex = 0.1
    dims: tuple[int, ...] = field(default=DEFAULT_DIMS)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        rates = {
            "omega_mw": self.omega_mw,
            "omega_m": self.omega_m,
            "delta_e": self.delta_e,
            "delta_opt": self.delta_opt,
            "omega_rabi": self.omega_rabi,
            "g_mw_m": self.g_mw_m,
            "g_m_e": self.g_m_e,
            "g_e_opt": self.g_e_opt,
            "gamma_mw": self.gamma_mw,
            "gamma_m": self.gamma_m,
            "gamma_e": self.gamma_e,
            "gamma_opt_internal": self.gamma_opt_internal,
            "gamma_wg": self.gamma_wg,
            "gamma_dephasing": self.gamma_dephasing,
        }
        for name, value in rates.items():
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if self.omega_m <= 0:
            raise ValueError(f"omega_m must be > 0, got {self.omega_m}")
        if abs(self.alpha) ** 2 >= ALPHA_SQ_LIMIT:
            raise ValueError(
                f"|alpha|^2 = {abs(self.alpha)**2:.3g} too large for the "
                f"weak-coherent approximation (limit {ALPHA_SQ_LIMIT})"
            )
        HilbertLayout(self.dims)  # validates dims

    @property
    def gamma_opt_total(self) -> float:
        """Total optical linewidth: waveguide extraction plus internal loss."""
        return self.gamma_wg + self.gamma_opt_internal

    @property
    def layout(self) -> HilbertLayout:
        return HilbertLayout(self.dims)

    def with_updates(self, **kwargs) -> "TransducerParams":
        """Return a copy with the given fields replaced."""
        return replace(self, **kwargs)


@dataclass(frozen=True)
class CollapseChannel:
    """A Lindblad dissipation channel: collapse operator plus its rate."""

    operator: Operator
    rate: float
    label: str

    def __post_init__(self):
        if self.rate < 0 or not np.isfinite(self.rate):
            raise ValueError(f"channel rate must be finite and >= 0, got {self.rate}")
        if self.label not in CHANNEL_LABELS:
            raise ValueError(f"unknown channel label {self.label!r}")


def quality_to_rate(omega: float, quality: float) -> float:
    """Decay rate of a resonator with angular frequency ``omega`` and
    quality factor ``quality``: ``omega / quality``."""
    if omega <= 0:
        raise ValueError(f"omega must be > 0, got {omega}")
    if quality <= 0:
        raise ValueError(f"quality factor must be > 0, got {quality}")
    return omega / quality


def default_params(alpha: complex = 0.1, dims: tuple[int, ...] = DEFAULT_DIMS) -> TransducerParams:
    """Baseline operating point of the transducer design.

    Microwave, mechanical and optical-detuning frequencies all at
    12.5 GHz; electron detuning on the mechanical resonance; couplings
    and quality factors at the design values (Q_MW = 1e5, Q_m = 22000,
    Q_opt = 12000 at a 470 THz optical resonance, critically coupled to
    the waveguide). Dephasing defaults to zero (T2* = infinity).
    """
    omega_m = TWO_PI * 12.5e9
    omega_opt = TWO_PI * 470e12
    gamma_opt_internal = quality_to_rate(omega_opt, 12_000.0)
    return TransducerParams(
        omega_mw=omega_m,
        omega_m=omega_m,
        delta_e=omega_m,
        delta_opt=omega_m,
        omega_rabi=TWO_PI * 5e9,
        g_mw_m=TWO_PI * 0.3e6,
        g_m_e=TWO_PI * 16.4e6,
        g_e_opt=TWO_PI * 1e9,
        gamma_mw=quality_to_rate(omega_m, 1e5),
        gamma_m=quality_to_rate(omega_m, 22_000.0),
        gamma_e=TWO_PI * 10e6,
        gamma_opt_internal=gamma_opt_internal,
        gamma_wg=gamma_opt_internal,
        gamma_dephasing=0.0,
        alpha=alpha,
        dims=dims,
    )


def _mode_operators(layout: HilbertLayout):
    a = embed(destroy(layout.dims[MICROWAVE]), MICROWAVE, layout)
    b = embed(destroy(layout.dims[MECHANICAL]), MECHANICAL, layout)
    sm = embed(sigma_minus(), ELECTRON, layout)
    c = embed(destroy(layout.dims[OPTICAL]), OPTICAL, layout)
    return a, b, sm, c


def build_hamiltonian(p: TransducerParams) -> Operator:
    """Assemble the transducer Hamiltonian (divided by hbar, rad/s).

    Four free-evolution terms, the microwave-phonon beam splitter, the
    phonon-modulated electron drive, and the electron-photon exchange
    with its phonon-modulation sidebands. The result is Hermitian to
    rounding.
    """
    layout = p.layout
    a, b, sm, c = _mode_operators(layout)
    ad, bd, sp, cd = a.dag(), b.dag(), sm.dag(), c.dag()
    eye = Operator(np.eye(layout.total_dim), layout.dims)
    lam = p.g_m_e / p.omega_m  # phonon-modulation depth of the optical transition
    drive = p.omega_rabi * p.g_m_e / (2.0 * p.omega_m)

    h = (
        p.omega_mw * (ad @ a)
        + p.omega_m * (bd @ b)
        + p.delta_e * (sp @ sm)
        + p.delta_opt * (cd @ c)
        + p.g_mw_m * (ad @ b + a @ bd)
        + drive * ((bd - b) @ sp + (b - bd) @ sm)
        + p.g_e_opt * ((eye + lam * (bd - b)) @ sp @ c + (eye + lam * (b - bd)) @ sm @ cd)
    )
    return h


def build_collapse_channels(p: TransducerParams) -> tuple[CollapseChannel, ...]:
    """The five dissipation channels of the transducer.

    Energy decay of microwave photon, phonon, electron and optical photon
    (the optical rate is the waveguide extraction plus internal loss),
    plus pure dephasing of the electron through its excited-state
    projector. The dephasing channel is always present; its rate is zero
    for T2* = infinity.
    """
    layout = p.layout
    a, b, sm, c = _mode_operators(layout)
    return (
        CollapseChannel(a, p.gamma_mw, "microwave-decay"),
        CollapseChannel(b, p.gamma_m, "phonon-decay"),
        CollapseChannel(sm, p.gamma_e, "electron-decay"),
        CollapseChannel(c, p.gamma_opt_total, "optical-decay"),
        CollapseChannel(sm.dag() @ sm, p.gamma_dephasing, "electron-dephasing"),
    )


def initial_state(p: TransducerParams) -> DensityMatrix:
    """Weak coherent microwave input, everything else in the ground state.

    The microwave subsystem starts in the explicitly re-normalized
    two-level coherent state ``(|0> + alpha |1>) / sqrt(1 + |alpha|^2)``
    so the density matrix has exactly unit trace; efficiency denominators
    use the actual t = 0 expectations of this state, which keeps the
    conversion-efficiency definitions self-consistent under truncation.
    """
    if abs(p.alpha) ** 2 >= ALPHA_SQ_LIMIT:
        raise ValueError(f"|alpha|^2 = {abs(p.alpha)**2:.3g} too large")
    layout = p.layout
    psi_mw = np.zeros(layout.dims[MICROWAVE], dtype=np.complex128)
    psi_mw[0] = 1.0
    psi_mw[1] = p.alpha
    psi_mw /= np.linalg.norm(psi_mw)
    psi = psi_mw
    for d in layout.dims[1:]:
        ground = np.zeros(d, dtype=np.complex128)
        ground[0] = 1.0
        psi = np.kron(psi, ground)
    return DensityMatrix(np.outer(psi, psi.conj()), layout.dims)


def check_modulation_window(omega_opt: float, gamma_opt: float,
                            omega_d: float, omega_m: float) -> bool:
    """Whether both the drive and its phonon-shifted sideband fit inside
    the optical cavity linewidth.

    True iff ``omega_d`` and ``omega_d + omega_m`` both lie strictly
    inside ``(omega_opt - gamma_opt/2, omega_opt + gamma_opt/2)``.
    """
    if gamma_opt <= 0:
        raise ValueError(f"gamma_opt must be > 0, got {gamma_opt}")
    lo = omega_opt - gamma_opt / 2.0
    hi = omega_opt + gamma_opt / 2.0
    return lo < omega_d < hi and lo < omega_d + omega_m < hi
