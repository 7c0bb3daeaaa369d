"""Closed-form post-processing of exported cavity field grids.

Finite-element solvers export the mechanical and optical eigenmodes of
the cavity on a uniform rectilinear grid; this module evaluates the
design quantities on top of them: acoustic energy density, mechanical
and optical mode volumes, effective mass and zero-point fluctuation,
strain-to-electron coupling maps under crystal rotation, the
piezoelectric microwave-phonon overlap rate, and the bulk acoustic
wavelengths. Computing the fields themselves is out of scope.

Conventions
-----------
* Voigt 6-vectors are ordered (xx, yy, zz, yz, xz, xy); stored strains
  use engineering shear components (twice the tensor shear), which makes
  the stress-strain contraction a plain 6-component dot product.
* Volume integrals use the midpoint rule on cell centers (each cell value
  is the average of its 8 corner nodes); maxima are taken over nodal
  values. Numerator and denominator of every mode-volume-like ratio use
  the same discretization.
* The grid file format is self-describing UTF-8 text (see
  :func:`load_grid`); floats round-trip bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.constants import hbar

__all__ = [
    "FieldGrid",
    "CrystalFrame",
    "MechModeVolume",
    "OptModeVolume",
    "StrainCouplingMap",
    "GridFormatError",
    "DegenerateFieldError",
    "CHI_STRAIN_DEFAULT",
    "energy_density",
    "mech_mode_volume",
    "opt_mode_volume",
    "effective_mass",
    "x_zpf",
    "acoustic_wavelengths",
    "rotate_strain",
    "g_m_e_map",
    "piezo_coupling",
    "extract_line",
    "load_grid",
    "save_grid",
]

TWO_PI = 2.0 * np.pi

# Strain susceptibility of the color-center excited state, rad/s per unit
# strain. The magnitude is quoted as an ordinary frequency (per the
# universal "/(2 pi)" reporting convention), hence the 2 pi here.
CHI_STRAIN_DEFAULT = -TWO_PI * 0.85e15


class GridFormatError(ValueError):
    """A grid file violates the interchange format."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateFieldError(ValueError):
    """A field needed for a ratio is identically zero."""


@dataclass(frozen=True)
class CrystalFrame:
    """In-plane rotation of the crystal axes about z, reduced to [0, 2 pi)."""

    phi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "phi", float(self.phi) % TWO_PI)

    def rotation_matrix(self) -> np.ndarray:
        c, s = np.cos(self.phi), np.sin(self.phi)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class FieldGrid:
    """Uniform rectilinear grid of exported mode fields.

    Field arrays are indexed ``[ix, iy, iz]`` with trailing component
    axes: displacement and electric field carry 3 components, stress and
    strain 6 Voigt components (engineering shear). Unused fields may be
    ``None``; every operation checks for what it needs.
    """

    shape: tuple[int, int, int]
    spacing: tuple[float, float, float]
    displacement: np.ndarray | None = None      # m, complex (...,3)
    stress: np.ndarray | None = None            # Pa, complex (...,6)
    strain: np.ndarray | None = None            # dimensionless, complex (...,6)
    efield: np.ndarray | None = None            # V/m, complex (...,3)
    permittivity: np.ndarray | None = None      # F/m, real (...)
    density: np.ndarray | None = None           # kg/m^3, real (...)
    omega_m: float = 0.0                        # rad/s
    youngs_modulus: float = 0.0                 # Pa
    poisson_ratio: float = 0.0
    wavelength: float = 0.0                     # m
    n_refr: float = 1.0

    def __post_init__(self):
        self.shape = tuple(int(n) for n in self.shape)
        self.spacing = tuple(float(d) for d in self.spacing)
        if len(self.shape) != 3 or any(n < 1 for n in self.shape):
            raise ValueError(f"grid shape must be three positive sizes, got {self.shape}")
        if len(self.spacing) != 3 or any(d <= 0 for d in self.spacing):
            raise ValueError(f"grid spacing must be positive, got {self.spacing}")
        for name, comps in (("displacement", 3), ("stress", 6), ("strain", 6), ("efield", 3)):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.complex128)
                if arr.shape != self.shape + (comps,):
                    raise ValueError(
                        f"{name} shape {arr.shape} != {self.shape + (comps,)}"
                    )
                setattr(self, name, arr)
        for name in ("permittivity", "density"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if arr.shape != self.shape:
                    raise ValueError(f"{name} shape {arr.shape} != {self.shape}")
                setattr(self, name, arr)
        if self.displacement is not None and self.density is not None:
            moving = np.abs(self.displacement).sum(axis=-1) > 0
            if np.any(self.density[moving] <= 0):
                raise ValueError("density must be > 0 wherever displacement is nonzero")
        if self.efield is not None and self.permittivity is not None:
            lit = np.abs(self.efield).sum(axis=-1) > 0
            if np.any(self.permittivity[lit] <= 0):
                raise ValueError("permittivity must be > 0 wherever the field is nonzero")

    @property
    def cell_volume(self) -> float:
        return self.spacing[0] * self.spacing[1] * self.spacing[2]

    def _require(self, *names):
        for name in names:
            if getattr(self, name) is None:
                raise ValueError(f"grid is missing the {name} field")


def _cell_average(values: np.ndarray) -> np.ndarray:
    """Average nodal values onto cell centers (mean of 8 corners)."""
    if any(n < 2 for n in values.shape[:3]):
        raise DegenerateFieldError(
            f"integration needs at least 2 nodes per axis, got {values.shape[:3]}"
        )
    v = values
    return 0.125 * (
        v[:-1, :-1, :-1] + v[1:, :-1, :-1] + v[:-1, 1:, :-1] + v[:-1, :-1, 1:]
        + v[1:, 1:, :-1] + v[1:, :-1, 1:] + v[:-1, 1:, 1:] + v[1:, 1:, 1:]
    )


def _integrate(grid: FieldGrid, values: np.ndarray) -> float | complex:
    return _cell_average(values).sum() * grid.cell_volume


def energy_density(grid: FieldGrid) -> np.ndarray:
    """Cycle-averaged acoustic energy density, J/m^3.

    One quarter of the real part of the stress-conjugate-strain
    contraction plus the kinetic term ``rho omega_m^2 |u|^2``. Engineering
    shear strains make the contraction a plain 6-component dot product.
    """
    grid._require("stress", "strain", "displacement", "density")
    if grid.omega_m <= 0:
        raise ValueError("grid needs omega_m > 0 for the kinetic energy term")
    elastic = np.real(np.sum(grid.stress * grid.strain.conj(), axis=-1))
    kinetic = grid.density * grid.omega_m ** 2 * np.sum(np.abs(grid.displacement) ** 2, axis=-1)
    h = 0.25 * (elastic + kinetic)
    floor = -1e-9 * max(h.max(), 0.0)
    if h.min() < floor:
        raise ValueError(
            f"energy density has a significant negative value ({h.min():.3e}); "
            f"stress and strain fields are inconsistent"
        )
    return h


@dataclass(frozen=True)
class MechModeVolume:
    volume: float           # m^3
    per_lambda_p3: float    # volume / Lambda_p^3
    per_lambda_s3: float    # volume / Lambda_s^3
    lambda_p: float         # m
    lambda_s: float         # m


@dataclass(frozen=True)
class OptModeVolume:
    volume: float           # m^3
    per_lambda_n3: float    # volume / (wavelength / n)^3


def mech_mode_volume(grid: FieldGrid) -> MechModeVolume:
    """Mechanical mode volume: energy-density integral over its nodal peak.

    Also reported in units of the longitudinal and shear acoustic
    wavelengths cubed; the material density entering those wavelengths is
    the grid's maximum (the solid region; vacuum nodes carry zero).
    """
    h = energy_density(grid)
    peak = h.max()
    if peak <= 0:
        raise DegenerateFieldError("energy density is identically zero")
    volume = _integrate(grid, h) / peak
    lam_p, lam_s = acoustic_wavelengths(
        grid.youngs_modulus, grid.poisson_ratio, float(grid.density.max()), grid.omega_m
    )
    return MechModeVolume(
        volume=float(volume),
        per_lambda_p3=float(volume / lam_p ** 3),
        per_lambda_s3=float(volume / lam_s ** 3),
        lambda_p=lam_p,
        lambda_s=lam_s,
    )


def opt_mode_volume(grid: FieldGrid) -> OptModeVolume:
    """Optical mode volume: permittivity-weighted field-energy integral
    over the peak energy density, with the permittivity evaluated at the
    nodal argmax of |e|^2."""
    grid._require("efield", "permittivity")
    intensity = np.sum(np.abs(grid.efield) ** 2, axis=-1)
    peak = intensity.max()
    if peak <= 0:
        raise DegenerateFieldError("electric field is identically zero")
    at_peak = np.unravel_index(int(intensity.argmax()), grid.shape)
    eps_peak = grid.permittivity[at_peak]
    volume = _integrate(grid, grid.permittivity * intensity) / (eps_peak * peak)
    per = 0.0
    if grid.wavelength > 0 and grid.n_refr > 0:
        per = float(volume / (grid.wavelength / grid.n_refr) ** 3)
    return OptModeVolume(volume=float(volume), per_lambda_n3=per)


def effective_mass(grid: FieldGrid) -> float:
    """Motional mass: density-weighted |u|^2 integral over the peak |u|^2.

    Invariant under rescaling of the displacement field.
    """
    grid._require("displacement", "density")
    usq = np.sum(np.abs(grid.displacement) ** 2, axis=-1)
    peak = usq.max()
    if peak <= 0:
        raise DegenerateFieldError("displacement is identically zero")
    return float(_integrate(grid, grid.density * usq) / peak)


def x_zpf(m_eff: float, omega_m: float) -> float:
    """Zero-point displacement of a mode with the given motional mass."""
    if m_eff <= 0 or omega_m <= 0:
        raise ValueError("effective mass and omega_m must be > 0")
    return float(np.sqrt(hbar / (2.0 * m_eff * omega_m)))


def acoustic_wavelengths(youngs_modulus: float, poisson_ratio: float,
                         density: float, omega_m: float) -> tuple[float, float]:
    """Bulk longitudinal and shear acoustic wavelengths at ``omega_m``.

    The longitudinal wavelength always exceeds the shear one and diverges
    toward the incompressible limit (Poisson ratio -> 1/2).
    """
    e, nu, rho = youngs_modulus, poisson_ratio, density
    if not 0 <= nu < 0.5:
        raise ValueError(f"Poisson ratio must be in [0, 0.5), got {nu}")
    if e <= 0 or rho <= 0 or omega_m <= 0:
        raise ValueError("Young's modulus, density and omega_m must be > 0")
    v_p = np.sqrt(e * (1.0 - nu) / (rho * (1.0 + nu) * (1.0 - 2.0 * nu)))
    v_s = np.sqrt(e / (2.0 * rho * (1.0 + nu)))
    return float(TWO_PI * v_p / omega_m), float(TWO_PI * v_s / omega_m)


def _voigt_to_tensor(t6: np.ndarray) -> np.ndarray:
    """Engineering-Voigt strain (...,6) to tensor form (...,3,3)."""
    t6 = np.asarray(t6)
    out = np.zeros(t6.shape[:-1] + (3, 3), dtype=np.complex128)
    out[..., 0, 0] = t6[..., 0]
    out[..., 1, 1] = t6[..., 1]
    out[..., 2, 2] = t6[..., 2]
    out[..., 1, 2] = out[..., 2, 1] = 0.5 * t6[..., 3]
    out[..., 0, 2] = out[..., 2, 0] = 0.5 * t6[..., 4]
    out[..., 0, 1] = out[..., 1, 0] = 0.5 * t6[..., 5]
    return out


def _tensor_to_voigt(t33: np.ndarray) -> np.ndarray:
    out = np.empty(t33.shape[:-2] + (6,), dtype=np.complex128)
    out[..., 0] = t33[..., 0, 0]
    out[..., 1] = t33[..., 1, 1]
    out[..., 2] = t33[..., 2, 2]
    out[..., 3] = 2.0 * t33[..., 1, 2]
    out[..., 4] = 2.0 * t33[..., 0, 2]
    out[..., 5] = 2.0 * t33[..., 0, 1]
    return out


def rotate_strain(t6, frame: CrystalFrame) -> np.ndarray:
    """Rotate engineering-Voigt strain into the crystal frame.

    Converts to tensor form, conjugates by the frame's z-rotation matrix,
    and converts back. Accepts a single 6-vector or any (...,6) array of
    them; preserves the tensor trace and Frobenius norm.
    """
    t6 = np.asarray(t6, dtype=np.complex128)
    if t6.shape[-1] != 6:
        raise ValueError(f"strain must have 6 Voigt components, got shape {t6.shape}")
    r = frame.rotation_matrix()
    tensor = _voigt_to_tensor(t6)
    rotated = np.einsum("ij,...jk,lk->...il", r, tensor, r)
    return _tensor_to_voigt(rotated)


@dataclass(frozen=True)
class StrainCouplingMap:
    """Pointwise phonon-electron coupling rate and its maximum."""

    rate: np.ndarray            # rad/s, grid-shaped
    max_abs: float              # rad/s
    argmax_index: tuple[int, int, int]
    argmax_position: tuple[float, float, float]  # m


def g_m_e_map(grid: FieldGrid, chi: float = CHI_STRAIN_DEFAULT,
              frame: CrystalFrame = CrystalFrame(0.0),
              zpf: float | None = None) -> StrainCouplingMap:
    """Strain-to-electron coupling rate map.

    Rotates the strain into the crystal frame, takes the transverse
    normal-strain difference (xx minus yy), normalizes by the peak
    displacement magnitude, and scales by the susceptibility ``chi`` and
    the zero-point displacement. If ``zpf`` is not given it is derived
    from the grid via :func:`effective_mass` and :func:`x_zpf`.
    """
    grid._require("strain", "displacement")
    umax = np.sqrt(np.sum(np.abs(grid.displacement) ** 2, axis=-1).max())
    if umax <= 0:
        raise DegenerateFieldError("displacement is identically zero")
    if zpf is None:
        zpf = x_zpf(effective_mass(grid), grid.omega_m)
    rotated = rotate_strain(grid.strain, frame)
    rate = np.abs(chi * (rotated[..., 0] - rotated[..., 1]) / umax * zpf)
    idx = np.unravel_index(int(rate.argmax()), grid.shape)
    pos = tuple(float(i * d) for i, d in zip(idx, grid.spacing))
    return StrainCouplingMap(
        rate=rate, max_abs=float(rate.max()), argmax_index=idx, argmax_position=pos
    )


def extract_line(field: np.ndarray, grid: FieldGrid, axis: str,
                 fixed: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Profile of a grid-shaped scalar field along one axis.

    ``fixed`` gives the node indices of the two remaining axes in x, y, z
    order. Returns (positions in meters, values).
    """
    axes = {"x": 0, "y": 1, "z": 2}
    if axis not in axes:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    k = axes[axis]
    others = [i for i in range(3) if i != k]
    index = [0, 0, 0]
    index[k] = slice(None)
    for o, i in zip(others, fixed):
        if not 0 <= i < grid.shape[o]:
            raise ValueError(f"fixed index {i} out of range for axis {o}")
        index[o] = i
    positions = np.arange(grid.shape[k]) * grid.spacing[k]
    return positions, np.asarray(field[tuple(index)])


def piezo_coupling(grid: FieldGrid, piezo_tensor) -> float:
    """Piezoelectric microwave-phonon coupling rate from the overlap of
    the strain and electric fields, rad/s.

    Both fields must be normalized to their zero-point amplitudes before
    export; this routine evaluates only the overlap integral
    ``(1/2 hbar) * integral(T* . (D^T e) + e* . (D T))`` with ``D`` the
    3x6 piezoelectric tensor (C/m^2). The integrand is a conjugate pair,
    so the result is real; a significant imaginary part signals
    inconsistent inputs and raises.
    """
    grid._require("strain", "efield")
    d = np.asarray(piezo_tensor, dtype=float)
    if d.shape != (3, 6):
        raise ValueError(f"piezoelectric tensor must be 3x6, got {d.shape}")
    t, e = grid.strain, grid.efield
    dte = np.einsum("jk,...j->...k", d, e)        # D^T e, 6 components
    dt = np.einsum("kj,...j->...k", d, t)         # D T, 3 components
    integrand = np.sum(t.conj() * dte, axis=-1) + np.sum(e.conj() * dt, axis=-1)
    value = _integrate(grid, integrand) / (2.0 * hbar)
    if abs(value.imag) > 1e-9 * max(abs(value.real), 1e-300):
        raise ValueError(
            f"overlap integral is not real (imag/real = {value.imag / value.real:.3e}); "
            f"strain and field inputs are inconsistent"
        )
    return float(value.real)


# ---------------------------------------------------------------------------
# Grid file input/output
# ---------------------------------------------------------------------------

_HEADER_KEYS = ("shape", "spacing", "omega_m", "E", "nu", "lambda", "n_refr", "voigt")
_N_COLUMNS = 3 + 2 * 3 + 2 * 6 + 2 * 6 + 2 * 3 + 2


def save_grid(grid: FieldGrid, path):
    """Write a grid in the text interchange format (bit-exact round trip).

    Header lines ``#key value...``, then one whitespace-separated row per
    node: integer indices, complex components as re/im pairs for
    displacement, stress, strain and electric field, then permittivity
    and density. Rows run z-fastest.
    """
    nx, ny, nz = grid.shape
    n = nx * ny * nz
    zeros3 = np.zeros(grid.shape + (3,), dtype=np.complex128)
    zeros6 = np.zeros(grid.shape + (6,), dtype=np.complex128)
    u = grid.displacement if grid.displacement is not None else zeros3
    s = grid.stress if grid.stress is not None else zeros6
    t = grid.strain if grid.strain is not None else zeros6
    e = grid.efield if grid.efield is not None else zeros3
    eps = grid.permittivity if grid.permittivity is not None else np.zeros(grid.shape)
    rho = grid.density if grid.density is not None else np.zeros(grid.shape)

    ix, iy, iz = np.indices(grid.shape)

    def interleave(arr):
        flat = arr.reshape(n, arr.shape[-1])
        out = np.empty((n, 2 * arr.shape[-1]))
        out[:, 0::2] = flat.real
        out[:, 1::2] = flat.imag
        return out

    data = np.hstack([
        interleave(u), interleave(s), interleave(t), interleave(e),
        eps.reshape(n, 1), rho.reshape(n, 1),
    ])
    idx = np.column_stack([ix.ravel(), iy.ravel(), iz.ravel()])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#shape {nx} {ny} {nz}\n")
        fh.write(f"#spacing {grid.spacing[0]:.17g} {grid.spacing[1]:.17g} {grid.spacing[2]:.17g}\n")
        fh.write(f"#omega_m {grid.omega_m:.17g}\n")
        fh.write(f"#E {grid.youngs_modulus:.17g}\n")
        fh.write(f"#nu {grid.poisson_ratio:.17g}\n")
        fh.write(f"#lambda {grid.wavelength:.17g}\n")
        fh.write(f"#n_refr {grid.n_refr:.17g}\n")
        fh.write("#voigt engineering\n")
        for r in range(n):
            cols = [str(idx[r, 0]), str(idx[r, 1]), str(idx[r, 2])]
            cols += [f"{v:.17g}" for v in data[r]]
            fh.write(" ".join(cols) + "\n")


def load_grid(path) -> FieldGrid:
    """Parse a grid file written by :func:`save_grid`.

    Raises :class:`GridFormatError` with the offending line number for a
    malformed header, wrong column count, out-of-order rows, shape
    mismatches, or non-finite values.
    """
    header: dict[str, list[str]] = {}
    rows = []
    row_lines = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if rows:
                    raise GridFormatError("header line after data rows", lineno)
                parts = line[1:].split()
                if not parts:
                    raise GridFormatError("empty header line", lineno)
                key, values = parts[0], parts[1:]
                if key not in _HEADER_KEYS:
                    raise GridFormatError(f"unknown header key {key!r}", lineno)
                if key in header:
                    raise GridFormatError(f"duplicate header key {key!r}", lineno)
                header[key] = values
                continue
            parts = line.split()
            if len(parts) != _N_COLUMNS:
                raise GridFormatError(
                    f"expected {_N_COLUMNS} columns, got {len(parts)}", lineno
                )
            rows.append(parts)
            row_lines.append(lineno)

    for key in ("shape", "spacing", "omega_m", "E", "nu", "voigt"):
        if key not in header:
            raise GridFormatError(f"missing required header key {key!r}")
    if header["voigt"] != ["engineering"]:
        raise GridFormatError(f"unsupported voigt convention {header['voigt']}")

    def scalar(key, default=None):
        values = header.get(key)
        if values is None:
            return default
        if len(values) != 1:
            raise GridFormatError(f"header {key!r} takes one value, got {values}")
        return float(values[0])

    try:
        shape = tuple(int(v) for v in header["shape"])
        spacing = tuple(float(v) for v in header["spacing"])
    except ValueError as exc:
        raise GridFormatError(f"malformed shape/spacing header: {exc}") from None
    if len(shape) != 3 or len(spacing) != 3:
        raise GridFormatError("shape and spacing headers need three values each")

    n = shape[0] * shape[1] * shape[2]
    if len(rows) != n:
        raise GridFormatError(
            f"shape {shape} promises {n} rows but the file has {len(rows)}"
        )

    try:
        data = np.array(rows, dtype=float)
    except ValueError:
        for r, parts in enumerate(rows):
            for p in parts:
                try:
                    float(p)
                except ValueError:
                    raise GridFormatError(
                        f"unparseable value {p!r}", row_lines[r]
                    ) from None
        raise
    bad = ~np.isfinite(data).all(axis=1)
    if bad.any():
        raise GridFormatError("non-finite value in row", row_lines[int(np.argmax(bad))])

    ix, iy, iz = np.indices(shape)
    expected = np.column_stack([ix.ravel(), iy.ravel(), iz.ravel()])
    got = data[:, :3].astype(int)
    if not np.array_equal(expected, got):
        first = int(np.argmax((expected != got).any(axis=1)))
        raise GridFormatError(
            f"row indices out of order (expected {tuple(expected[first])}, "
            f"got {tuple(got[first])})",
            row_lines[first],
        )

    def complex_block(start, comps):
        block = data[:, start:start + 2 * comps]
        return (block[:, 0::2] + 1j * block[:, 1::2]).reshape(shape + (comps,))

    col = 3
    u = complex_block(col, 3); col += 6
    s = complex_block(col, 6); col += 12
    t = complex_block(col, 6); col += 12
    e = complex_block(col, 3); col += 6
    eps = data[:, col].reshape(shape); col += 1
    rho = data[:, col].reshape(shape)

    return FieldGrid(
        shape=shape,
        spacing=spacing,
        displacement=u,
        stress=s,
        strain=t,
        efield=e,
        permittivity=eps,
        density=rho,
        omega_m=scalar("omega_m", 0.0),
        youngs_modulus=scalar("E", 0.0),
        poisson_ratio=scalar("nu", 0.0),
        wavelength=scalar("lambda", 0.0),
        n_refr=scalar("n_refr", 1.0),
    )
