"""Dense operator algebra on the composite Hilbert space of the transducer.

The composite space is a tensor product of four subsystems in a fixed,
non-configurable order:

    index 0 -- microwave cavity photon (truncated bosonic mode)
    index 1 -- mechanical breathing-mode phonon (truncated bosonic mode)
    index 2 -- color-center electron (two-level system)
    index 3 -- optical cavity photon (truncated bosonic mode)

All operators are dense ``complex128`` matrices; total dimensions stay in
the few-hundred range so sparse storage buys nothing. Operators and
layouts are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MICROWAVE",
    "MECHANICAL",
    "ELECTRON",
    "OPTICAL",
    "HilbertLayout",
    "Operator",
    "DensityMatrix",
    "DimensionError",
    "LayoutError",
    "destroy",
    "create",
    "number",
    "identity",
    "sigma_minus",
    "sigma_plus",
    "adjoint",
    "embed",
    "expectation",
]

MICROWAVE = 0
MECHANICAL = 1
ELECTRON = 2
OPTICAL = 3


class DimensionError(ValueError):
    """A subsystem dimension is invalid for the requested operator."""


class LayoutError(ValueError):
    """Two objects live on different Hilbert-space layouts."""


@dataclass(frozen=True)
class HilbertLayout:
    """Ordered subsystem dimensions (microwave, mechanical, electron, optical).

    Parameters
    ----------
    dims : tuple of int
        Truncation dimension of each subsystem, in the fixed order above.
        Every dimension must be at least 2 and the electron slot is
        exactly 2.
    """

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) != 4:
            raise DimensionError(
                f"layout needs the four subsystem dimensions, got {len(dims)}"
            )
        if any(d < 2 for d in dims):
            raise DimensionError(f"every subsystem dimension must be >= 2, got {dims}")
        if dims[ELECTRON] != 2:
            raise DimensionError(
                f"the electron is a two-level system, got dimension {dims[ELECTRON]}"
            )

    @property
    def total_dim(self) -> int:
        return math.prod(self.dims)


def _as_immutable(mat: np.ndarray) -> np.ndarray:
    mat = np.array(mat, dtype=np.complex128, copy=True)
    mat.setflags(write=False)
    return mat


class Operator:
    """A dense complex matrix together with the subsystem factorization it
    acts on.

    ``dims`` is ``(n,)`` for a single-subsystem operator and the full
    layout tuple for a composite one. Arithmetic (``+``, ``-``, ``@``,
    scalar ``*``) requires matching ``dims`` and returns new operators;
    instances are immutable.
    """

    __slots__ = ("dims", "mat")

    def __init__(self, mat, dims):
        dims = tuple(int(d) for d in dims)
        mat = _as_immutable(mat)
        n = math.prod(dims)
        if mat.shape != (n, n):
            raise DimensionError(
                f"matrix shape {mat.shape} does not match dims {dims} (total {n})"
            )
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "mat", mat)

    def __setattr__(self, name, value):
        raise AttributeError("Operator is immutable")

    @property
    def total_dim(self) -> int:
        return self.mat.shape[0]

    def dag(self) -> "Operator":
        return Operator(self.mat.conj().T, self.dims)

    def _check_same(self, other: "Operator"):
        if self.dims != other.dims:
            raise LayoutError(f"operator dims differ: {self.dims} vs {other.dims}")

    def __matmul__(self, other: "Operator") -> "Operator":
        self._check_same(other)
        return Operator(self.mat @ other.mat, self.dims)

    def __add__(self, other: "Operator") -> "Operator":
        self._check_same(other)
        return Operator(self.mat + other.mat, self.dims)

    def __sub__(self, other: "Operator") -> "Operator":
        self._check_same(other)
        return Operator(self.mat - other.mat, self.dims)

    def __mul__(self, scalar) -> "Operator":
        return Operator(self.mat * complex(scalar), self.dims)

    __rmul__ = __mul__

    def __neg__(self) -> "Operator":
        return Operator(-self.mat, self.dims)

    def __repr__(self):
        return f"Operator(dims={self.dims}, shape={self.mat.shape})"


class DensityMatrix:
    """Trace-one Hermitian positive operator on the composite space."""

    __slots__ = ("dims", "mat")

    def __init__(self, mat, dims, validate=True):
        dims = tuple(int(d) for d in dims)
        mat = _as_immutable(mat)
        n = math.prod(dims)
        if mat.shape != (n, n):
            raise DimensionError(
                f"matrix shape {mat.shape} does not match dims {dims} (total {n})"
            )
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "mat", mat)
        if validate:
            self.validate()

    def __setattr__(self, name, value):
        raise AttributeError("DensityMatrix is immutable")

    @property
    def total_dim(self) -> int:
        return self.mat.shape[0]

    def validate(self, herm_tol=1e-10, trace_tol=1e-7, eig_tol=1e-8, check_positivity=True):
        """Raise ``ValueError`` if the state is not a valid density matrix.

        Checks Hermiticity (absolute tolerance ``herm_tol``), unit trace
        (``trace_tol``) and, optionally, that the minimum eigenvalue is
        above ``-eig_tol``. Positivity costs a dense eigensolve, so
        callers that check at every propagation sample may disable it.
        """
        defect = np.abs(self.mat - self.mat.conj().T).max()
        if defect > herm_tol:
            raise ValueError(f"density matrix is not Hermitian (defect {defect:.3e})")
        tr = self.mat.trace()
        if abs(tr - 1.0) > trace_tol:
            raise ValueError(f"density matrix trace {tr:.12g} is not 1")
        if check_positivity:
            lo = np.linalg.eigvalsh(self.mat).min()
            if lo < -eig_tol:
                raise ValueError(f"density matrix has negative eigenvalue {lo:.3e}")

    def purity(self) -> float:
        return float(np.real(np.trace(self.mat @ self.mat)))

    def __repr__(self):
        return f"DensityMatrix(dims={self.dims}, shape={self.mat.shape})"


def destroy(n: int) -> Operator:
    """Truncated bosonic annihilation operator on an ``n``-level mode.

    Entry ``(k, k+1)`` is ``sqrt(k+1)``; everything else is zero.
    """
    if n < 2:
        raise DimensionError(f"annihilation operator needs dimension >= 2, got {n}")
    mat = np.diag(np.sqrt(np.arange(1, n, dtype=float)), k=1)
    return Operator(mat, (n,))


def create(n: int) -> Operator:
    """Truncated bosonic creation operator, the adjoint of :func:`destroy`."""
    return destroy(n).dag()


def number(n: int) -> Operator:
    """Occupation-number operator ``a† a`` on an ``n``-level mode."""
    if n < 2:
        raise DimensionError(f"number operator needs dimension >= 2, got {n}")
    return Operator(np.diag(np.arange(n, dtype=float)), (n,))


def identity(n: int) -> Operator:
    if n < 2:
        raise DimensionError(f"identity needs dimension >= 2, got {n}")
    return Operator(np.eye(n), (n,))


def sigma_minus() -> Operator:
    """Electron lowering operator |g><e| in the {ground, excited} basis."""
    return Operator(np.array([[0.0, 1.0], [0.0, 0.0]]), (2,))


def sigma_plus() -> Operator:
    """Electron raising operator |e><g|, the adjoint of :func:`sigma_minus`."""
    return sigma_minus().dag()


def adjoint(op: Operator) -> Operator:
    return op.dag()


def embed(op: Operator, index: int, layout: HilbertLayout) -> Operator:
    """Lift a single-subsystem operator into the composite space.

    Returns the Kronecker product ``I x ... x op x ... x I`` with ``op``
    in slot ``index`` of ``layout`` and identities elsewhere, preserving
    the layout's subsystem order.
    """
    if not 0 <= index < len(layout.dims):
        raise LayoutError(f"subsystem index {index} out of range for {layout.dims}")
    if op.dims != (layout.dims[index],):
        raise DimensionError(
            f"operator dims {op.dims} do not match subsystem {index} "
            f"of layout {layout.dims}"
        )
    out = np.eye(1, dtype=np.complex128)
    for k, d in enumerate(layout.dims):
        factor = op.mat if k == index else np.eye(d, dtype=np.complex128)
        out = np.kron(out, factor)
    return Operator(out, layout.dims)


def expectation(rho: DensityMatrix, op: Operator) -> complex:
    """Expectation value ``trace(rho @ op)``.

    Always returns a complex number; for a Hermitian ``op`` the imaginary
    part is numerical noise (below 1e-10 for valid states).
    """
    if rho.dims != op.dims:
        raise LayoutError(f"state dims {rho.dims} do not match operator dims {op.dims}")
    # trace(rho @ op) without forming the product
    return complex(np.sum(rho.mat * op.mat.T))
