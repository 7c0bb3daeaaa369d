import numpy as np
import pytest

from transduction.operators import (
    ELECTRON,
    DensityMatrix,
    DimensionError,
    HilbertLayout,
    LayoutError,
    Operator,
    adjoint,
    create,
    destroy,
    embed,
    expectation,
    identity,
    number,
    sigma_minus,
    sigma_plus,
)


def test_layout_validation():
    layout = HilbertLayout((3, 4, 2, 3))
    assert layout.total_dim == 72
    with pytest.raises(DimensionError):
        HilbertLayout((3, 4, 2))        # needs four subsystems
    with pytest.raises(DimensionError):
        HilbertLayout((3, 1, 2, 3))     # dims >= 2
    with pytest.raises(DimensionError):
        HilbertLayout((3, 4, 3, 3))     # electron is two-level


def test_destroy_matrix_elements():
    a2 = destroy(2)
    np.testing.assert_array_equal(a2.mat, [[0, 1], [0, 0]])
    a3 = destroy(3)
    assert a3.mat[1, 2] == pytest.approx(np.sqrt(2))
    assert a3.mat[0, 1] == 1.0
    with pytest.raises(DimensionError):
        destroy(1)


def test_destroy_ladder_action():
    a = destroy(3)
    ket2 = np.array([0.0, 0.0, 1.0])
    out = a.mat @ ket2
    np.testing.assert_allclose(out, np.sqrt(2) * np.array([0.0, 1.0, 0.0]))


def test_sigma_algebra():
    sm, sp = sigma_minus(), sigma_plus()
    np.testing.assert_array_equal((sm @ sm).mat, np.zeros((2, 2)))
    np.testing.assert_array_equal((sp @ sm).mat, np.diag([0.0, 1.0]))
    anticommutator = (sm @ sp + sp @ sm).mat
    np.testing.assert_array_equal(anticommutator, np.eye(2))


def test_adjoint_involution_and_create():
    a = destroy(4)
    assert np.array_equal(adjoint(adjoint(a)).mat, a.mat)
    assert np.array_equal(create(4).mat, a.mat.conj().T)
    np.testing.assert_allclose((create(4) @ destroy(4)).mat, number(4).mat)


def test_truncated_commutator_identity():
    # [a, a†] is the identity except the last diagonal entry, which picks
    # up the truncation artifact 1 - n. Exact up to the rounding of
    # sqrt(k)**2 (one ulp).
    for n in (2, 3, 5):
        a, ad = destroy(n), create(n)
        comm = (a @ ad - ad @ a).mat
        expected = np.eye(n)
        expected[-1, -1] = 1 - n
        np.testing.assert_allclose(comm, expected, atol=n * np.finfo(float).eps)


def test_embed_identity_and_commutation():
    layout = HilbertLayout((2, 3, 2, 2))
    full = embed(identity(3), 1, layout)
    np.testing.assert_array_equal(full.mat, np.eye(layout.total_dim))
    n0 = embed(number(2), 0, layout)
    n1 = embed(number(3), 1, layout)
    np.testing.assert_allclose((n0 @ n1 - n1 @ n0).mat, 0.0, atol=0)


def test_embed_against_direct_kronecker():
    # independent oracle: build the same lift with raw np.kron
    layout = HilbertLayout((2, 2, 2, 2))
    rng = np.random.default_rng(7)
    op = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    for index in range(4):
        mats = [np.eye(2)] * 4
        mats[index] = op
        direct = np.kron(np.kron(np.kron(mats[0], mats[1]), mats[2]), mats[3])
        lifted = embed(Operator(op, (2,)), index, layout)
        np.testing.assert_allclose(lifted.mat, direct, atol=1e-15)
        # trace factorizes: trace(op) times the product of the other dims
        assert lifted.mat.trace() == pytest.approx(op.trace() * 8)


def test_embed_preserves_spectrum():
    # eigenvalues of the lifted operator are the subsystem eigenvalues,
    # each repeated (total_dim / subsystem_dim) times
    layout = HilbertLayout((2, 3, 2, 3))
    rng = np.random.default_rng(21)
    for index, dim in enumerate(layout.dims):
        h = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        h = h + h.conj().T
        lifted = embed(Operator(h, (dim,)), index, layout)
        reps = layout.total_dim // dim
        expected = np.sort(np.repeat(np.linalg.eigvalsh(h), reps))
        np.testing.assert_allclose(np.linalg.eigvalsh(lifted.mat), expected, atol=1e-10)


def test_embed_dimension_mismatch():
    layout = HilbertLayout((2, 3, 2, 2))
    with pytest.raises(DimensionError):
        embed(identity(2), 1, layout)
    with pytest.raises(LayoutError):
        embed(identity(2), 5, layout)


def _pure_state(layout, occupations):
    psi = np.zeros(layout.total_dim)
    index = 0
    for dim, occ in zip(layout.dims, occupations):
        index = index * dim + occ
    psi[index] = 1.0
    return DensityMatrix(np.outer(psi, psi), layout.dims)


def test_expectation_basics():
    layout = HilbertLayout((2, 2, 2, 2))
    ground = _pure_state(layout, (0, 0, 0, 0))
    n_mw = embed(number(2), 0, layout)
    eye = embed(identity(2), ELECTRON, layout)
    assert expectation(ground, n_mw) == 0
    assert expectation(ground, eye) == pytest.approx(1.0)
    excited = _pure_state(layout, (1, 0, 0, 0))
    assert expectation(excited, n_mw) == pytest.approx(1.0)


def test_expectation_linearity():
    layout = HilbertLayout((2, 2, 2, 2))
    rng = np.random.default_rng(3)
    rho = _pure_state(layout, (1, 0, 0, 0))
    a = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    b = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    op_a, op_b = Operator(a, layout.dims), Operator(b, layout.dims)
    lhs = expectation(rho, Operator(2.0 * a + 3.0 * b, layout.dims))
    rhs = 2.0 * expectation(rho, op_a) + 3.0 * expectation(rho, op_b)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_expectation_layout_mismatch():
    rho = _pure_state(HilbertLayout((2, 2, 2, 2)), (0, 0, 0, 0))
    op = embed(number(3), 1, HilbertLayout((2, 3, 2, 2)))
    with pytest.raises(LayoutError):
        expectation(rho, op)


def test_operator_immutable():
    a = destroy(3)
    with pytest.raises(AttributeError):
        a.mat = np.zeros((3, 3))
    with pytest.raises(ValueError):
        a.mat[0, 0] = 1.0  # numpy read-only buffer


def test_density_matrix_validation():
    layout = (2, 2, 2, 2)
    good = _pure_state(HilbertLayout(layout), (0, 0, 0, 0))
    good.validate()
    assert good.purity() == pytest.approx(1.0)
    bad_trace = 0.5 * good.mat
    with pytest.raises(ValueError):
        DensityMatrix(bad_trace, layout)
    non_hermitian = np.array(good.mat, copy=True)
    non_hermitian[0, 1] = 1e-3
    with pytest.raises(ValueError):
        DensityMatrix(non_hermitian, layout)
