import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lincov.errors import (
    IllConditionedError,
    InputError,
    NotPositiveDefiniteError,
)
from lincov.symspace import (
    LinearModel,
    SymMatrix,
    inner_product,
    orth_complement,
    pack,
    pack_weights,
    packed_length,
    project_coords,
    triu_pairs,
    unpack,
)


def trace_product_oracle(A, B):
    # independent double-sum definition of tr(A @ B)
    n = A.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += A[i, j] * B[j, i]
    return total


def random_sym(rng, n):
    M = rng.standard_normal((n, n))
    return (M + M.T) / 2


def test_pack_order_is_row_major_upper_triangle():
    M = np.array([[11.0, 12.0, 13.0], [12.0, 22.0, 23.0], [13.0, 23.0, 33.0]])
    assert np.array_equal(pack(M), [11.0, 12.0, 13.0, 22.0, 23.0, 33.0])
    assert np.array_equal(unpack(pack(M), 3), M)


def test_pack_weights():
    iu, ju = triu_pairs(4)
    w = pack_weights(4)
    assert np.array_equal(w[iu == ju], np.ones(4))
    assert np.array_equal(w[iu != ju], 2 * np.ones(6))


def test_inner_product_matches_trace_oracle():
    rng = np.random.default_rng(0)
    for n in (2, 3, 4, 5):
        for _ in range(5):
            A, B = random_sym(rng, n), random_sym(rng, n)
            got = inner_product(SymMatrix.from_full(A), SymMatrix.from_full(B))
            assert got == pytest.approx(trace_product_oracle(A, B), rel=1e-12)


def test_from_full_rejects_asymmetry_and_bad_shape():
    with pytest.raises(InputError):
        SymMatrix.from_full(np.array([[1.0, 2.0], [2.1, 1.0]]))
    with pytest.raises(InputError):
        SymMatrix.from_full(np.zeros((2, 3)))


def test_symmatrix_is_immutable():
    s = SymMatrix.identity(3)
    with pytest.raises(AttributeError):
        s.n = 4
    with pytest.raises(ValueError):
        s.packed[0] = 5.0


def test_symmatrix_arithmetic_and_norm():
    rng = np.random.default_rng(1)
    A, B = random_sym(rng, 4), random_sym(rng, 4)
    sa, sb = SymMatrix.from_full(A), SymMatrix.from_full(B)
    assert np.allclose((sa + sb).full(), A + B)
    assert np.allclose((sa - 2.0 * sb).full(), A - 2 * B)
    assert (-sa).full() == pytest.approx(-A)
    assert sa.norm() == pytest.approx(np.linalg.norm(A, "fro"))


def toeplitz3_basis():
    return [
        SymMatrix.identity(3),
        SymMatrix.from_full(np.array([[0.0, 1, 0], [1, 0, 1], [0, 1, 0]])),
        SymMatrix.from_full(np.array([[0.0, 0, 1], [0, 0, 0], [1, 0, 0]])),
    ]


def test_linear_model_accepts_valid_basis():
    model = LinearModel(3, toeplitz3_basis(), SymMatrix.identity(3), "toeplitz")
    assert model.m == 3 and model.dim == 6 and model.codim == 3
    assert not model.is_diagonal


def test_linear_model_rejects_dependent_basis():
    b = toeplitz3_basis()
    bad = b + [SymMatrix(3, b[0].packed + 1e-15 * b[1].packed)]
    with pytest.raises(IllConditionedError):
        LinearModel(3, bad, SymMatrix.identity(3))


def test_linear_model_rejects_witness_outside_span():
    off = SymMatrix.from_full(np.array([[2.0, 1, 0], [1, 2.0, 0], [0, 0, 2.0]]))
    with pytest.raises(InputError):
        LinearModel(3, toeplitz3_basis(), off)


def test_linear_model_rejects_indefinite_witness():
    witness = toeplitz3_basis()[1]  # eigenvalues of sign both ways
    with pytest.raises(NotPositiveDefiniteError):
        LinearModel(3, toeplitz3_basis(), witness)


def test_orth_complement_dimensions_and_orthogonality():
    rng = np.random.default_rng(2)
    for n, m in [(3, 2), (4, 4), (5, 7)]:
        basis, witness = [SymMatrix.identity(n)], SymMatrix.identity(n)
        while len(basis) < m:
            cand = SymMatrix.from_full(random_sym(rng, n))
            basis.append(cand)
        model = LinearModel(n, basis, witness)
        comp = orth_complement(model)
        assert len(comp) == packed_length(n) - m
        for c in comp:
            for b in basis:
                assert abs(inner_product(c, b)) < 1e-10
        # orthonormal among themselves
        G = np.array([[inner_product(a, b) for b in comp] for a in comp])
        assert np.allclose(G, np.eye(len(comp)), atol=1e-10)


def test_orth_complement_of_toeplitz3_spans_expected_constraints():
    model = LinearModel(3, toeplitz3_basis(), SymMatrix.identity(3))
    comp = orth_complement(model)
    # constraints sigma11 - sigma33, sigma12 - sigma23, sigma22 - sigma33 as
    # matrices representing the functionals under the trace pairing
    constraints = [
        np.diag([1.0, 0.0, -1.0]),
        np.array([[0.0, 0.5, 0], [0.5, 0, -0.5], [0, -0.5, 0]]),
        np.diag([0.0, 1.0, -1.0]),
    ]
    comp_rows = np.stack([c.packed * pack_weights(3) for c in comp])
    for C in constraints:
        target = pack(C) * pack_weights(3)
        coeffs, res, *_ = np.linalg.lstsq(comp_rows.T, target, rcond=None)
        recon = comp_rows.T @ coeffs
        assert np.allclose(recon, target, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(
    coords=st.lists(
        st.floats(min_value=-10, max_value=10, allow_nan=False), min_size=3, max_size=3
    )
)
def test_project_coords_inverts_combination(coords):
    model = LinearModel(3, toeplitz3_basis(), SymMatrix.identity(3))
    M = model.combination(np.array(coords))
    back = project_coords(M, model)
    assert np.allclose(back, coords, atol=1e-10 * (1 + np.abs(coords).max()))


def test_projection_residual_is_orthogonal_to_model():
    rng = np.random.default_rng(3)
    model = LinearModel(3, toeplitz3_basis(), SymMatrix.identity(3))
    M = SymMatrix.from_full(random_sym(rng, 3))
    proj = model.combination(project_coords(M, model))
    resid = M - proj
    for b in model.basis:
        assert abs(inner_product(resid, b)) < 1e-10


def test_is_diagonal_flag():
    basis = [
        SymMatrix.from_full(np.diag([1.0, 2.0, 0.5])),
        SymMatrix.from_full(np.diag([0.0, 1.0, -1.0])),
    ]
    model = LinearModel(3, basis, SymMatrix.from_full(np.diag([1.0, 2.0, 0.5])))
    assert model.is_diagonal
