import numpy as np
import pytest

from lincov.families import Tree, diagonal_generic, generic_model, toeplitz, tree_model
from lincov.score_systems import (
    diagonal_system,
    dual_system,
    mle_system,
    score_system,
    start_pair,
)
from lincov.symspace import inner_product, SymMatrix, pack, unpack


def rand_cx(rng, size):
    return rng.standard_normal(size) + 1j * rng.standard_normal(size)


def brute_residual(model, x, p, dual):
    """Independent evaluation with explicit loops and full matrices."""
    m, n = model.m, model.n
    theta, kv = x[:m], x[m:]
    K = unpack(kv, n)
    Sigma = sum(t * b.full() for t, b in zip(theta, model.basis))
    ra = []
    for i in range(n):
        for j in range(i, n):
            acc = sum(K[i, l] * Sigma[l, j] for l in range(n))
            ra.append(acc - (1.0 if i == j else 0.0))
    if dual:
        W = unpack(p, n)
        M = K - W
    else:
        S = unpack(p, n)
        M = K @ S @ K - K
    rb = []
    for b in model.basis:
        B = b.full()
        rb.append(sum(M[i, j] * B[j, i] for i in range(n) for j in range(n)))
    return np.array(ra + rb)


class TestResidualOracles:
    def test_primal_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for model in [toeplitz(3), tree_model(Tree(4, [{1, 2}])), generic_model(3, 4, 1)]:
            sys = mle_system(model)
            x = rand_cx(rng, sys.n_unknowns)
            p = rand_cx(rng, sys.n_params)
            got = sys.residual(x, p)
            want = brute_residual(model, x, p, dual=False)
            assert np.allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_dual_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for model in [toeplitz(3), tree_model(Tree(5, [{1, 2}, {3, 4}, {3, 4, 5}]))]:
            sys = dual_system(model)
            x = rand_cx(rng, sys.n_unknowns)
            p = rand_cx(rng, sys.n_params)
            assert np.allclose(
                sys.residual(x, p), brute_residual(model, x, p, dual=True), rtol=1e-12
            )

    def test_toeplitz3_bilinear_block_structure(self):
        # block (a) entries are the upper triangle of K @ Sigma - I for the
        # symmetric Toeplitz pattern [[g0,g1,g2],[g1,g0,g1],[g2,g1,g0]]
        rng = np.random.default_rng(2)
        sys = mle_system(toeplitz(3))
        g = rng.standard_normal(3)
        kv = rng.standard_normal(6)
        x = np.concatenate([g, kv])
        Sig = np.array(
            [[g[0], g[1], g[2]], [g[1], g[0], g[1]], [g[2], g[1], g[0]]]
        )
        K = unpack(kv, 3)
        prod = K @ Sig
        expected = [
            prod[0, 0] - 1, prod[0, 1], prod[0, 2],
            prod[1, 1] - 1, prod[1, 2], prod[2, 2] - 1,
        ]
        got = sys.residual(x, np.zeros(6))[:6]
        assert np.allclose(got, expected, rtol=1e-13)

    def test_toeplitz3_trace_equation(self):
        # the first score equation is <KSK - K, I> = sum_i (KSK)_ii - tr K
        rng = np.random.default_rng(3)
        sys = mle_system(toeplitz(3))
        x = rand_cx(rng, sys.n_unknowns)
        p = rand_cx(rng, sys.n_params)
        K, S = unpack(x[3:], 3), unpack(p, 3)
        want = np.trace(K @ S @ K) - np.trace(K)
        assert sys.residual(x, p)[6] == pytest.approx(want, rel=1e-12)

    def test_toeplitz3_dual_linear_trio_up_to_scale(self):
        # displayed form: k11+k22+k33-w11-w22-w33, k12+k23-w12-w23, k13-w13;
        # the trace pairing doubles the off-diagonal rows
        rng = np.random.default_rng(4)
        sys = dual_system(toeplitz(3))
        x = rand_cx(rng, sys.n_unknowns)
        p = rand_cx(rng, sys.n_params)
        k = x[3:]
        w = p
        displayed = np.array(
            [
                k[0] + k[3] + k[5] - w[0] - w[3] - w[5],
                k[1] + k[4] - w[1] - w[4],
                k[2] - w[2],
            ]
        )
        got = sys.residual(x, p)[6:]
        assert np.allclose(got / displayed, [1.0, 2.0, 2.0], rtol=1e-12)

    def test_diagonal_system_residual(self):
        rng = np.random.default_rng(5)
        model = diagonal_generic(4, 2, seed=3)
        D = np.stack([np.diag(b.full()) for b in model.basis])
        for dual in (False, True):
            sys = diagonal_system(model, dual=dual)
            x = rand_cx(rng, sys.n_unknowns)
            p = rand_cx(rng, sys.n_params)
            theta, k = x[:2], x[2:]
            sig = theta @ D
            ra = sig * k - 1.0
            inner = (k - p) if dual else (p * k * k - k)
            rb = D @ inner
            assert np.allclose(sys.residual(x, p), np.concatenate([ra, rb]))

    @pytest.mark.parametrize("dual", [False, True])
    def test_residual_and_jac_agree_on_residual(self, dual):
        rng = np.random.default_rng(12)
        for model in [toeplitz(4), diagonal_generic(4, 2, seed=0)]:
            sys = score_system(model, dual=dual)
            x = rand_cx(rng, sys.n_unknowns)
            p = rand_cx(rng, sys.n_params)
            r, _ = sys.residual_and_jac(x, p)
            assert np.allclose(r, sys.residual(x, p), rtol=1e-13)

    def test_affine_in_parameters(self):
        rng = np.random.default_rng(6)
        for model, dual in [(toeplitz(3), False), (toeplitz(3), True)]:
            sys = score_system(model, dual=dual)
            x = rand_cx(rng, sys.n_unknowns)
            p = rand_cx(rng, sys.n_params)
            base = sys.residual(x, np.zeros_like(p))
            lin = sys.jac_p(x, p) @ p
            assert np.allclose(sys.residual(x, p), base + lin, rtol=1e-12)
            # parameter Jacobian does not depend on p
            assert np.allclose(sys.jac_p(x, p), sys.jac_p(x, 0 * p))


class TestJacobians:
    @pytest.mark.parametrize("dual", [False, True])
    def test_full_system_jacobians_match_finite_differences(self, dual):
        rng = np.random.default_rng(7)
        model = tree_model(Tree(4, [{1, 2}, {1, 2, 3}]))
        sys = score_system(model, dual=dual)
        x = rand_cx(rng, sys.n_unknowns)
        p = rand_cx(rng, sys.n_params)
        _, J = sys.residual_and_jac(x, p)
        assert np.allclose(J, _fd_jac(lambda y: sys.residual(y, p), x), rtol=1e-6, atol=1e-7)
        Jp = sys.jac_p(x, p)
        assert np.allclose(Jp, _fd_jac(lambda q: sys.residual(x, q), p), rtol=1e-6, atol=1e-7)

    @pytest.mark.parametrize("dual", [False, True])
    def test_diagonal_system_jacobians(self, dual):
        rng = np.random.default_rng(8)
        model = diagonal_generic(5, 3, seed=1)
        sys = diagonal_system(model, dual=dual)
        x = rand_cx(rng, sys.n_unknowns)
        p = rand_cx(rng, sys.n_params)
        _, J = sys.residual_and_jac(x, p)
        assert np.allclose(J, _fd_jac(lambda y: sys.residual(y, p), x), rtol=1e-6, atol=1e-7)
        assert np.allclose(
            sys.jac_p(x, p), _fd_jac(lambda q: sys.residual(x, q), p), rtol=1e-6, atol=1e-7
        )


def _fd_jac(f, z, h=1e-6):
    d = len(z)
    cols = []
    for i in range(d):
        e = np.zeros(d, dtype=complex)
        e[i] = h
        cols.append((f(z + e) - f(z - e)) / (2 * h))
    return np.stack(cols, axis=1)


class TestStartPairs:
    @pytest.mark.parametrize(
        "model",
        [
            toeplitz(3),
            tree_model(Tree(5, [{1, 2}, {3, 4}, {3, 4, 5}])),
            generic_model(4, 3, seed=7),
        ],
    )
    @pytest.mark.parametrize("dual", [False, True])
    def test_residual_bound(self, model, dual):
        rng = np.random.default_rng(9)
        sys = score_system(model, dual=dual)
        x0, p0 = start_pair(sys, rng)
        bound = 1e-12 * (1.0 + np.linalg.norm(p0))
        assert np.linalg.norm(sys.residual(x0, p0)) <= bound
        assert sys.full_identity_residual(x0) <= 1e-10

    @pytest.mark.parametrize("dual", [False, True])
    def test_diagonal_start_pair(self, dual):
        rng = np.random.default_rng(10)
        sys = diagonal_system(diagonal_generic(5, 3, seed=4), dual=dual)
        x0, p0 = start_pair(sys, rng)
        assert np.linalg.norm(sys.residual(x0, p0)) <= 1e-12 * (1 + np.linalg.norm(p0))

    def test_dual_offset_lies_in_complement(self):
        rng = np.random.default_rng(11)
        model = toeplitz(3)
        sys = dual_system(model)
        x0, p0 = start_pair(sys, rng)
        k0 = sys.k_packed_of(x0)
        diff_re = SymMatrix(3, np.real(p0 - k0))
        diff_im = SymMatrix(3, np.imag(p0 - k0))
        for b in model.basis:
            assert abs(inner_product(diff_re, b)) < 1e-10
            assert abs(inner_product(diff_im, b)) < 1e-10

    def test_start_pairs_are_rng_driven(self):
        sys = mle_system(toeplitz(3))
        a = start_pair(sys, np.random.default_rng(1))
        b = start_pair(sys, np.random.default_rng(1))
        c = start_pair(sys, np.random.default_rng(2))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        assert not np.array_equal(a[1], c[1])
