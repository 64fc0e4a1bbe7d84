"""Square polynomial systems whose solutions are the likelihood critical points.

For a model L with basis B_1..B_m the unknowns are x = (theta, k): the
coordinates of Sigma = sum theta_a B_a and the packed entries of K.  The
equations are

  block (a): the upper triangle of K @ Sigma(theta) - I        (dim(L ambient))
  block (b): <K S K - K, B_a> = 0 for every a                  (m equations)

with the sample covariance S (packed) as parameter vector.  The dual system
replaces block (b) by the linear equations <K - W, B_a> = 0 with W = S^{-1} as
the parameter.  Both residuals are affine in the parameter, which the
homotopies rely on.

Imposing only the upper triangle of K Sigma - I keeps the system square, but
creates spurious solutions where K Sigma differs from I below the diagonal;
callers must re-check the full matrix identity at every endpoint (see
`full_identity_residual`).

All-diagonal models get a reduced system in the n diagonal unknowns of K,
with the diagonal of S (or of W) as the parameter.
"""
from __future__ import annotations

import numpy as np

from .errors import TrackingFailure
from .symspace import (
    LinearModel,
    orth_complement,
    pack,
    pack_weights,
    triu_pairs,
    unpack,
    unpack_batch,
)


class ScoreSystem:
    """Score equations of a linear covariance model, primal or dual."""

    def __init__(self, model: LinearModel, dual: bool):
        self.model = model
        self.dual = dual
        n = model.n
        self.n = n
        self.m = model.m
        self.N = model.dim
        self.n_unknowns = self.m + self.N
        self.n_params = self.N
        iu, ju = triu_pairs(n)
        self._iu, self._ju = iu, ju
        self._wfac = pack_weights(n)
        self._B = model.basis_stack
        self._Bflat = np.ascontiguousarray(self._B.reshape(self.m, n * n))
        # <K, B_a> = (basis_packed * weights) @ k
        self._BW = model.basis_packed * self._wfac
        # index machinery for d(K Sigma)/dk: equation e = (i, j), unknown
        # t = (u, v) with u <= v contributes [i==u] Sigma[v, j] and, off the
        # diagonal, [i==v] Sigma[u, j]
        self._mask_a = iu[:, None] == iu[None, :]
        self._mask_b = (iu[:, None] == ju[None, :]) & (iu != ju)[None, :]
        self._ix_jj = np.ix_(ju, ju)
        self._ix_ij = np.ix_(iu, ju)
        # batched variants of the same gathers: [e, t] -> Sigma[., row, col]
        self._bjj = (np.broadcast_to(ju, (self.N, self.N)), ju[:, None])
        self._bij = (np.broadcast_to(iu, (self.N, self.N)), ju[:, None])
        self._eye = np.eye(n)

    # -- evaluation ----------------------------------------------------------

    def _fields(self, x):
        theta, kv = x[: self.m], x[self.m :]
        K = unpack(kv, self.n)
        Sigma = (theta @ self._Bflat).reshape(self.n, self.n)
        return theta, kv, K, Sigma

    def residual(self, x, p):
        _, kv, K, Sigma = self._fields(x)
        ra = (K @ Sigma - self._eye)[self._iu, self._ju]
        if self.dual:
            rb = self._BW @ (kv - p)
        else:
            S = unpack(p, self.n)
            M = K @ S @ K - K
            rb = self._Bflat @ M.ravel()
        return np.concatenate([ra, rb])

    def residual_and_jac(self, x, p):
        """Residual and Jacobian d/dx in one pass; the hot path for Newton."""
        _, kv, K, Sigma = self._fields(x)
        ra = (K @ Sigma - self._eye)[self._iu, self._ju]
        KB = np.matmul(K, self._B)
        D1 = KB[:, self._iu, self._ju].T
        D2 = self._mask_a * Sigma[self._ix_jj].T + self._mask_b * Sigma[self._ix_ij].T
        J = np.zeros((self.n_unknowns, self.n_unknowns), dtype=np.result_type(x, p))
        J[: self.N, : self.m] = D1
        J[: self.N, self.m :] = D2
        if self.dual:
            rb = self._BW @ (kv - p)
            J[self.N :, self.m :] = self._BW
        else:
            S = unpack(p, self.n)
            SK = S @ K
            M = K @ SK - K
            rb = self._Bflat @ M.ravel()
            T = np.matmul(SK, self._B)
            C = T + T.transpose(0, 2, 1) - self._B
            J[self.N :, self.m :] = self._wfac * C[:, self._iu, self._ju]
        return np.concatenate([ra, rb]), J

    def jac_x(self, x, p):
        return self.residual_and_jac(x, p)[1]

    def jac_p(self, x, p):
        J = np.zeros((self.n_unknowns, self.n_params), dtype=np.result_type(x, p))
        if self.dual:
            J[self.N :] = -self._BW
        else:
            _, _, K, _ = self._fields(x)
            KBK = np.matmul(np.matmul(K, self._B), K)
            J[self.N :] = self._wfac * KBK[:, self._iu, self._ju]
        return J

    # -- batched evaluation --------------------------------------------------
    #
    # Same formulas vectorized over a leading batch axis; the path trackers
    # lean on these to advance many solutions through one parameter move
    # without per-path interpreter overhead.

    def _fields_batch(self, X):
        theta, KV = X[:, : self.m], X[:, self.m :]
        K = unpack_batch(KV, self.n)
        Sigma = (theta @ self._Bflat).reshape(-1, self.n, self.n)
        return theta, KV, K, Sigma

    def residual_batch(self, X, P):
        _, KV, K, Sigma = self._fields_batch(X)
        ra = (K @ Sigma - self._eye)[:, self._iu, self._ju]
        if self.dual:
            rb = (KV - P) @ self._BW.T
        else:
            S = unpack_batch(P, self.n)
            M = K @ S @ K - K
            rb = M.reshape(len(X), -1) @ self._Bflat.T
        return np.concatenate([ra, rb], axis=1)

    def residual_and_jac_batch(self, X, P):
        B_ = len(X)
        _, KV, K, Sigma = self._fields_batch(X)
        ra = (K @ Sigma - self._eye)[:, self._iu, self._ju]
        KB = np.matmul(K[:, None], self._B[None])
        D1 = KB[:, :, self._iu, self._ju].transpose(0, 2, 1)
        D2 = (
            self._mask_a * Sigma[:, self._bjj[0], self._bjj[1]]
            + self._mask_b * Sigma[:, self._bij[0], self._bij[1]]
        )
        J = np.zeros((B_, self.n_unknowns, self.n_unknowns), dtype=complex)
        J[:, : self.N, : self.m] = D1
        J[:, : self.N, self.m :] = D2
        if self.dual:
            rb = (KV - P) @ self._BW.T
            J[:, self.N :, self.m :] = self._BW
        else:
            S = unpack_batch(P, self.n)
            SK = S @ K
            M = K @ SK - K
            rb = M.reshape(B_, -1) @ self._Bflat.T
            T = np.matmul(SK[:, None], self._B[None])
            C = T + T.transpose(0, 1, 3, 2) - self._B
            J[:, self.N :, self.m :] = self._wfac * C[:, :, self._iu, self._ju]
        return np.concatenate([ra, rb], axis=1), J

    def jac_p_batch(self, X, P):
        B_ = len(X)
        J = np.zeros((B_, self.n_unknowns, self.n_params), dtype=complex)
        if self.dual:
            J[:, self.N :] = -self._BW
        else:
            _, _, K, _ = self._fields_batch(X)
            KBK = np.matmul(np.matmul(K[:, None], self._B[None]), K[:, None])
            J[:, self.N :] = self._wfac * KBK[:, :, self._iu, self._ju]
        return J

    def full_identity_residual_batch(self, X):
        _, _, K, Sigma = self._fields_batch(X)
        return np.abs(K @ Sigma - self._eye).max(axis=(1, 2))

    # -- diagnostics ---------------------------------------------------------

    def full_identity_residual(self, x) -> float:
        """max |K Sigma(theta) - I| over all n^2 entries.

        Guards against the spurious solutions introduced by imposing only the
        upper triangle of the identity.
        """
        _, _, K, Sigma = self._fields(x)
        return float(np.abs(K @ Sigma - self._eye).max())

    def theta_of(self, x):
        return x[: self.m]

    def k_packed_of(self, x):
        return x[self.m :]

    def data_to_params(self, s_full):
        """Packed parameter vector for a full data matrix S."""
        if self.dual:
            return pack(np.linalg.inv(s_full))
        return pack(s_full)


class DiagonalScoreSystem:
    """Reduced score equations for models of diagonal matrices.

    Unknowns (theta, k_diag); equations sigma_i(theta) * k_i - 1 = 0 together
    with the projections of (s_i k_i^2 - k_i), or (k_i - w_i) in the dual,
    onto the basis diagonals.  Parameter: the diagonal of S (or of W).
    """

    def __init__(self, model: LinearModel, dual: bool):
        if not model.is_diagonal:
            raise TrackingFailure("diagonal system requested for non-diagonal model")
        self.model = model
        self.dual = dual
        self.n = model.n
        self.m = model.m
        self.n_unknowns = self.m + self.n
        self.n_params = self.n
        self._D = np.stack([np.diag(b.full()) for b in model.basis])

    def _split(self, x):
        return x[: self.m], x[self.m :]

    def residual(self, x, p):
        theta, k = self._split(x)
        sig = theta @ self._D
        ra = sig * k - 1.0
        if self.dual:
            rb = self._D @ (k - p)
        else:
            rb = self._D @ (p * k * k - k)
        return np.concatenate([ra, rb])

    def residual_and_jac(self, x, p):
        theta, k = self._split(x)
        sig = theta @ self._D
        ra = sig * k - 1.0
        dtype = np.result_type(x, p)
        J = np.zeros((self.n_unknowns, self.n_unknowns), dtype=dtype)
        J[: self.n, : self.m] = (self._D * k).T
        J[: self.n, self.m :][np.diag_indices(self.n)] = sig
        if self.dual:
            rb = self._D @ (k - p)
            J[self.n :, self.m :] = self._D
        else:
            rb = self._D @ (p * k * k - k)
            J[self.n :, self.m :] = self._D * (2.0 * p * k - 1.0)
        return np.concatenate([ra, rb]), J

    def jac_x(self, x, p):
        return self.residual_and_jac(x, p)[1]

    def jac_p(self, x, p):
        _, k = self._split(x)
        J = np.zeros((self.n_unknowns, self.n_params), dtype=np.result_type(x, p))
        if self.dual:
            J[self.n :] = -self._D
        else:
            J[self.n :] = self._D * (k * k)
        return J

    def residual_batch(self, X, P):
        theta, K = X[:, : self.m], X[:, self.m :]
        ra = theta @ self._D * K - 1.0
        inner = (K - P) if self.dual else (P * K * K - K)
        return np.concatenate([ra, inner @ self._D.T], axis=1)

    def residual_and_jac_batch(self, X, P):
        B_ = len(X)
        theta, K = X[:, : self.m], X[:, self.m :]
        sig = theta @ self._D
        ra = sig * K - 1.0
        J = np.zeros((B_, self.n_unknowns, self.n_unknowns), dtype=complex)
        J[:, : self.n, : self.m] = np.broadcast_to(
            self._D.T, (B_, self.n, self.m)
        ) * K[:, :, None]
        J[:, : self.n, self.m :][:, np.arange(self.n), np.arange(self.n)] = sig
        if self.dual:
            inner = K - P
            J[:, self.n :, self.m :] = self._D
        else:
            inner = P * K * K - K
            J[:, self.n :, self.m :] = self._D * (2.0 * P * K - 1.0)[:, None, :]
        return np.concatenate([ra, inner @ self._D.T], axis=1), J

    def jac_p_batch(self, X, P):
        B_ = len(X)
        K = X[:, self.m :]
        J = np.zeros((B_, self.n_unknowns, self.n_params), dtype=complex)
        if self.dual:
            J[:, self.n :] = -self._D
        else:
            J[:, self.n :] = self._D * (K * K)[:, None, :]
        return J

    def full_identity_residual_batch(self, X):
        theta, K = X[:, : self.m], X[:, self.m :]
        return np.abs(theta @ self._D * K - 1.0).max(axis=1)

    def full_identity_residual(self, x) -> float:
        theta, k = self._split(x)
        return float(np.abs((theta @ self._D) * k - 1.0).max())

    def theta_of(self, x):
        return x[: self.m]

    def k_packed_of(self, x):
        # expand the diagonal to the packed convention of the full systems
        K = np.zeros((self.n, self.n), dtype=x.dtype)
        K[np.diag_indices(self.n)] = x[self.m :]
        return pack(K)

    def data_to_params(self, s_full):
        if self.dual:
            return np.diag(np.linalg.inv(s_full)).copy()
        return np.diag(s_full).copy()


def mle_system(model: LinearModel) -> ScoreSystem:
    return ScoreSystem(model, dual=False)


def dual_system(model: LinearModel) -> ScoreSystem:
    return ScoreSystem(model, dual=True)


def diagonal_system(model: LinearModel, dual: bool = False) -> DiagonalScoreSystem:
    return DiagonalScoreSystem(model, dual)


def score_system(model: LinearModel, dual: bool = False):
    """Dispatch to the reduced system for all-diagonal models."""
    if model.is_diagonal:
        return DiagonalScoreSystem(model, dual)
    return ScoreSystem(model, dual)


# ---------------------------------------------------------------------------
# Start pairs


def _complex_normal(rng, size):
    return rng.standard_normal(size) + 1j * rng.standard_normal(size)


def start_pair(system, rng, max_tries: int = 25):
    """Exact seed (x0, p0) for monodromy, built by construction.

    Pick theta0 as a small complex perturbation of the PD witness coordinates,
    set K0 = Sigma(theta0)^{-1}, and then choose the parameter so that the
    score block vanishes identically: for the primal system solve the linear
    conditions for S0 (minimum-norm solution plus a random complex null-space
    element), for the dual take W0 = K0 plus a random complex element of the
    orthogonal complement of the model.
    """
    model = system.model
    coords = model.witness_coords()
    scale = max(1.0, float(np.abs(coords).max()))
    for _ in range(max_tries):
        theta0 = coords + 0.25 * scale * _complex_normal(rng, model.m)
        if isinstance(system, DiagonalScoreSystem):
            x0, p0 = _diagonal_seed(system, theta0, rng)
        else:
            x0, p0 = _full_seed(system, theta0, rng)
        if x0 is None:
            continue
        # one Newton touch-up to remove inversion roundoff
        for _ in range(3):
            r, J = system.residual_and_jac(x0, p0)
            bound = 1e-12 * (1.0 + np.linalg.norm(p0))
            if np.linalg.norm(r) <= bound:
                return x0, p0
            try:
                x0 = x0 - np.linalg.solve(J, r)
            except np.linalg.LinAlgError:
                break
        r = system.residual(x0, p0)
        if np.linalg.norm(r) <= 1e-12 * (1.0 + np.linalg.norm(p0)):
            return x0, p0
    raise TrackingFailure("could not construct a start pair with a clean residual")


def _full_seed(system, theta0, rng):
    model = system.model
    Sigma0 = np.tensordot(theta0, model.basis_stack, axes=1)
    if np.linalg.cond(Sigma0) > 1e8:
        return None, None
    K0 = np.linalg.inv(Sigma0)
    k0 = pack(K0)
    x0 = np.concatenate([theta0, k0])
    if system.dual:
        comp = orth_complement(model)
        w0 = k0.astype(complex)
        if comp:
            coeffs = _complex_normal(rng, len(comp))
            w0 = w0 + coeffs @ np.stack([c.packed for c in comp])
        return x0, w0
    # primal: <K0 S K0, B_a> = <K0, B_a> is linear in the packed S
    A = system.jac_p(x0, np.zeros(system.n_params, dtype=complex))[system.N :]
    b = system._BW @ k0
    s_min, *_ = np.linalg.lstsq(A, b.astype(complex), rcond=None)
    _, svals, vt = np.linalg.svd(A)
    rank = int(np.sum(svals > 1e-10 * svals[0]))
    null = vt[rank:].conj()
    s0 = s_min
    if len(null):
        s0 = s0 + _complex_normal(rng, len(null)) @ null
    return x0, s0


def _diagonal_seed(system, theta0, rng):
    D = system._D
    sig0 = theta0 @ D
    if np.abs(sig0).min() < 1e-8:
        return None, None
    k0 = 1.0 / sig0
    x0 = np.concatenate([theta0, k0])
    if system.dual:
        _, svals, vt = np.linalg.svd(D)
        rank = int(np.sum(svals > 1e-10 * svals[0]))
        null = vt[rank:]
        w0 = k0.astype(complex)
        if len(null):
            w0 = w0 + _complex_normal(rng, len(null)) @ null
        return x0, w0
    A = D * (k0 * k0)
    b = D @ k0
    s_min, *_ = np.linalg.lstsq(A.astype(complex), b.astype(complex), rcond=None)
    _, svals, vt = np.linalg.svd(A)
    rank = int(np.sum(svals > 1e-10 * svals[0]))
    null = vt[rank:].conj()
    s0 = s_min
    if len(null):
        s0 = s0 + _complex_normal(rng, len(null)) @ null
    return x0, s0
