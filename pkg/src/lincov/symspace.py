"""Symmetric matrices in packed form and linear subspaces of them.

Packing convention: the upper triangle is stored row-major, so for n = 3 the
packed order is (0,0), (0,1), (0,2), (1,1), (1,2), (2,2).  Under this
convention the trace inner product <A, B> = tr(A @ B) of two symmetric
matrices becomes a weighted dot product of packed vectors, with weight 1 on
diagonal positions and 2 off the diagonal.

A `LinearModel` is a linear subspace L of symmetric n x n matrices given by a
basis, together with one positive definite element of L.  The subspace plays
the role of the covariance model: the covariance matrices are the positive
definite points of L.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import IllConditionedError, InputError, NotPositiveDefiniteError

GRAM_CONDITION_LIMIT = 1e12
# singular values below this fraction of the largest are treated as zero
RANK_CUTOFF = 1e-10


@lru_cache(maxsize=None)
def triu_pairs(n: int):
    """Row/column index arrays of the packed (row-major upper triangle) order."""
    iu, ju = np.triu_indices(n)
    iu.setflags(write=False)
    ju.setflags(write=False)
    return iu, ju


@lru_cache(maxsize=None)
def pack_weights(n: int) -> np.ndarray:
    """Weight vector turning packed dot products into trace inner products."""
    iu, ju = triu_pairs(n)
    w = np.where(iu == ju, 1.0, 2.0)
    w.setflags(write=False)
    return w


def packed_length(n: int) -> int:
    return n * (n + 1) // 2


def pack(full: np.ndarray) -> np.ndarray:
    """Extract the packed vector from a full (n, n) symmetric array."""
    n = full.shape[0]
    iu, ju = triu_pairs(n)
    return full[iu, ju]


def unpack(packed: np.ndarray, n: int) -> np.ndarray:
    """Rebuild the full symmetric (n, n) array from a packed vector."""
    iu, ju = triu_pairs(n)
    full = np.zeros((n, n), dtype=packed.dtype)
    full[iu, ju] = packed
    full[ju, iu] = packed
    return full


def unpack_batch(packed: np.ndarray, n: int) -> np.ndarray:
    """Rebuild a (batch, n, n) symmetric stack from (batch, N) packed rows."""
    iu, ju = triu_pairs(n)
    full = np.zeros((len(packed), n, n), dtype=packed.dtype)
    full[:, iu, ju] = packed
    full[:, ju, iu] = packed
    return full


class SymMatrix:
    """Immutable symmetric matrix stored in packed upper-triangle form."""

    __slots__ = ("n", "packed")

    def __init__(self, n: int, packed: np.ndarray):
        packed = np.asarray(packed)
        if packed.shape != (packed_length(n),):
            raise InputError(
                f"packed length {packed.shape} does not match n={n} "
                f"(expected {packed_length(n)})"
            )
        packed = packed.copy()
        packed.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "packed", packed)

    def __setattr__(self, name, value):
        raise AttributeError("SymMatrix is immutable")

    @classmethod
    def from_full(cls, full, tol: float = 1e-10) -> "SymMatrix":
        full = np.asarray(full)
        if full.ndim != 2 or full.shape[0] != full.shape[1]:
            raise InputError(f"expected a square matrix, got shape {full.shape}")
        scale = max(1.0, float(np.abs(full).max()) if full.size else 0.0)
        if np.abs(full - full.T).max(initial=0.0) > tol * scale:
            raise InputError("matrix is not symmetric")
        return cls(full.shape[0], pack(full))

    @classmethod
    def identity(cls, n: int) -> "SymMatrix":
        return cls(n, pack(np.eye(n)))

    @classmethod
    def zero(cls, n: int) -> "SymMatrix":
        return cls(n, np.zeros(packed_length(n)))

    def full(self) -> np.ndarray:
        return unpack(self.packed, self.n)

    def inner(self, other: "SymMatrix") -> float:
        """Trace inner product tr(self @ other)."""
        return inner_product(self, other)

    def norm(self) -> float:
        # Frobenius norm, via the weighted packed form
        w = pack_weights(self.n)
        return float(np.sqrt(np.real(np.sum(w * self.packed * np.conj(self.packed)))))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.full())

    def is_pd(self) -> bool:
        return bool(np.all(self.eigenvalues() > 0.0))

    def __add__(self, other):
        self._check_shape(other)
        return SymMatrix(self.n, self.packed + other.packed)

    def __sub__(self, other):
        self._check_shape(other)
        return SymMatrix(self.n, self.packed - other.packed)

    def __mul__(self, scalar):
        return SymMatrix(self.n, self.packed * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return SymMatrix(self.n, -self.packed)

    def _check_shape(self, other):
        if not isinstance(other, SymMatrix) or other.n != self.n:
            raise InputError("size mismatch between symmetric matrices")

    def __eq__(self, other):
        return (
            isinstance(other, SymMatrix)
            and other.n == self.n
            and bool(np.array_equal(self.packed, other.packed))
        )

    def __hash__(self):
        return hash((self.n, self.packed.tobytes()))

    def __repr__(self):
        return f"SymMatrix(n={self.n}, packed={self.packed!r})"


def inner_product(a: SymMatrix, b: SymMatrix) -> float:
    """Trace inner product tr(a @ b) computed on packed vectors."""
    if a.n != b.n:
        raise InputError("size mismatch between symmetric matrices")
    w = pack_weights(a.n)
    val = np.sum(w * a.packed * b.packed)
    return complex(val) if np.iscomplexobj(val) else float(val)


@dataclass(frozen=True)
class LinearModel:
    """A linear subspace of symmetric n x n matrices with a PD point in it.

    basis entries must be linearly independent real symmetric matrices and
    pd_witness must be a positive definite element of their span.
    """

    n: int
    basis: tuple
    pd_witness: SymMatrix
    label: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "basis", tuple(self.basis))
        if not 1 <= self.m <= self.dim:
            raise InputError(
                f"basis size {self.m} out of range for n={self.n} "
                f"(must be between 1 and {self.dim})"
            )
        for b in self.basis:
            if not isinstance(b, SymMatrix) or b.n != self.n:
                raise InputError("basis entries must be SymMatrix of matching size")
            if np.iscomplexobj(b.packed):
                raise InputError("basis entries must be real")
        if self.gram_cond > GRAM_CONDITION_LIMIT:
            raise IllConditionedError(
                f"basis Gram matrix condition {self.gram_cond:.3e} exceeds "
                f"{GRAM_CONDITION_LIMIT:.0e}; basis is numerically dependent"
            )
        # pd_witness must lie in the span ...
        coords = project_coords(self.pd_witness, self)
        recon = self.combination(coords)
        err = (recon - self.pd_witness).norm()
        if err > 1e-8 * (1.0 + self.pd_witness.norm()):
            raise InputError("pd_witness is not in the span of the basis")
        # ... and be strictly positive definite
        if not self.pd_witness.is_pd():
            raise NotPositiveDefiniteError("pd_witness is not positive definite")

    @property
    def m(self) -> int:
        return len(self.basis)

    @property
    def dim(self) -> int:
        """Dimension of the ambient space of symmetric matrices."""
        return packed_length(self.n)

    @property
    def codim(self) -> int:
        return self.dim - self.m

    # -- cached derived arrays used heavily by the score systems -------------

    def _cached(self, key, build):
        if key not in self._cache:
            value = build()
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            self._cache[key] = value
        return self._cache[key]

    @property
    def basis_stack(self) -> np.ndarray:
        """(m, n, n) array stacking the basis as full matrices."""
        return self._cached(
            "stack", lambda: np.stack([b.full() for b in self.basis])
        )

    @property
    def basis_packed(self) -> np.ndarray:
        """(m, dim) array of packed basis vectors."""
        return self._cached(
            "packed", lambda: np.stack([b.packed for b in self.basis])
        )

    @property
    def gram(self) -> np.ndarray:
        def build():
            w = pack_weights(self.n)
            bp = self.basis_packed
            return (bp * w) @ bp.T

        return self._cached("gram", build)

    @property
    def gram_cond(self) -> float:
        return self._cached("gram_cond", lambda: float(np.linalg.cond(self.gram)))

    @property
    def is_diagonal(self) -> bool:
        """True when every basis matrix is diagonal."""

        def build():
            iu, ju = triu_pairs(self.n)
            off = iu != ju
            return bool(np.all(self.basis_packed[:, off] == 0.0))

        return self._cached("is_diagonal", build)

    def combination(self, coords) -> SymMatrix:
        """The element of the subspace with the given basis coefficients."""
        coords = np.asarray(coords)
        if coords.shape != (self.m,):
            raise InputError(f"expected {self.m} coefficients, got {coords.shape}")
        return SymMatrix(self.n, coords @ self.basis_packed)

    def witness_coords(self) -> np.ndarray:
        """Basis coefficients of pd_witness."""
        return project_coords(self.pd_witness, self)


def combination(model: LinearModel, coords) -> SymMatrix:
    return model.combination(coords)


def project_coords(matrix: SymMatrix, model: LinearModel) -> np.ndarray:
    """Coefficients of the orthogonal projection of `matrix` onto the model.

    Solves the Gram system; when `matrix` lies in the subspace these are its
    exact coordinates up to roundoff.
    """
    if matrix.n != model.n:
        raise InputError("matrix size does not match model")
    if model.gram_cond > GRAM_CONDITION_LIMIT:
        raise IllConditionedError(
            f"basis Gram matrix condition {model.gram_cond:.3e} exceeds "
            f"{GRAM_CONDITION_LIMIT:.0e}"
        )
    w = pack_weights(model.n)
    rhs = model.basis_packed @ (w * matrix.packed)
    return np.linalg.solve(model.gram, rhs)


def orth_complement(model: LinearModel) -> list:
    """Trace-orthonormal basis of the orthogonal complement of the subspace.

    Orthogonality is with respect to <A, B> = tr(A B).  On packed vectors that
    inner product is <a, b>_w = sum(w * a * b), so with D = diag(w) the
    complement of the row space of the packed basis B is computed from the
    null space of B @ D^(1/2), mapped back through D^(-1/2).
    """
    w = pack_weights(model.n)
    sqw = np.sqrt(w)
    scaled = model.basis_packed * sqw
    _, svals, vt = np.linalg.svd(scaled, full_matrices=True)
    cutoff = RANK_CUTOFF * (svals[0] if len(svals) else 1.0)
    rank = int(np.sum(svals > cutoff))
    null_rows = vt[rank:]
    return [SymMatrix(model.n, row / sqw) for row in null_rows]
