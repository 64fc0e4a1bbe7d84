"""Constructors for the linear covariance model families used in practice.

All constructors return a `LinearModel`.  Leaves, rows and columns are
numbered 1..n in the public API; packed storage is 0-based internally.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import IllConditionedError, InputError, NotPositiveDefiniteError
from .symspace import LinearModel, SymMatrix, pack, packed_length, triu_pairs


def toeplitz(n: int, band: int | None = None) -> LinearModel:
    """Banded symmetric Toeplitz model: one free parameter per diagonal.

    band is the largest offset with a free diagonal; band = n - 1 (default)
    gives the full Toeplitz model, band = 0 the multiples of the identity.
    """
    if band is None:
        band = n - 1
    if not 0 <= band <= n - 1:
        raise InputError(f"band must be in [0, {n - 1}], got {band}")
    basis = []
    for k in range(band + 1):
        M = np.zeros((n, n))
        idx = np.arange(n - k)
        M[idx, idx + k] = 1.0
        M[idx + k, idx] = 1.0
        basis.append(SymMatrix.from_full(M))
    return LinearModel(n, basis, SymMatrix.identity(n), f"toeplitz({n}, band={band})")


# ---------------------------------------------------------------------------
# Brownian motion tree models


@dataclass(frozen=True)
class Tree:
    """Rooted tree on leaves 1..n encoded by its set of inner clades.

    The root clade {1..n} and the singleton leaf clades are implicit and must
    not be listed.  The inner clades must form a laminar family: any two are
    nested or disjoint.
    """

    n: int
    inner_clades: tuple

    def __init__(self, n: int, inner_clades=()):
        if n < 2:
            raise InputError("a tree needs at least two leaves")
        canon = []
        seen = set()
        for clade in inner_clades:
            c = frozenset(int(i) for i in clade)
            if not c <= set(range(1, n + 1)):
                raise InputError(f"clade {sorted(c)} has leaves outside 1..{n}")
            if not 2 <= len(c) <= n - 1:
                raise InputError(
                    f"inner clade {sorted(c)} must have between 2 and {n - 1} leaves"
                )
            if c in seen:
                raise InputError(f"duplicate clade {sorted(c)}")
            seen.add(c)
            canon.append(c)
        for a in canon:
            for b in canon:
                if not (a <= b or b <= a or not (a & b)):
                    raise InputError(
                        f"clades {sorted(a)} and {sorted(b)} overlap without nesting"
                    )
        canon.sort(key=lambda c: (len(c), sorted(c)))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "inner_clades", tuple(canon))

    @cached_property
    def all_clades(self) -> tuple:
        """Leaf clades, then inner clades by (size, lex), then the root."""
        leaves = [frozenset({i}) for i in range(1, self.n + 1)]
        root = frozenset(range(1, self.n + 1))
        return tuple(leaves) + self.inner_clades + (root,)

    @property
    def m(self) -> int:
        return len(self.all_clades)

    @property
    def is_binary(self) -> bool:
        # a rooted tree with n leaves and no unary vertices is binary exactly
        # when it has 2n - 1 clades in total
        return self.m == 2 * self.n - 1

    def lca(self, i: int, j: int) -> frozenset:
        """Smallest clade containing both leaves."""
        best = None
        for c in self.all_clades:
            if i in c and j in c and (best is None or len(c) < len(best)):
                best = c
        return best

    def parent(self, clade: frozenset):
        """Smallest clade strictly containing `clade`, or None for the root."""
        best = None
        for c in self.all_clades:
            if clade < c and (best is None or len(c) < len(best)):
                best = c
        return best

    @cached_property
    def children(self) -> dict:
        kids: dict = {c: [] for c in self.all_clades}
        for c in self.all_clades:
            p = self.parent(c)
            if p is not None:
                kids[p].append(c)
        for c in kids:
            kids[c].sort(key=lambda x: (len(x), sorted(x)))
        return kids

    def leaf_chain(self, i: int) -> list:
        """Clades containing leaf i, from the singleton up to the root."""
        chain = [c for c in self.all_clades if i in c]
        chain.sort(key=len)
        return chain


def tree_model(tree: Tree) -> LinearModel:
    """Brownian motion tree model: span of e_A e_A^T over all clades A.

    The basis order follows Tree.all_clades, so the first n coordinates are
    the leaf contributions and the last one belongs to the root.
    """
    n = tree.n
    basis = []
    for clade in tree.all_clades:
        v = np.zeros(n)
        v[[i - 1 for i in clade]] = 1.0
        basis.append(SymMatrix.from_full(np.outer(v, v)))
    witness = SymMatrix(n, np.sum([b.packed for b in basis], axis=0))
    label = f"tree({n}, {sorted(sorted(c) for c in tree.inner_clades)})"
    return LinearModel(n, basis, witness, label)


# ---------------------------------------------------------------------------
# Generic subspaces


def _wishart_like(rng, n):
    X = rng.standard_normal((n, n))
    return X @ X.T / n


def generic_model(n: int, m: int, seed: int) -> LinearModel:
    """Generic m-dimensional subspace spanned by random PD matrices.

    Deterministic in the seed; resamples in the unlikely event of a
    numerically dependent draw.
    """
    if not 1 <= m <= packed_length(n):
        raise InputError(f"m must be in [1, {packed_length(n)}], got {m}")
    rng = np.random.default_rng(seed)
    for _ in range(32):
        basis = [SymMatrix.from_full(_wishart_like(rng, n)) for _ in range(m)]
        try:
            return LinearModel(n, basis, basis[0], f"generic({n}, {m}, seed={seed})")
        except IllConditionedError:
            continue
    raise IllConditionedError("could not sample an independent generic basis")


def diagonal_generic(n: int, m: int, seed: int) -> LinearModel:
    """Generic m-dimensional subspace of diagonal matrices."""
    if not 1 <= m <= n:
        raise InputError(f"m must be in [1, {n}] for diagonal models, got {m}")
    rng = np.random.default_rng(seed)
    for _ in range(32):
        diags = rng.standard_normal((m, n))
        if np.linalg.matrix_rank(diags) < m:
            continue
        # search for a strictly positive combination to act as PD witness
        witness = None
        for _ in range(1000):
            coeff = rng.standard_normal(m)
            d = coeff @ diags
            if np.all(d > 0.1 * np.abs(d).max()):
                witness = d
                break
        if witness is None:
            continue
        basis = [SymMatrix.from_full(np.diag(row)) for row in diags]
        return LinearModel(
            n,
            basis,
            SymMatrix.from_full(np.diag(witness)),
            f"diagonal({n}, {m}, seed={seed})",
        )
    raise NotPositiveDefiniteError(
        "no strictly positive combination found for the diagonal basis"
    )


# ---------------------------------------------------------------------------
# Sparsity and coloring


def covariance_graph(n: int, zeros) -> LinearModel:
    """Model with prescribed zero entries: free coordinates everywhere else.

    zeros is an iterable of off-diagonal pairs (i, j), 1-based.
    """
    zset = set()
    for pos in zeros:
        i, j = int(pos[0]), int(pos[1])
        if i == j:
            raise InputError(f"cannot force diagonal entry ({i},{i}) to zero")
        if not (1 <= i <= n and 1 <= j <= n):
            raise InputError(f"position ({i},{j}) out of range for n={n}")
        zset.add((min(i, j), max(i, j)))
    iu, ju = triu_pairs(n)
    basis = []
    for i, j in zip(iu, ju):
        if (i + 1, j + 1) in zset:
            continue
        M = np.zeros((n, n))
        M[i, j] = M[j, i] = 1.0
        basis.append(SymMatrix.from_full(M))
    label = f"covariance_graph({n}, zeros={sorted(zset)})"
    return LinearModel(n, basis, SymMatrix.identity(n), label)


@dataclass(frozen=True)
class ColorPattern:
    """Partition of the positions {(i,j): i <= j} into color classes.

    Positions in `zero_class` are constrained to zero; every other class
    carries one free parameter shared by all its positions.
    """

    n: int
    classes: tuple
    zero_class: frozenset = frozenset()

    def __init__(self, n: int, classes, zero_class=()):
        def canon_pos(pos):
            i, j = int(pos[0]), int(pos[1])
            if not (1 <= i <= n and 1 <= j <= n):
                raise InputError(f"position ({i},{j}) out of range for n={n}")
            return (min(i, j), max(i, j))

        canon_classes = []
        covered: dict = {}
        for idx, cls in enumerate(classes):
            cset = frozenset(canon_pos(p) for p in cls)
            if not cset:
                raise InputError("empty color class")
            for p in cset:
                if p in covered:
                    raise InputError(f"position {p} appears in more than one class")
                covered[p] = idx
            canon_classes.append(cset)
        zset = frozenset(canon_pos(p) for p in zero_class)
        for p in zset:
            if p[0] == p[1]:
                raise InputError(
                    f"zero class contains diagonal position {p}; "
                    "the model could not contain a positive definite matrix"
                )
            if p in covered:
                raise InputError(f"position {p} is both colored and zero")
            covered[p] = -1
        iu, ju = triu_pairs(n)
        expected = {(int(i) + 1, int(j) + 1) for i, j in zip(iu, ju)}
        if set(covered) != expected:
            missing = sorted(expected - set(covered))
            raise InputError(f"positions not covered by any class: {missing}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "classes", tuple(canon_classes))
        object.__setattr__(self, "zero_class", zset)


def colored_model(pattern: ColorPattern) -> LinearModel:
    """Model with equal entries inside each color class of the pattern."""
    n = pattern.n
    basis = []
    has_diag = []
    for cls in pattern.classes:
        M = np.zeros((n, n))
        for i, j in cls:
            M[i - 1, j - 1] = M[j - 1, i - 1] = 1.0
        basis.append(SymMatrix.from_full(M))
        has_diag.append(any(i == j for i, j in cls))
    witness = _search_pd_witness(n, basis, has_diag)
    return LinearModel(n, basis, witness, f"colored({n}, {len(basis)} classes)")


def _search_pd_witness(n, basis, has_diag):
    # deterministic search: weigh diagonal-carrying classes at unit scale and
    # shrink the purely off-diagonal ones until the combination is PD
    rng = np.random.default_rng(0)
    stack = np.stack([b.packed for b in basis])
    has_diag = np.asarray(has_diag)
    if not has_diag.any():
        raise NotPositiveDefiniteError("no class contains a diagonal position")
    for attempt in range(400):
        t = 0.5 ** (attempt % 40)
        coeff = np.where(has_diag, 1.0, t)
        if attempt >= 40:
            jitter = rng.uniform(0.5, 1.5, size=len(basis))
            coeff = coeff * np.where(has_diag, jitter, rng.uniform(-1, 1, len(basis)))
        cand = SymMatrix(n, coeff @ stack)
        if cand.is_pd():
            return cand
    raise NotPositiveDefiniteError(
        "could not find a positive definite point for the color pattern"
    )
