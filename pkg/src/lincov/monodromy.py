"""Monodromy solving and completeness certification for score systems.

The solution count of a score system at generic data (the degree of the
likelihood equations) is found by numerical monodromy: start from one exact
solution produced by `start_pair`, move the parameters around random loops,
and collect the permuted endpoints until the set stops growing.

Completeness is certified with a trace test on a sliced parameter line.
Restrict the parameters to a generic line p0 + tau * v and view the solution
set as a curve in (x, tau) space.  A generic hyperplane a.x + a0 tau = c cuts
that curve in finitely many points, and as c moves in a pencil of parallel
hyperplanes the coordinate sum of a *complete* section depends affinely on c;
a proper subset breaks affinity.  The section is populated by monodromy in
the single parameter c, the affinity check is the stopping rule, and finally
every section point is tracked down to the tau = 0 fiber.  Section points
landing on solutions missing from the input witness expose an incomplete
witness, and are returned so the caller can merge them and resume.

Squaring up the matrix identity K Sigma = I to its upper triangle introduces
extra components; every endpoint accepted here is re-checked against the full
identity, so those never enter a witness set.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

from .errors import TrackingFailure, UnverifiedWitnessError
from .score_systems import score_system, start_pair
from .symspace import LinearModel
from .tracking import (
    TrackerOptions,
    newton_refine,
    newton_contract_batch,
    newton_refine_batch,
    track_batch,
    track_path,
)

WITNESS_RESIDUAL_TOL = 1e-10
IDENTITY_TOL = 1e-8
DEDUP_RTOL = 1e-8
TRACE_RTOL = 1e-6


def _cnormal(rng, size=None):
    return rng.standard_normal(size) + 1j * rng.standard_normal(size)


def _unit(rng):
    z = _cnormal(rng)
    return z / abs(z)


def _canonical_order(solutions):
    arr = np.asarray(solutions)
    if arr.size == 0:
        return arr
    keys = np.round(
        np.concatenate([arr.real, arr.imag], axis=1), 9
    )
    order = np.lexsort(keys.T[::-1])
    return arr[order]


@dataclass
class WitnessSet:
    """Solutions of a score system at one generic parameter point."""

    model: LinearModel
    dual: bool
    params: np.ndarray
    solutions: np.ndarray  # (count, n_unknowns), canonically ordered
    verified: bool = False
    trace_norm: float | None = None
    section_size: int | None = None
    loops: int = 0
    path_failures: int = 0

    @property
    def count(self) -> int:
        return len(self.solutions)

    def thetas(self):
        m = self.model.m
        return self.solutions[:, :m]


@dataclass
class TraceOutcome:
    passed: bool
    trace_norm: float
    recovered: list = field(default_factory=list)
    section_size: int | None = None


# ---------------------------------------------------------------------------
# Sliced systems


class SlicedLineSystem:
    """Score system on the line p0 + tau v, sliced by a.x + a0 tau = c.

    Unknowns (x, tau); single parameter c.  Solutions for generic c are the
    hyperplane section of the solution curve over the line.
    """

    def __init__(self, base, p0, v, a, a0):
        self.base = base
        self.p0 = np.asarray(p0, dtype=complex)
        self.v = np.asarray(v, dtype=complex)
        self.a = np.asarray(a, dtype=complex)
        self.a0 = complex(a0)
        self.n_unknowns = base.n_unknowns + 1
        self.n_params = 1

    def _parts(self, y):
        return y[:-1], y[-1]

    def residual(self, y, c):
        x, tau = self._parts(y)
        r = self.base.residual(x, self.p0 + tau * self.v)
        g = self.a @ x + self.a0 * tau - c[0]
        return np.concatenate([r, [g]])

    def residual_and_jac(self, y, c):
        x, tau = self._parts(y)
        p = self.p0 + tau * self.v
        r, Jx = self.base.residual_and_jac(x, p)
        n = self.base.n_unknowns
        J = np.zeros((n + 1, n + 1), dtype=complex)
        J[:n, :n] = Jx
        J[:n, n] = self.base.jac_p(x, p) @ self.v
        J[n, :n] = self.a
        J[n, n] = self.a0
        g = self.a @ x + self.a0 * tau - c[0]
        return np.concatenate([r, [g]]), J

    def jac_x(self, y, c):
        return self.residual_and_jac(y, c)[1]

    def jac_p(self, y, c):
        col = np.zeros((self.n_unknowns, 1), dtype=complex)
        col[-1, 0] = -1.0
        return col

    def full_identity_residual(self, y):
        return self.base.full_identity_residual(y[:-1])

    def slice_value(self, y):
        x, tau = self._parts(y)
        return self.a @ x + self.a0 * tau

    def residual_batch(self, Y, C):
        X, tau = Y[:, :-1], Y[:, -1]
        R = self.base.residual_batch(X, self.p0 + tau[:, None] * self.v)
        g = X @ self.a + self.a0 * tau - C[:, 0]
        return np.concatenate([R, g[:, None]], axis=1)

    def residual_and_jac_batch(self, Y, C):
        X, tau = Y[:, :-1], Y[:, -1]
        P = self.p0 + tau[:, None] * self.v
        R, Jx = self.base.residual_and_jac_batch(X, P)
        n = self.base.n_unknowns
        J = np.zeros((len(Y), n + 1, n + 1), dtype=complex)
        J[:, :n, :n] = Jx
        J[:, :n, n] = self.base.jac_p_batch(X, P) @ self.v
        J[:, n, :n] = self.a
        J[:, n, n] = self.a0
        g = X @ self.a + self.a0 * tau - C[:, 0]
        return np.concatenate([R, g[:, None]], axis=1), J

    def jac_p_batch(self, Y, C):
        col = np.zeros((len(Y), self.n_unknowns, 1), dtype=complex)
        col[:, -1, 0] = -1.0
        return col

    def full_identity_residual_batch(self, Y):
        return self.base.full_identity_residual_batch(Y[:, :-1])


class MovingSliceSystem:
    """Sweeps the slice of a `SlicedLineSystem` toward {tau = 0}.

    The slicing hyperplane a.x + a0 tau = c_star belongs to the pencil
    a.x + mu tau = c_star; as mu -> infinity the slice tends to {tau = 0},
    so a complete hyperplane section flows to the exact fiber over the base
    parameter point.  The sweep runs geometrically, mu = exp(lam) with the
    log as tracking parameter, which keeps branches that behave like powers
    of mu uniformly smooth: section points headed for the fiber approach it
    at rate 1/mu, and the rest blow up until the divergence cutoff.
    """

    def __init__(self, sliced: SlicedLineSystem, c_star: complex):
        self.sliced = sliced
        self.base = sliced.base
        self.c_star = complex(c_star)
        self.n_unknowns = sliced.n_unknowns
        self.n_params = 1

    def residual(self, y, lam):
        return self.residual_batch(y[None], np.asarray(lam)[None])[0]

    def residual_and_jac(self, y, lam):
        r, J = self.residual_and_jac_batch(y[None], np.asarray(lam)[None])
        return r[0], J[0]

    def jac_x(self, y, lam):
        return self.residual_and_jac(y, lam)[1]

    def jac_p(self, y, lam):
        return self.jac_p_batch(y[None], np.asarray(lam)[None])[0]

    def full_identity_residual(self, y):
        return self.base.full_identity_residual(y[:-1])

    def residual_batch(self, Y, L):
        X, tau = Y[:, :-1], Y[:, -1]
        mu = np.exp(L[:, 0])
        R = self.base.residual_batch(X, self.sliced.p0 + tau[:, None] * self.sliced.v)
        g = X @ self.sliced.a + mu * tau - self.c_star
        return np.concatenate([R, g[:, None]], axis=1)

    def residual_and_jac_batch(self, Y, L):
        X, tau = Y[:, :-1], Y[:, -1]
        mu = np.exp(L[:, 0])
        P = self.sliced.p0 + tau[:, None] * self.sliced.v
        R, Jx = self.base.residual_and_jac_batch(X, P)
        n = self.base.n_unknowns
        J = np.zeros((len(Y), n + 1, n + 1), dtype=complex)
        J[:, :n, :n] = Jx
        J[:, :n, n] = self.base.jac_p_batch(X, P) @ self.sliced.v
        J[:, n, :n] = self.sliced.a
        J[:, n, n] = mu
        g = X @ self.sliced.a + mu * tau - self.c_star
        return np.concatenate([R, g[:, None]], axis=1), J

    def jac_p_batch(self, Y, L):
        tau = Y[:, -1]
        mu = np.exp(L[:, 0])
        col = np.zeros((len(Y), self.n_unknowns, 1), dtype=complex)
        col[:, -1, 0] = mu * tau
        return col

    def full_identity_residual_batch(self, Y):
        return self.base.full_identity_residual_batch(Y[:, :-1])


# ---------------------------------------------------------------------------
# Core monodromy


def _merge_point(solutions, x, rtol=DEDUP_RTOL):
    """Append x if no existing solution matches it; return True when new."""
    for s in solutions:
        if np.linalg.norm(s - x) <= rtol * (1.0 + np.linalg.norm(s)):
            return False
    solutions.append(x)
    return True


def _accept_endpoint(system, x, p, identity_tol=IDENTITY_TOL, norm_scaled=False):
    """Refine an endpoint and vet it as a genuine solution at p."""
    scale = 1.0 + float(np.linalg.norm(p))
    x, rn, ok = newton_refine(system, x, p, tol=1e-12 * scale)
    rtol = WITNESS_RESIDUAL_TOL * scale
    if norm_scaled:
        xn = np.linalg.norm(x) / 10.0
        rtol *= min(1e8, max(1.0, xn**3))
        identity_tol *= min(1e6, max(1.0, xn**2))
    if not ok and rn > rtol:
        return None
    if system.full_identity_residual(x) > identity_tol:
        return None
    return x


def _accept_batch(system, X, p, identity_tol=IDENTITY_TOL, norm_scaled=False):
    """Vet a stack of endpoints at shared parameters p.

    Returns the refined stack and a keep-mask; rejects both sloppy residuals
    and points off the full matrix identity (spurious squared-up branches).
    With `norm_scaled` the identity and residual tolerances grow with the
    point norm: polynomial residuals cannot evaluate below their rounding
    floor, and far-out section points would otherwise be rejected wholesale,
    while genuinely spurious branches miss the identity by orders of
    magnitude.
    """
    scale = 1.0 + float(np.linalg.norm(p))
    if norm_scaled and len(X):
        # residual size cannot tell a genuine far-out point from an iterate
        # stalled near a branch point; Newton contraction can.
        X, rn, keep = newton_contract_batch(system, X, p)
        norms = np.linalg.norm(X, axis=1)
        tol = identity_tol * np.clip((norms / 10.0) ** 2, 1.0, 1e6)
    else:
        X, rn, ok = newton_refine_batch(system, X, p, tol=1e-12 * scale)
        keep = ok | (rn <= WITNESS_RESIDUAL_TOL * scale)
        tol = identity_tol
    resid = system.full_identity_residual_batch(X)
    ident = resid <= tol
    bad = keep & ~ident
    if bad.any():
        for i in np.flatnonzero(bad):
            log.debug(
                "identity check rejected endpoint: |x| %.2e resid %.2e",
                float(np.linalg.norm(X[i])), float(resid[i]),
            )
    keep &= ident
    return X, keep


def _chain_batch(system, X, stops, gammas, opts, rng=None, rescue=None,
                 pinches=None):
    """Track a stack through consecutive shared parameter stops.

    Segment arcs come from `gammas` (one shared arc per segment, as loop
    semantics require) or, when it is None, are drawn per row from `rng`.
    Rows that fail a segment are dropped, after one batched slow retry on
    the same arcs when `rescue` options are given -- a fragile row is often
    just under-stepped, and its arc must not change or the endpoint may
    land on a different branch.  Returns (endpoints, n_lost).

    For single-parameter systems, `pinches` collects the parameter values
    where rows died of step underflow: those sit next to branch points of
    the parameter cover, and loops drawn tightly around them are far better
    monodromy generators than anything sampled blind.
    """
    lost = 0
    if gammas is None:
        gammas = [None] * (len(stops) - 1)
    for (pa, pb), g in zip(zip(stops[:-1], stops[1:]), gammas):
        if not len(X):
            break
        if g is None and rng is not None:
            z = _cnormal(rng, len(X))
            g = z / np.abs(z)
        res = track_batch(system, X, pa, pb, options=opts, gamma=g)
        ok = res.success.copy()
        ends = res.endpoints
        failed = np.flatnonzero(~ok)
        if rescue is not None and len(failed):
            G = np.broadcast_to(
                np.asarray(1.0 if g is None else g, dtype=complex), (len(X),)
            )
            r2 = track_batch(
                system, X[failed], pa, pb, options=rescue, gamma=G[failed]
            )
            ends = ends.copy()
            ends[failed[r2.success]] = r2.endpoints[r2.success]
            ok[failed[r2.success]] = True
            failed = failed[~r2.success]
        if pinches is not None and len(failed) and np.size(pa) == 1:
            G = np.broadcast_to(
                np.asarray(1.0 if g is None else g, dtype=complex), (len(X),)
            )
            for i in failed:
                if res.status[i] != 3:
                    continue
                t = res.t_final[i]
                arc = G[i] * t / (1.0 + (G[i] - 1.0) * t)
                pinches.append(complex(np.ravel(pa)[0] + arc * (np.ravel(pb)[0] - np.ravel(pa)[0])))
        X = ends[ok]
        lost += int((~ok).sum())
    return X, lost


def _track_chain(system, x, stops, opts, rng=None):
    """Track through consecutive parameter stops; rng twists each segment."""
    cur = x
    for pa, pb in zip(stops[:-1], stops[1:]):
        res = track_path(system, cur, pa, pb, options=opts, rng=rng)
        if not res.success:
            return None
        cur = res.endpoint
    return cur


def monodromy_solve(
    system,
    rng,
    *,
    start=None,
    target_count: int | None = None,
    stall_loops: int = 5,
    max_loops: int = 60,
    options: TrackerOptions | None = None,
):
    """Collect solutions of `system` at a generic parameter point.

    Returns (params, solutions, loops_run, path_failures).  `start` resumes
    from an existing (params, solutions) pair; otherwise a fresh start pair
    is constructed.  Stops after `stall_loops` loops without growth, or when
    `target_count` solutions are found.
    """
    opts = options or TrackerOptions()
    if start is None:
        x0, p0 = start_pair(system, rng)
        solutions = [x0]
    else:
        p0, existing = start
        p0 = np.asarray(p0, dtype=complex)
        solutions = [np.asarray(s, dtype=complex) for s in existing]
        if not solutions:
            raise TrackingFailure("cannot resume monodromy from an empty witness")
    N = system.n_params
    scale = 1.0 + float(np.linalg.norm(p0))
    sigma = 0.5 * scale / np.sqrt(N)
    loops = 0
    failures = 0
    stall = 0
    while loops < max_loops and stall < stall_loops:
        if target_count is not None and len(solutions) >= target_count:
            break
        loops += 1
        p1 = p0 + sigma * _cnormal(rng, N)
        p2 = p0 + sigma * _cnormal(rng, N)
        stops = [p0, p1, p2, p0]
        # the complex arcs drawn from rng are what makes the loops wind
        # around the discriminant; straight triangles this size rarely do
        gammas = [_unit(rng) for _ in range(3)]
        wave = list(solutions)
        found_new = False
        while wave:
            X, lost = _chain_batch(system, np.stack(wave), stops, gammas, opts)
            failures += lost
            wave = []
            if not len(X):
                break
            X, keep = _accept_batch(system, X, p0)
            failures += int((~keep).sum())
            for x in X[keep]:
                if _merge_point(solutions, x):
                    found_new = True
                    wave.append(x)
        stall = 0 if found_new else stall + 1
    return p0, solutions, loops, failures


# ---------------------------------------------------------------------------
# Trace test


class _TraceAbort(Exception):
    pass


def _section_sums(sliced, section, c_star, delta, opts):
    """Sums of section coordinates at c_star - delta, c_star, c_star + delta.

    Displacements run on the straight segment, all rows in parallel; rows
    that fail are retried alone with slow steps before giving up.
    """
    mid = np.array([c_star])
    Y = np.stack(section)
    sums = [None, np.sum(Y, axis=0), None]
    slow = TrackerOptions(
        initial_step=0.02,
        max_step=0.05,
        corrector_tol=opts.corrector_tol,
        min_step=opts.min_step,
    )
    for slot, target in ((0, np.array([c_star - delta])), (2, np.array([c_star + delta]))):
        res = track_batch(sliced, Y, mid, target, options=opts)
        ends = res.endpoints.copy()
        for i in np.flatnonzero(~res.success):
            r2 = track_path(sliced, Y[i], mid, target, options=slow)
            if not r2.success:
                raise _TraceAbort("trace displacement path failed")
            ends[i] = r2.endpoint
        # polish before summing: a large section adds hundreds of endpoint
        # errors coherently enough to swamp a small affine defect
        ends, _, _ = newton_refine_batch(sliced, ends, target, max_iters=6)
        sums[slot] = ends.sum(axis=0)
    return sums[0], sums[1], sums[2]


def _trace_once(system, p0, solutions, rng, opts, stall_loops, max_section_loops):
    n_x = system.n_unknowns
    N = system.n_params
    p0 = np.asarray(p0, dtype=complex)
    v = _cnormal(rng, N)
    v *= (1.0 + np.linalg.norm(p0)) / np.linalg.norm(v)
    a = _cnormal(rng, n_x)
    a /= np.linalg.norm(a)
    a0 = _cnormal(rng)
    a0 /= abs(a0)
    sliced = SlicedLineSystem(system, p0, v, a, a0)

    slice_vals = np.array([a @ np.asarray(x) for x in solutions])
    center = slice_vals.mean()
    spread = 1.0 + float(np.abs(slice_vals - center).max())
    c_star = center + spread * (0.7 + 0.6 * rng.random()) * np.exp(
        2j * np.pi * rng.random()
    )
    delta = 0.75 * spread * np.exp(2j * np.pi * rng.random())

    careful = TrackerOptions(
        initial_step=0.02,
        max_step=0.05,
        corrector_tol=opts.corrector_tol,
        min_step=opts.min_step,
    )

    # seed the section by transporting witness points to the common slice
    # value; this is only a head start for the monodromy, so rows that fail,
    # land off the curve, or collide with another row are simply dropped
    # after one slow retry
    c0 = np.array([c_star])
    Y0 = np.concatenate(
        [np.asarray(solutions, dtype=complex), np.zeros((len(solutions), 1))], axis=1
    )
    res = track_batch(sliced, Y0, slice_vals[:, None], c0, options=opts, rng=rng)
    section: list[np.ndarray] = []
    E, keep = _accept_batch(sliced, res.endpoints[res.success], c0, norm_scaled=True)
    for y in E[keep]:
        _merge_point(section, y)
    for i in np.flatnonzero(~res.success):
        r2 = track_path(
            sliced, Y0[i], slice_vals[i : i + 1], c0, options=careful, rng=rng
        )
        if r2.success:
            y2 = _accept_endpoint(sliced, r2.endpoint, c0, norm_scaled=True)
            if y2 is not None:
                _merge_point(section, y2)

    # second seeding pass along the slicing pencil itself, run in reverse:
    # far up the pencil the hyperplane is nearly {tau = 0} and each witness
    # point pins down one section point by a mu-dominated Newton solve, so
    # tracking back down plants the whole fiber-connected share of the
    # section.  This is the inverse of the final certification move, which
    # makes that move's bookkeeping a round trip instead of a leap of faith.
    mover = MovingSliceSystem(sliced, c_star)
    s0 = np.array([np.log(a0 + 0j)])
    s1 = s0 + np.log(1e8)
    mu_max = np.exp(s1[0])
    tau_seed = (c_star - Y0[:, :-1] @ a) / mu_max
    Yp = np.concatenate([Y0[:, :-1], tau_seed[:, None]], axis=1)
    Yp, _, ok_seed = newton_refine_batch(mover, Yp, s1, tol=1e-12)
    idx_seed = np.flatnonzero(ok_seed)
    down_gamma = _unit(rng)
    res = track_batch(
        mover, Yp[idx_seed], s1, s0, options=opts, gamma=down_gamma
    )
    E, keep = _accept_batch(sliced, res.endpoints[res.success], c0, norm_scaled=True)
    for y in E[keep]:
        _merge_point(section, y)
    for i in idx_seed[~res.success]:
        r2 = track_path(mover, Yp[i], s1, s0, options=careful, gamma=down_gamma)
        if r2.success:
            y2 = _accept_endpoint(sliced, r2.endpoint, c0, norm_scaled=True)
            if y2 is not None:
                _merge_point(section, y2)

    if not section:
        raise _TraceAbort("no witness transport reached the slice")
    if len(section) < len(solutions):
        log.debug(
            "seeded section with %d of %d witness transports",
            len(section), len(solutions),
        )

    # population by fiber transplants: move the whole tau = 0 fiber out to
    # a random point on the parameter line, then port each moved point into
    # the section along the slice-value cover.  Every transplant samples the
    # curve somewhere genuinely new and costs a fiber's worth of paths, not
    # a section's worth, so it beats monodromy loops in c both on coverage
    # and on price; the loops are kept only as a stall fallback to stir with
    # a second kind of homotopy class.  The affinity of the section sums over
    # c_star +- delta is the stopping rule.
    W = Y0[:, :-1]

    def transplant(sigma, via=None):
        tau_star = np.exp(sigma * rng.standard_normal()) * np.exp(
            2j * np.pi * rng.random()
        )
        far = track_batch(system, W, p0, p0 + tau_star * v, options=opts, rng=rng)
        X_f = far.endpoints[far.success]
        fresh = []
        if not len(X_f):
            return fresh
        Y_f = np.concatenate([X_f, np.full((len(X_f), 1), tau_star)], axis=1)
        ell = X_f @ a + a0 * tau_star
        cs = ell[:, None]
        if via is not None:
            # detour through a waypoint in the c-plane: the composite port
            # lands in homotopy classes the direct port cannot reach
            res = track_batch(sliced, Y_f, cs, via, options=opts, rng=rng)
            Y_f = res.endpoints[res.success]
            if not len(Y_f):
                return fresh
            cs = via
        res = track_batch(sliced, Y_f, cs, c0, options=opts, rng=rng)
        E, keep = _accept_batch(
            sliced, res.endpoints[res.success], c0, norm_scaled=True
        )
        for y in E[keep]:
            if _merge_point(section, y):
                fresh.append(y)
        return fresh

    def rand_c():
        sigma = 0.9 + 0.15 * min(stall, 4)
        return np.array(
            [center + spread * np.exp(sigma * rng.standard_normal())
             * np.exp(2j * np.pi * rng.random())]
        )

    trace_rel = np.inf
    stall = 0
    complete = False
    loops = 0
    checked_at = -1  # section size at the last affinity check
    while loops < max_section_loops:
        loops += 1
        newly: list[np.ndarray] = []
        for k in range(8):
            via = rand_c() if (loops + k) % 4 == 0 else None
            newly.extend(transplant(sigma=1.4, via=via))
        if not newly and stall >= 4:
            # stir with one monodromy loop in c over a section subset; its
            # permutations come from a different cover than the transplants
            stops = [c0, rand_c(), rand_c(), c0]
            if len(section) > 96:
                picks = rng.choice(len(section), size=96, replace=False)
                wave = np.stack([section[i] for i in picks])
            else:
                wave = np.stack(section)
            Yl, _ = _chain_batch(
                sliced, wave, stops, None, opts, rng=rng, rescue=careful
            )
            if len(Yl):
                Yl, keep_l = _accept_batch(sliced, Yl, c0, norm_scaled=True)
                for y in Yl[keep_l]:
                    if _merge_point(section, y):
                        newly.append(y)
        grew = bool(newly)
        stall = 0 if grew else stall + 1
        if not grew and len(section) > checked_at:
            # a failed check can only start passing once the section grows,
            # so never repeat it on an unchanged section
            checked_at = len(section)
            s_lo, s_mid, s_hi = _section_sums(sliced, section, c_star, delta, opts)
            second = s_lo + s_hi - 2.0 * s_mid
            trace_rel = float(
                np.linalg.norm(second) / max(1.0, np.linalg.norm(s_hi - s_lo))
            )
            if trace_rel <= TRACE_RTOL:
                complete = True
                break
        log.debug(
            "section sweep %d: size %d grew %s stall %d trace %.2e max|y| %.1e",
            loops, len(section), grew, stall, trace_rel,
            max(float(np.abs(y).max()) for y in section),
        )
        if stall >= stall_loops:
            if np.isfinite(trace_rel) and trace_rel <= 100 * TRACE_RTOL:
                # a near-miss reading on a big section can be endpoint noise
                # rather than a missing sheet; re-measure slowly at two
                # spacings before giving up.  A genuine affine defect grows
                # with the spacing, noise does not.
                rels = []
                for mult in (1.0, 2.0):
                    s_lo, s_mid, s_hi = _section_sums(
                        sliced, section, c_star, mult * delta, careful
                    )
                    second = s_lo + s_hi - 2.0 * s_mid
                    rels.append(float(
                        np.linalg.norm(second)
                        / max(1.0, np.linalg.norm(s_hi - s_lo))
                    ))
                log.debug(
                    "stall re-measure: rel %.2e / %.2e at spacing x1 / x2 "
                    "(fast reading %.2e)", rels[0], rels[1], trace_rel,
                )
                if max(rels) <= TRACE_RTOL:
                    trace_rel = rels[0]
                    complete = True
            break

    # move the slicing hyperplane itself onto {tau = 0}.  Every finite limit
    # under this pencil solves the base system at p0, a complete section
    # reaches all such solutions, and distinct paths keep distinct endpoints
    # as long as every row follows the same pencil arc -- so a solution the
    # witness is missing cannot stay hidden.  Rows running off to infinity
    # are the section's share of the curve that never meets {tau = 0}.
    # right-half-plane arc only: a gamma near -1 sends the Mobius arc through
    # huge intermediate values, which the exponential sweep cannot absorb
    move_gamma = np.exp(1.2j * (2.0 * rng.random() - 1.0))
    tight = TrackerOptions(
        initial_step=0.02,
        max_step=0.05,
        corrector_tol=min(1e-12, opts.corrector_tol),
        min_step=opts.min_step,
        divergence_norm=opts.divergence_norm,
    )
    Y = np.stack(section)
    scale = 1.0 + float(np.abs(Y).max())
    res = track_batch(mover, Y, s0, s1, options=opts, gamma=move_gamma)
    ends = res.endpoints
    log.debug(
        "slice move: %d ok of %d, statuses %s",
        int(res.success.sum()), len(Y), res.status.tolist(),
    )
    # every row must be accounted for: a validated finite endpoint, or clear
    # evidence of escape to infinity.  Anything else gets one retry on the
    # *same* pencil arc (a different arc could land on the wrong endpoint and
    # hide a hole); rows that stay ambiguous void the certificate.
    fiber: list[np.ndarray] = []
    suspects: list[int] = []
    idx_ok = np.flatnonzero(res.success)
    if len(idx_ok):
        # a row can reach the end of the sweep at enormous norm while still
        # under the divergence bar; it is an escape, and refining it against
        # the base system would teleport it onto the fiber and fake a
        # collision, so sort those out by size first
        big = np.array([np.abs(ends[i]).max() > 1e3 * scale for i in idx_ok])
        idx_ok = idx_ok[~big]
    if len(idx_ok):
        X, keep = _accept_batch(system, ends[idx_ok][:, :-1], p0)
        for j, i in enumerate(idx_ok):
            log.debug(
                "move row %d: |end| %.2e refine moved %.2e keep %s",
                i, float(np.abs(ends[i]).max()),
                float(np.linalg.norm(X[j] - ends[i][:-1])), bool(keep[j]),
            )
            if keep[j]:
                if not _merge_point(fiber, X[j]) and complete:
                    raise _TraceAbort("slice move paths collided")
            else:
                suspects.append(i)
    for i in np.flatnonzero(~res.success):
        if res.status[i] == 2 or np.abs(ends[i]).max() > 1e3 * scale:
            continue  # clearly heading to infinity
        suspects.append(i)
    for i in suspects:
        r2 = track_path(mover, Y[i], s0, s1, options=tight, gamma=move_gamma)
        end2 = r2.endpoint if r2.success else None
        if end2 is not None and np.abs(end2).max() <= 1e3 * scale:
            y2 = _accept_endpoint(system, end2[:-1], p0)
            if y2 is not None:
                if not _merge_point(fiber, y2) and complete:
                    raise _TraceAbort("slice move paths collided")
                continue
        diverging = r2.status == "diverged" or (
            end2 is not None and np.abs(end2).max() > 1e3 * scale
        )
        if complete and not diverging:
            raise _TraceAbort("slice move left a path unaccounted for")
    known = [np.asarray(x, dtype=complex) for x in solutions]
    recovered: list[np.ndarray] = []
    for y in fiber:
        if not any(
            np.linalg.norm(y - s) <= DEDUP_RTOL * (1.0 + np.linalg.norm(s))
            for s in known
        ):
            _merge_point(recovered, y)
    if complete:
        # the moved slice must reproduce the witness it started from
        for s in known:
            if not any(
                np.linalg.norm(y - s) <= DEDUP_RTOL * (1.0 + np.linalg.norm(s))
                for y in fiber
            ):
                raise _TraceAbort("moved slice lost a witness point")
    if not complete and not recovered:
        raise _TraceAbort(f"section sums stayed non-affine (rel {trace_rel:.2e})")
    return TraceOutcome(
        passed=complete and not recovered,
        trace_norm=trace_rel,
        recovered=recovered,
        section_size=len(section),
    )


def trace_test(
    system,
    params,
    solutions,
    rng,
    *,
    attempts: int = 3,
    options: TrackerOptions | None = None,
    stall_loops: int = 25,
    max_section_loops: int = 150,
) -> TraceOutcome:
    """Certify that `solutions` is the complete solution set at `params`.

    A passing outcome means the sliced-line section closed up (affine trace)
    and every section point tracked back to a known solution.  A failing
    outcome carries any recovered missing solutions.
    """
    opts = options or TrackerOptions()
    for attempt in range(attempts):
        try:
            return _trace_once(
                system, params, solutions, rng, opts, stall_loops, max_section_loops
            )
        except _TraceAbort as exc:
            log.debug("trace attempt %d aborted: %s", attempt, exc)
            continue
    return TraceOutcome(passed=False, trace_norm=np.inf, recovered=[], section_size=None)


# ---------------------------------------------------------------------------
# Degrees


def witness_set(
    model: LinearModel,
    *,
    dual: bool = False,
    rng=None,
    seed=None,
    verify: bool = True,
    target_count: int | None = None,
    stall_loops: int = 5,
    max_loops: int = 60,
    options: TrackerOptions | None = None,
    require_verified: bool = True,
) -> WitnessSet:
    """Compute a witness set for the score equations of `model`.

    With `verify` the completeness of the witness is certified by the sliced
    trace test; solutions recovered during certification are merged and the
    monodromy resumed, up to four cycles.  `require_verified` turns a failed
    certification into `UnverifiedWitnessError` instead of an unverified
    result.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    system = score_system(model, dual=dual)
    p0, sols, loops, failures = monodromy_solve(
        system,
        rng,
        target_count=target_count,
        stall_loops=stall_loops,
        max_loops=max_loops,
        options=options,
    )
    outcome = TraceOutcome(passed=False, trace_norm=np.inf)
    if verify:
        for _ in range(4):
            outcome = trace_test(system, p0, sols, rng, options=options)
            if not outcome.recovered:
                break
            for x in outcome.recovered:
                _merge_point(sols, x)
            _, sols, extra_loops, extra_failures = monodromy_solve(
                system,
                rng,
                start=(p0, sols),
                target_count=target_count,
                stall_loops=stall_loops,
                max_loops=max_loops,
                options=options,
            )
            loops += extra_loops
            failures += extra_failures
        if require_verified and not outcome.passed:
            raise UnverifiedWitnessError(
                f"could not certify completeness of {len(sols)} solutions "
                f"({'dual' if dual else 'primal'} system, {model.label})"
            )
    return WitnessSet(
        model=model,
        dual=dual,
        params=p0,
        solutions=_canonical_order(sols),
        verified=outcome.passed,
        trace_norm=None if np.isinf(outcome.trace_norm) else outcome.trace_norm,
        section_size=outcome.section_size,
        loops=loops,
        path_failures=failures,
    )


def ml_degree(model: LinearModel, *, dual: bool = False, seed=None, rng=None, **kw) -> int:
    """Number of critical points of the likelihood at generic data."""
    return witness_set(model, dual=dual, seed=seed, rng=rng, **kw).count


def dual_ml_degree(model: LinearModel, *, seed=None, rng=None, **kw) -> int:
    return ml_degree(model, dual=True, seed=seed, rng=rng, **kw)
