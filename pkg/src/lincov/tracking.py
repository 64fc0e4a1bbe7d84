"""Predictor-corrector tracking for parameter homotopies.

The homotopy between parameter vectors p0 and p1 is H(x, t) = F(x; p(t)) with
p(t) = (1 - tau(t)) p0 + tau(t) p1.  By default tau(t) = t; when a `gamma` is
supplied the segment is traversed through the complex arc

    tau(t) = gamma * t / (1 + (gamma - 1) * t),

which keeps tau(0) = 0 and tau(1) = 1 but moves the intermediate parameters
off the real locus.  Use this whenever the target parameters are real data,
so the path does not cross the real discriminant.

The predictor is a fourth-order Runge-Kutta step on the Davidenko equation
dx/dt = -J_x^{-1} dH/dt, the corrector is Newton at fixed t.  Step control:
halve on corrector failure, grow by 1.5 after four consecutive accepted
steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

SINGULAR_CONDITION = 1e12


@dataclass(frozen=True)
class TrackerOptions:
    initial_step: float = 0.1
    min_step: float = 1e-10
    max_step: float = 0.3
    corrector_tol: float = 1e-10
    max_corrector_iters: int = 4
    divergence_norm: float = 1e8
    max_steps: int = 10000
    growth_successes: int = 2  # accepted steps in a row before h grows 1.5x
    final_allow_cap: float = 1e4  # ceiling on the norm-based residual allowance

    def __post_init__(self):
        if not 0.0 < self.min_step <= self.initial_step <= self.max_step <= 1.0:
            raise InputError(
                "need 0 < min_step <= initial_step <= max_step <= 1, got "
                f"{self.min_step}, {self.initial_step}, {self.max_step}"
            )
        if self.growth_successes < 1:
            raise InputError("growth_successes must be at least 1")


@dataclass
class TrackResult:
    status: str  # "success" | "diverged" | "step_underflow" | "max_steps"
    endpoint: np.ndarray | None
    residual: float
    steps_taken: int
    condition: float
    t_reached: float
    singular_suspect: bool = False
    path: list = field(default_factory=list, repr=False)

    @property
    def success(self) -> bool:
        return self.status == "success"


def newton_refine(system, x, p, max_iters: int = 10, tol: float | None = None):
    """Polish x against F(.; p).  Returns (x, residual_norm, converged)."""
    if tol is None:
        tol = 1e-12 * (1.0 + float(np.linalg.norm(p)))
    best_x, best_r = x, np.inf
    for _ in range(max_iters):
        r, J = system.residual_and_jac(x, p)
        rn = float(np.linalg.norm(r))
        if rn < best_r:
            best_x, best_r = x, rn
        if rn <= tol:
            return x, rn, True
        try:
            dx = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            return best_x, best_r, False
        x = x - dx
    rn = float(np.linalg.norm(system.residual(x, p)))
    if rn < best_r:
        best_x, best_r = x, rn
    return best_x, best_r, best_r <= tol


def track_path(
    system,
    x0,
    p_start,
    p_target,
    options: TrackerOptions | None = None,
    gamma: complex | None = None,
    rng: np.random.Generator | None = None,
    record: bool = False,
) -> TrackResult:
    """Track one solution of F(.; p_start) to a solution of F(.; p_target).

    Deterministic given its inputs: randomness enters only through `rng`,
    which (when given, and no explicit gamma is) draws the unit-modulus gamma
    of the complex arc.  With neither rng nor gamma the segment is traversed
    straight.
    """
    opts = options or TrackerOptions()
    p0 = np.asarray(p_start, dtype=complex)
    p1 = np.asarray(p_target, dtype=complex)
    x = np.asarray(x0, dtype=complex)
    dp_total = p1 - p0

    if not np.any(dp_total):
        # zero-length homotopy: nothing to do
        r = float(np.linalg.norm(system.residual(x, p1)))
        return TrackResult("success", x, r, 0, _condition(system, x, p1), 1.0)

    if gamma is None and rng is not None:
        z = rng.standard_normal() + 1j * rng.standard_normal()
        gamma = z / abs(z)

    if gamma is None:

        def tau(t):
            return t

        def dtau(t):
            return 1.0

    else:
        g = complex(gamma)

        def tau(t):
            return g * t / (1.0 + (g - 1.0) * t)

        def dtau(t):
            return g / (1.0 + (g - 1.0) * t) ** 2

    def params(t):
        return p0 + tau(t) * dp_total

    def velocity(x_at, t):
        # Davidenko right-hand side
        p = params(t)
        _, J = system.residual_and_jac(x_at, p)
        rhs = system.jac_p(x_at, p) @ (dtau(t) * dp_total)
        return -np.linalg.solve(J, rhs)

    t = 0.0
    h = opts.initial_step
    steps = 0
    consecutive = 0
    path = [(0.0, x.copy())] if record else []

    while 1.0 - t > 1e-14:
        if steps >= opts.max_steps:
            return TrackResult(
                "max_steps", None, np.inf, steps, np.inf, t, path=path
            )
        steps += 1
        h_eff = min(h, 1.0 - t)
        accepted = False
        try:
            k1 = velocity(x, t)
            k2 = velocity(x + 0.5 * h_eff * k1, t + 0.5 * h_eff)
            k3 = velocity(x + 0.5 * h_eff * k2, t + 0.5 * h_eff)
            k4 = velocity(x + h_eff * k3, t + h_eff)
            x_pred = x + (h_eff / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        except np.linalg.LinAlgError:
            x_pred = None
        if x_pred is not None and np.linalg.norm(x_pred) <= opts.divergence_norm:
            t_next = t + h_eff
            p_next = params(t_next)
            x_corr = x_pred
            ok = False
            try:
                for _ in range(opts.max_corrector_iters):
                    r, J = system.residual_and_jac(x_corr, p_next)
                    if np.linalg.norm(r) <= _corrector_tol(opts, x_corr):
                        ok = True
                        break
                    x_corr = x_corr - np.linalg.solve(J, r)
                if not ok:
                    ok = (
                        np.linalg.norm(system.residual(x_corr, p_next))
                        <= _corrector_tol(opts, x_corr)
                    )
            except np.linalg.LinAlgError:
                ok = False
            if ok and np.linalg.norm(x_corr) <= opts.divergence_norm:
                x = x_corr
                t = t_next
                accepted = True
                if record:
                    path.append((t, x.copy()))
        if accepted:
            consecutive += 1
            if consecutive >= opts.growth_successes:
                h = min(1.5 * h, opts.max_step)
                consecutive = 0
        else:
            if np.linalg.norm(x) > opts.divergence_norm or (
                x_pred is not None
                and np.linalg.norm(x_pred) > 10.0 * opts.divergence_norm
            ):
                return TrackResult(
                    "diverged", None, np.inf, steps, np.inf, t, path=path
                )
            consecutive = 0
            h *= 0.5
            if h < opts.min_step:
                cond = _condition(system, x, params(t))
                return TrackResult(
                    "step_underflow",
                    None,
                    np.inf,
                    steps,
                    cond,
                    t,
                    singular_suspect=(t > 0.99 and cond > SINGULAR_CONDITION),
                    path=path,
                )

    x, rn, _ = newton_refine(
        system, x, p1, max_iters=5, tol=opts.corrector_tol * 1e-2
    )
    cond = _condition(system, x, p1)
    return TrackResult("success", x, rn, steps, cond, 1.0, path=path)


def _corrector_tol(opts, X):
    """Corrector acceptance threshold, scaled to the iterate's norm.

    The residual of a cubic system cannot be evaluated below ~eps * |x|^3,
    so an absolute threshold strands paths that are on their way to
    infinity; the cubic scaling keeps acceptance unchanged at working norms
    and tracks the precision floor beyond them.  Divergent paths then run
    cleanly up to the divergence cutoff instead of stalling, and the final
    refinement decides whether a finished path actually converged.
    """
    norms = np.linalg.norm(X, axis=-1)
    return opts.corrector_tol * np.clip((norms / 10.0) ** 3, 1.0, 1e10)


def _condition(system, x, p) -> float:
    try:
        J = system.jac_x(x, p)
        return float(np.linalg.cond(J))
    except np.linalg.LinAlgError:
        return np.inf


# ---------------------------------------------------------------------------
# Batched tracking


@dataclass
class BatchTrackResult:
    """Outcome of tracking a stack of solutions through one parameter move."""

    success: np.ndarray  # (batch,) bool
    endpoints: np.ndarray  # (batch, n) complex; failed rows hold the last iterate
    residuals: np.ndarray  # (batch,) float, meaningful on successful rows
    steps: int
    # per-row codes: 1 success, 2 diverged, 3 step underflow, 4 step budget
    status: np.ndarray | None = None
    # per-row segment time reached; where failed rows stalled is where the
    # path ran into trouble, which callers can use to locate branch points
    t_final: np.ndarray | None = None


def _solve_rows(J, R):
    """Batched linear solve that survives singular rows.

    Returns (solutions, ok); rows whose Jacobian is exactly singular come
    back zero with ok False instead of poisoning the whole batch.
    """
    try:
        return np.linalg.solve(J, R[..., None])[..., 0], np.ones(len(J), bool)
    except np.linalg.LinAlgError:
        out = np.zeros_like(R)
        ok = np.ones(len(J), bool)
        for i in range(len(J)):
            try:
                out[i] = np.linalg.solve(J[i], R[i])
            except np.linalg.LinAlgError:
                ok[i] = False
        return out, ok


def newton_refine_batch(system, X, P, max_iters: int = 10, tol=None):
    """Batched counterpart of `newton_refine` at shared or per-row parameters.

    Returns (X, residual_norms, converged).
    """
    X = np.array(X, dtype=complex)
    B = len(X)
    P = np.asarray(P, dtype=complex)
    if P.ndim == 1:
        P = np.broadcast_to(P, (B, P.shape[0]))
    if tol is None:
        tol_rows = 1e-12 * (1.0 + np.linalg.norm(P, axis=1).real)
    else:
        tol_rows = np.full(B, float(tol))
    best_X = X.copy()
    best_r = np.full(B, np.inf)
    active = np.ones(B, bool)
    for _ in range(max_iters):
        idx = np.flatnonzero(active)
        if not len(idx):
            break
        r, J = system.residual_and_jac_batch(X[idx], P[idx])
        rn = np.linalg.norm(r, axis=1)
        better = rn < best_r[idx]
        best_X[idx[better]] = X[idx[better]]
        best_r[idx[better]] = rn[better]
        done = rn <= tol_rows[idx]
        active[idx[done]] = False
        live = idx[~done]
        if not len(live):
            break
        dx, ok = _solve_rows(J[~done], r[~done])
        X[live[ok]] -= dx[ok]
        active[live[~ok]] = False
    idx = np.flatnonzero(active)
    if len(idx):
        rn = np.linalg.norm(system.residual_batch(X[idx], P[idx]), axis=1)
        better = rn < best_r[idx]
        best_X[idx[better]] = X[idx[better]]
        best_r[idx[better]] = rn[better]
    return best_X, best_r, best_r <= tol_rows


def newton_contract_batch(system, X, P, iters: int = 7):
    """Refine a stack and certify Newton contraction row by row.

    Residual size alone cannot separate a genuine far-out point from an
    iterate stalled near a ramification point: both sit above any absolute
    tolerance.  Contraction can.  A regular point drives its Newton step to
    the rounding floor in a few iterations whatever its norm, while near a
    branch point the steps shrink by roughly half each time and stagnate.
    Returns (X, residual_norms, ok) with ok marking rows whose final step
    reached the floor or was still contracting sharply.
    """
    X = np.array(X, dtype=complex)
    B = len(X)
    P = np.asarray(P, dtype=complex)
    if P.ndim == 1:
        P = np.broadcast_to(P, (B, P.shape[0]))
    s_prev = np.full(B, np.inf)
    s_last = np.full(B, np.inf)
    active = np.ones(B, bool)
    for _ in range(iters):
        idx = np.flatnonzero(active)
        if not len(idx):
            break
        r, J = system.residual_and_jac_batch(X[idx], P[idx])
        dx, ok = _solve_rows(J, r)
        step = np.where(ok, np.linalg.norm(dx, axis=1), np.inf)
        s_prev[idx] = s_last[idx]
        s_last[idx] = step
        X[idx[ok]] -= dx[ok]
        active[idx[~ok]] = False
        floor = 1e-14 * (1.0 + np.linalg.norm(X[idx], axis=1))
        active[idx[step <= floor]] = False
    rn = (np.linalg.norm(system.residual_batch(X, P), axis=1)
          if B else np.zeros(0))
    xn = 1.0 + np.linalg.norm(X, axis=1) if B else np.zeros(0)
    ok = (s_last <= 1e-10 * xn) | (s_last <= 1e-2 * s_prev)
    return X, rn, ok


def track_batch(
    system,
    X0,
    p_start,
    p_target,
    options: TrackerOptions | None = None,
    gamma: complex | None = None,
    rng: np.random.Generator | None = None,
) -> BatchTrackResult:
    """Track a stack of solutions along one parameter segment in lockstep.

    `p_start` may be per-row (batch, N) while `p_target` is shared, or both
    shared.  `gamma` may be a shared scalar (every row follows the same arc,
    which monodromy loops require) or a (batch,) array giving each row its
    own arc (what independent transports want; with `rng` and no explicit
    gamma, per-row arcs are drawn).  Step sizes stay per-row adaptive.
    """
    opts = options or TrackerOptions()
    X = np.array(X0, dtype=complex)
    B, _ = X.shape
    P0 = np.asarray(p_start, dtype=complex)
    if P0.ndim == 1:
        P0 = np.broadcast_to(P0, (B, P0.shape[0])).copy()
    P1 = np.asarray(p_target, dtype=complex)
    if P1.ndim == 1:
        P1 = np.broadcast_to(P1, (B, P1.shape[0])).copy()
    DP = P1 - P0

    if gamma is None and rng is not None:
        z = rng.standard_normal(B) + 1j * rng.standard_normal(B)
        gamma = z / np.abs(z)
    if gamma is None:

        def tau(t, rows):
            return t

        def dtau(t, rows):
            return np.ones_like(t)

    else:
        G = np.broadcast_to(np.asarray(gamma, dtype=complex), (B,))

        def tau(t, rows):
            g = G[rows]
            return g * t / (1.0 + (g - 1.0) * t)

        def dtau(t, rows):
            g = G[rows]
            return g / (1.0 + (g - 1.0) * t) ** 2

    t = np.zeros(B)
    h = np.full(B, opts.initial_step)
    consecutive = np.zeros(B, dtype=int)
    # 0 live, 1 success, 2 diverged, 3 underflow, 4 max_steps
    status = np.zeros(B, dtype=np.int8)
    status[np.linalg.norm(DP, axis=1) == 0.0] = 1
    t[status == 1] = 1.0

    def velocities(Xs, ts, rows):
        p = P0[rows] + tau(ts, rows)[:, None] * DP[rows]
        _, J = system.residual_and_jac_batch(Xs, p)
        rhs = system.jac_p_batch(Xs, p) @ (dtau(ts, rows)[:, None] * DP[rows])[..., None]
        v, ok = _solve_rows(J, rhs[..., 0])
        return -v, ok

    steps = 0
    while steps < opts.max_steps:
        live = np.flatnonzero(status == 0)
        if not len(live):
            break
        steps += 1
        ts = t[live]
        hs = np.minimum(h[live], 1.0 - ts)

        k1, ok = velocities(X[live], ts, live)
        k2, ok2 = velocities(X[live] + 0.5 * hs[:, None] * k1, ts + 0.5 * hs, live)
        ok &= ok2
        k3, ok3 = velocities(X[live] + 0.5 * hs[:, None] * k2, ts + 0.5 * hs, live)
        ok &= ok3
        k4, ok4 = velocities(X[live] + hs[:, None] * k3, ts + hs, live)
        ok &= ok4
        X_pred = X[live] + (hs[:, None] / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        pred_norm = np.linalg.norm(X_pred, axis=1)
        ok &= pred_norm <= opts.divergence_norm

        t_next = ts + hs
        p_next = P0[live] + tau(t_next, live)[:, None] * DP[live]
        X_corr = np.where(ok[:, None], X_pred, X[live])
        conv = np.zeros(len(live), bool)
        for _ in range(opts.max_corrector_iters):
            todo = ok & ~conv
            if not todo.any():
                break
            r, J = system.residual_and_jac_batch(X_corr[todo], p_next[todo])
            rn = np.linalg.norm(r, axis=1)
            hit = rn <= _corrector_tol(opts, X_corr[todo])
            idx = np.flatnonzero(todo)
            conv[idx[hit]] = True
            move = idx[~hit]
            if len(move):
                dx, sok = _solve_rows(J[~hit], r[~hit])
                X_corr[move[sok]] -= dx[sok]
                ok[move[~sok]] = False
        still = ok & ~conv
        if still.any():
            r = system.residual_batch(X_corr[still], p_next[still])
            conv[still] = (
                np.linalg.norm(r, axis=1) <= _corrector_tol(opts, X_corr[still])
            )
        accepted = ok & conv & (np.linalg.norm(X_corr, axis=1) <= opts.divergence_norm)

        acc = live[accepted]
        X[acc] = X_corr[accepted]
        t[acc] = t_next[accepted]
        consecutive[acc] += 1
        grow = consecutive[acc] >= opts.growth_successes
        h[acc[grow]] = np.minimum(1.5 * h[acc[grow]], opts.max_step)
        consecutive[acc[grow]] = 0

        rej = live[~accepted]
        diverged = rej[
            (np.linalg.norm(X[rej], axis=1) > opts.divergence_norm)
            | (pred_norm[~accepted] > 10.0 * opts.divergence_norm)
        ]
        status[diverged] = 2
        consecutive[rej] = 0
        h[rej] *= 0.5
        status[rej[h[rej] < opts.min_step]] = 3

        done = (status == 0) & (1.0 - t <= 1e-14)
        status[done] = 1
    status[status == 0] = 4

    succ = status == 1
    residuals = np.full(B, np.inf)
    if succ.any():
        idx = np.flatnonzero(succ)
        Xr, rn, ok_ref = newton_refine_batch(
            system, X[idx], P1[idx], max_iters=5, tol=opts.corrector_tol * 1e-2
        )
        X[idx] = Xr
        residuals[idx] = rn
        # reaching t = 1 with a loosely corrected iterate is not success.
        # The bar rises gently with the endpoint norm -- a genuine far-out
        # endpoint cannot evaluate its residual below the rounding floor --
        # but the allowance is capped well under what spurious branches or
        # escaping rows would need to slip through.
        allow = np.clip(
            (np.linalg.norm(Xr, axis=-1) / 10.0) ** 3, 1.0, opts.final_allow_cap
        )
        succ[idx] &= ok_ref | (rn <= opts.corrector_tol * allow)
    return BatchTrackResult(
        success=succ, endpoints=X, residuals=residuals, steps=steps, status=status,
        t_final=t,
    )
