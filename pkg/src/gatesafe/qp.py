"""Minimal-deviation action projection under one linear constraint + norm ball.

Solves, in closed form by case analysis::

    minimize   |u - u_nom|^2
    subject to a . u >= b,  |u| <= alpha

Cases:
- constraint satisfied and inside the ball: keep the action;
- halfspace violated: project onto the hyperplane, accept if inside the ball;
- only the ball violated: rescale onto the sphere, accept if the halfspace
  still holds;
- both boundaries active: the optimum lies on the circle where the plane cuts
  the sphere; found by bisecting the Lagrangian norm condition to 1e-12;
- no action in the ball can satisfy the constraint: fall back to the
  best-effort action alpha * a / |a| (maximizes the constraint margin);
- a = 0 degenerates: b <= 0 means every direction is admissible (keep the
  action, clipped to the ball); b > 0 means no direction helps at all.

verify_kkt independently certifies a decision through stationarity, primal
feasibility, dual nonnegativity, and complementary slackness.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.optimize

from .barrier import BarrierConstraint, SafetyParams
from .field import DistanceField, sample_batch, SAMPLE_OK

BISECTION_TOL = 1e-12
_DEGENERATE_NORM = 1e-300


class FilterStatus(Enum):
    UNCHANGED = "unchanged"
    PROJECTED = "projected"
    INFEASIBLE_FALLBACK = "infeasible_fallback"
    DEGENERATE_SAFE = "degenerate_safe"


@dataclass
class FilterDecision:
    """Filtered action plus bookkeeping about how it was obtained.

    margin is a . u_star - b; deviation is |u_nom - u_star|.
    no_improving_direction flags the fully degenerate case (a = 0 with b > 0)
    where no action affects the constraint.
    """

    u_star: np.ndarray
    status: FilterStatus
    margin: float
    deviation: float
    no_improving_direction: bool = False


def filter_action(u_nom: np.ndarray, con: BarrierConstraint, params: SafetyParams) -> FilterDecision:
    """Project a nominal action into the admissible set with minimal deviation."""
    u_nom = np.asarray(u_nom, dtype=float)
    a = np.asarray(con.a, dtype=float)
    b = float(con.b)
    alpha = float(params.alpha)

    na2 = float(a @ a)
    if na2 <= _DEGENERATE_NORM:
        nu = float(np.linalg.norm(u_nom))
        if b <= 0.0:
            u = u_nom if nu <= alpha else u_nom * (alpha / nu)
            return FilterDecision(
                u_star=u,
                status=FilterStatus.DEGENERATE_SAFE,
                margin=-b,
                deviation=float(np.linalg.norm(u_nom - u)),
            )
        return FilterDecision(
            u_star=np.zeros(3),
            status=FilterStatus.INFEASIBLE_FALLBACK,
            margin=-b,
            deviation=nu,
            no_improving_direction=True,
        )

    na = math.sqrt(na2)
    if alpha * na < b:
        u = a * (alpha / na)
        return FilterDecision(
            u_star=u,
            status=FilterStatus.INFEASIBLE_FALLBACK,
            margin=alpha * na - b,
            deviation=float(np.linalg.norm(u_nom - u)),
        )

    au = float(a @ u_nom)
    nu = float(np.linalg.norm(u_nom))
    if au >= b and nu <= alpha:
        return FilterDecision(u_star=u_nom.copy(), status=FilterStatus.UNCHANGED, margin=au - b, deviation=0.0)

    if b <= -alpha * na:
        # The whole norm ball satisfies the halfspace, so only the norm bound
        # can bind: clip onto the ball (nu > alpha here, else unchanged above).
        u = u_nom * (alpha / nu)
        return FilterDecision(
            u_star=u,
            status=FilterStatus.PROJECTED,
            margin=float(a @ u) - b,
            deviation=float(np.linalg.norm(u_nom - u)),
        )

    if au >= b:
        # Only the norm bound is violated; try the sphere projection.
        u = u_nom * (alpha / nu)
        m = float(a @ u) - b
        if m >= -1e-12 * max(1.0, abs(b)):
            return FilterDecision(
                u_star=u, status=FilterStatus.PROJECTED, margin=m, deviation=float(np.linalg.norm(u_nom - u))
            )
    else:
        # Halfspace violated; project onto its boundary plane. If the foot
        # leaves the ball, the ball clip may still restore the halfspace (a
        # projection onto one set that lands in the other is globally
        # optimal); only when both single-set projections fail are both
        # boundaries active.
        u = u_nom + ((b - au) / na2) * a
        if float(np.linalg.norm(u)) <= alpha * (1.0 + 1e-12):
            return FilterDecision(
                u_star=u,
                status=FilterStatus.PROJECTED,
                margin=float(a @ u) - b,
                deviation=float(np.linalg.norm(u_nom - u)),
            )
        if nu > alpha:
            u = u_nom * (alpha / nu)
            m = float(a @ u) - b
            if m >= -1e-12 * max(1.0, abs(b)):
                return FilterDecision(
                    u_star=u, status=FilterStatus.PROJECTED, margin=m, deviation=float(np.linalg.norm(u_nom - u))
                )

    u = _project_onto_circle(u_nom, a, b, alpha, na2)
    return FilterDecision(
        u_star=u,
        status=FilterStatus.PROJECTED,
        margin=float(a @ u) - b,
        deviation=float(np.linalg.norm(u_nom - u)),
    )


def _project_onto_circle(u_nom: np.ndarray, a: np.ndarray, b: float, alpha: float, na2: float) -> np.ndarray:
    """Nearest point on {a.u = b, |u| = alpha} via Lagrangian bisection.

    With multiplier parameter s = 1 + mu the stationary point is
    u(s) = c0 + perp / s where c0 = (b/|a|^2) a and perp is u_nom's component
    orthogonal to a; |u(s)| is monotone decreasing in s, so bisect
    |u(s)|^2 = alpha^2 to 1e-12.
    """
    c0 = a * (b / na2)
    perp = u_nom - a * (float(a @ u_nom) / na2)
    np_norm = float(np.linalg.norm(perp))
    r2 = alpha * alpha - b * b / na2
    if r2 < 0.0:
        r2 = 0.0
    if np_norm < 1e-12:
        # Nominal action parallel to a: every circle point is equidistant;
        # pick a deterministic direction orthogonal to a.
        k = int(np.argmin(np.abs(a)))
        e = np.zeros(3)
        e[k] = 1.0
        perp = np.cross(a, e)
        perp /= float(np.linalg.norm(perp))
        return c0 + perp * math.sqrt(r2)

    def norm2(s: float) -> float:
        u = c0 + perp / s
        return float(u @ u)

    s_lo = 1.0
    if norm2(s_lo) <= alpha * alpha:
        # Boundary case: the plane projection already sits on/inside the
        # sphere (possible only through rounding at the case border).
        return c0 + perp

    s_hi = 2.0
    for _ in range(600):
        if norm2(s_hi) <= alpha * alpha:
            break
        s_lo = s_hi
        s_hi *= 2.0
    while s_hi - s_lo > BISECTION_TOL * max(1.0, s_lo):
        mid = 0.5 * (s_lo + s_hi)
        if norm2(mid) > alpha * alpha:
            s_lo = mid
        else:
            s_hi = mid
    return c0 + perp / (0.5 * (s_lo + s_hi))


def filter_action_batch(
    U: np.ndarray, A: np.ndarray, B: np.ndarray, alpha: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized :func:`filter_action` over N independent instances.

    Returns (u_star (N,3), status codes (N,), margins (N,), deviations (N,)).
    Status codes index into FILTER_STATUS_ORDER. The two-boundary case uses
    the circle projection in closed form (the limit of the scalar path's
    bisection); the scalar and batch paths agree to solver tolerance.
    """
    U = np.asarray(U, dtype=float)
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = U.shape[0]
    out = np.empty_like(U)
    status = np.empty(n, dtype=np.int8)

    na2 = np.einsum("ij,ij->i", A, A)
    na = np.sqrt(na2)
    nu = np.linalg.norm(U, axis=1)
    au = np.einsum("ij,ij->i", A, U)

    degenerate = na2 <= _DEGENERATE_NORM
    deg_safe = degenerate & (B <= 0.0)
    deg_stuck = degenerate & (B > 0.0)
    infeasible = ~degenerate & (alpha * na < B)
    solvable = ~(degenerate | infeasible)

    # Degenerate-safe: clip to the ball.
    scale = np.where(nu > alpha, alpha / np.where(nu == 0.0, 1.0, nu), 1.0)
    out[deg_safe] = U[deg_safe] * scale[deg_safe, None]
    status[deg_safe] = _STATUS_CODE[FilterStatus.DEGENERATE_SAFE]
    out[deg_stuck] = 0.0
    status[deg_stuck] = _STATUS_CODE[FilterStatus.INFEASIBLE_FALLBACK]

    # Infeasible: best-effort along a.
    if np.any(infeasible):
        out[infeasible] = A[infeasible] * (alpha / na[infeasible])[:, None]
        status[infeasible] = _STATUS_CODE[FilterStatus.INFEASIBLE_FALLBACK]

    # Feasible and untouched.
    ok = solvable & (au >= B) & (nu <= alpha)
    out[ok] = U[ok]
    status[ok] = _STATUS_CODE[FilterStatus.UNCHANGED]

    # Ball entirely inside the halfspace: only the norm bound can bind.
    contained = solvable & ~ok & (B <= -alpha * na)
    if np.any(contained):
        out[contained] = U[contained] * (alpha / nu[contained])[:, None]
        status[contained] = _STATUS_CODE[FilterStatus.PROJECTED]
    solvable = solvable & ~contained

    # Ball-only violation: rescale, keep when the halfspace still holds.
    ball_v = solvable & (au >= B) & (nu > alpha)
    if np.any(ball_v):
        cand = U[ball_v] * (alpha / nu[ball_v])[:, None]
        m = np.einsum("ij,ij->i", A[ball_v], cand) - B[ball_v]
        good = m >= -1e-12 * np.maximum(1.0, np.abs(B[ball_v]))
        idx = np.flatnonzero(ball_v)
        out[idx[good]] = cand[good]
        status[idx[good]] = _STATUS_CODE[FilterStatus.PROJECTED]
        _circle_batch(U, A, B, alpha, na2, idx[~good], out, status)

    # Halfspace violation: plane foot if inside the ball, else the ball clip
    # if it restores the halfspace, else both boundaries are active.
    half_v = solvable & (au < B)
    if np.any(half_v):
        lam = (B[half_v] - au[half_v]) / na2[half_v]
        cand = U[half_v] + lam[:, None] * A[half_v]
        good = np.linalg.norm(cand, axis=1) <= alpha * (1.0 + 1e-12)
        idx = np.flatnonzero(half_v)
        out[idx[good]] = cand[good]
        status[idx[good]] = _STATUS_CODE[FilterStatus.PROJECTED]

        rest = idx[~good]
        if rest.size:
            clip_ok = np.zeros(rest.size, dtype=bool)
            outside = nu[rest] > alpha
            ridx = rest[outside]
            if ridx.size:
                clip = U[ridx] * (alpha / nu[ridx])[:, None]
                m = np.einsum("ij,ij->i", A[ridx], clip) - B[ridx]
                keep = m >= -1e-12 * np.maximum(1.0, np.abs(B[ridx]))
                out[ridx[keep]] = clip[keep]
                status[ridx[keep]] = _STATUS_CODE[FilterStatus.PROJECTED]
                clip_ok[np.flatnonzero(outside)[keep]] = True
            _circle_batch(U, A, B, alpha, na2, rest[~clip_ok], out, status)

    margins = np.einsum("ij,ij->i", A, out) - B
    deviations = np.linalg.norm(U - out, axis=1)
    return out, status, margins, deviations


def _circle_batch(U, A, B, alpha, na2, idx, out, status) -> None:
    """Closed-form nearest point on the sphere/plane intersection circle."""
    if idx.size == 0:
        return
    a = A[idx]
    b = B[idx]
    u = U[idx]
    n2 = na2[idx]
    c0 = a * (b / n2)[:, None]
    perp = u - a * (np.einsum("ij,ij->i", a, u) / n2)[:, None]
    pn = np.linalg.norm(perp, axis=1)
    r = np.sqrt(np.maximum(alpha * alpha - b * b / n2, 0.0))
    # Deterministic orthogonal direction for nominal actions parallel to a.
    par = pn < 1e-12
    if np.any(par):
        ap = a[par]
        e = np.zeros_like(ap)
        e[np.arange(ap.shape[0]), np.argmin(np.abs(ap), axis=1)] = 1.0
        alt = np.cross(ap, e)
        alt /= np.linalg.norm(alt, axis=1)[:, None]
        perp[par] = alt
        pn[par] = 1.0
    out[idx] = c0 + perp * (r / pn)[:, None]
    status[idx] = _STATUS_CODE[FilterStatus.PROJECTED]


FILTER_STATUS_ORDER = (
    FilterStatus.UNCHANGED,
    FilterStatus.PROJECTED,
    FilterStatus.INFEASIBLE_FALLBACK,
    FilterStatus.DEGENERATE_SAFE,
)
_STATUS_CODE = {s: i for i, s in enumerate(FILTER_STATUS_ORDER)}


def verify_kkt(
    u_nom: np.ndarray,
    con: BarrierConstraint,
    params: SafetyParams,
    decision: FilterDecision,
    tol: float = 1e-7,
) -> bool:
    """Independently certify a feasible decision's optimality via KKT.

    Checks primal feasibility, then stationarity with nonnegative multipliers
    restricted to the active constraints (complementary slackness holds by
    construction: inactive constraints get multiplier exactly zero). The
    multipliers come from a nonnegative least-squares fit, so dual feasibility
    is enforced rather than assumed; the stationarity residual must fall
    within ``tol`` scaled by the instance magnitude. Not applicable to
    infeasible fallbacks.
    """
    if decision.status is FilterStatus.INFEASIBLE_FALLBACK:
        raise ValueError("KKT certification applies to feasible decisions only")
    u_nom = np.asarray(u_nom, dtype=float)
    a = np.asarray(con.a, dtype=float)
    b = float(con.b)
    u = decision.u_star
    alpha = params.alpha

    scale = 1.0 + float(np.linalg.norm(u_nom)) + float(np.linalg.norm(a)) + abs(b) + alpha
    tol_s = tol * scale

    # Primal feasibility.
    plane_slack = float(a @ u) - b
    ball_slack = alpha - float(np.linalg.norm(u))
    if plane_slack < -tol_s or ball_slack < -tol_s:
        return False

    # Stationarity: u_nom - u = mu * u - lambda * a with mu, lambda >= 0 and
    # multipliers only on active constraints.
    cols = []
    if ball_slack <= tol_s:
        cols.append(u)
    if plane_slack <= tol_s:
        cols.append(-a)
    rhs = u_nom - u
    if not cols:
        return float(np.linalg.norm(rhs)) <= tol_s
    M = np.stack(cols, axis=1)
    _, rnorm = scipy.optimize.nnls(M, rhs)
    return rnorm <= tol_s


@dataclass
class PlaneActionField:
    """Safest sampled action per grid node on one axis-aligned plane.

    directions holds the chosen action (norm = speed) per node and zeros where
    unsafe; unsafe marks nodes where every sampled direction violates the
    constraint (nodes inside/too close to the solid count as unsafe).
    """

    plane: str
    offset: float
    coords_u: np.ndarray
    coords_v: np.ndarray
    positions: np.ndarray
    directions: np.ndarray
    unsafe: np.ndarray
    margins: np.ndarray


def safest_action_field(
    f: DistanceField,
    params: SafetyParams,
    speed: float,
    plane: str,
    offset: float,
    angular_samples: int = 72,
) -> PlaneActionField:
    """Margin-maximizing in-plane action at every grid node of a plane slice.

    plane "xy" varies x and y at z = offset; plane "yz" varies y and z at
    x = offset. Sampled directions are ``angular_samples`` unit vectors in the
    plane scaled to ``speed`` (must not exceed the norm bound).
    """
    if plane not in ("xy", "yz"):
        raise ValueError(f"plane must be 'xy' or 'yz', got {plane!r}")
    if not (0.0 < speed <= params.alpha):
        raise ValueError(f"speed must lie in (0, alpha={params.alpha}], got {speed}")
    if angular_samples < 2:
        raise ValueError("angular_samples must be at least 2")

    if plane == "xy":
        au, av, fixed = 0, 1, 2
    else:
        au, av, fixed = 1, 2, 0
    lo, hi = f.spec.origin[fixed], f.spec.max_corner[fixed]
    if offset < lo - 1e-9 or offset > hi + 1e-9:
        raise ValueError(f"offset {offset} outside grid extent [{lo:g}, {hi:g}] on axis {'xyz'[fixed]}")

    cu = f.spec.axis_nodes(au)
    cv = f.spec.axis_nodes(av)
    uu, vv = np.meshgrid(cu, cv, indexing="ij")
    pts = np.zeros(uu.shape + (3,))
    pts[..., au] = uu
    pts[..., av] = vv
    pts[..., fixed] = offset
    flat = pts.reshape(-1, 3)

    d, grad, code = sample_batch(f, flat)
    valid = code == SAMPLE_OK

    theta = 2.0 * math.pi * np.arange(angular_samples) / angular_samples
    dirs = np.zeros((angular_samples, 3))
    dirs[:, au] = np.cos(theta)
    dirs[:, av] = np.sin(theta)

    a = 2.0 * d[:, None] * grad
    c_robust = 2.0 * d * (np.abs(grad) @ params.dw)
    b = -params.gamma * (d * d - params.R * params.R) + c_robust

    margins = speed * (a @ dirs.T) - b[:, None]
    margins[~valid] = -np.inf
    best = np.argmax(margins, axis=1)
    best_margin = margins[np.arange(flat.shape[0]), best]
    unsafe = ~valid | (best_margin < 0.0)

    directions = speed * dirs[best]
    directions[unsafe] = 0.0

    shape = uu.shape
    return PlaneActionField(
        plane=plane,
        offset=float(offset),
        coords_u=cu,
        coords_v=cv,
        positions=pts,
        directions=directions.reshape(shape + (3,)),
        unsafe=unsafe.reshape(shape),
        margins=best_margin.reshape(shape),
    )
