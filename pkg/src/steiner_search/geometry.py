"""Convex consistent-set geometry: ball-and-halfspace bodies, projections,
support widths, and Monte-Carlo estimates of inflated volumes.

A body is the unit ball (optionally rescaled) intersected with halfspace
cuts accumulated from comparison feedback.  Everything downstream needs
three primitives from this module:

- Euclidean projection onto the body (Dykstra alternating projections),
- support extremes / width along a direction (projected gradient with
  escalating step sizes, each step a Dykstra projection),
- rejection-sampled volume of the body inflated by a ball of radius z,
  optionally intersected with one extra halfspace, plus the quantile cut
  ("median cut") along a direction derived from the same sampling pass.

Bodies are immutable values; ``add_cut`` returns a new body.  All sampling
is driven by a caller-supplied ``numpy.random.Generator`` so repeated runs
are bit-identical.  Sample batches are drawn sequentially from that single
stream, which keeps results independent of any batching choice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


UNIT_NORM_TOL = 1e-9
FEASIBILITY_TOL = 1e-8
DYKSTRA_TOL = 1e-9
DYKSTRA_MAX_ITER = 10_000
MEMBERSHIP_TOL = 1e-8
BISECTION_FLOOR = 1e-12
MEDIAN_REL_TOL = 0.05


class GeometryError(Exception):
    """Base class for geometry failures."""


class NonConvergence(GeometryError):
    """Dykstra failed to stabilize within the iteration cap (near-empty body)."""


class DegenerateEstimate(GeometryError):
    """A volume estimate produced zero hits at the given sample count."""


class BisectionStall(GeometryError):
    """Median-cut bisection interval collapsed before meeting tolerance."""


def unit_ball_volume(dim: int, radius: float = 1.0) -> float:
    """Volume of the Euclidean ball of the given radius."""
    return math.pi ** (dim / 2.0) / math.gamma(dim / 2.0 + 1.0) * radius**dim


@dataclass(frozen=True)
class Halfspace:
    """The set {v : <normal, v> <= offset} with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > UNIT_NORM_TOL:
            raise ValueError("halfspace normal must have unit norm")
        object.__setattr__(self, "normal", n)


@dataclass
class VolumeEstimate:
    """Rejection-sampling volume estimate with binomial error accounting."""

    value: float
    samples: int
    hits: int
    rel_std_err: float


class ConvexBody:
    """Ball of radius ``ball_radius`` intersected with halfspace cuts.

    Immutable after construction.  A bounding box (lower/upper support per
    coordinate) is carried along; it is always a valid outer box for the
    body and is cheaply tightened by each new cut, with optional exact
    refresh via support maximization.  ``interior_hint`` is any point known
    to lie in the body; it seeds ray-based distance upper bounds and is
    refreshed by callers that happen to know interior points (for example
    the centroid of accepted volume samples).
    """

    __slots__ = (
        "dim",
        "ball_radius",
        "normals",
        "offsets",
        "box_lo",
        "box_hi",
        "interior_hint",
        "_tight_box",
    )

    def __init__(self, dim, ball_radius=1.0, normals=None, offsets=None,
                 box_lo=None, box_hi=None, interior_hint=None, tight_box=False):
        if ball_radius <= 0:
            raise ValueError("ball_radius must be positive")
        self.dim = int(dim)
        self.ball_radius = float(ball_radius)
        if normals is None:
            normals = np.zeros((0, self.dim))
            offsets = np.zeros(0)
        self.normals = np.ascontiguousarray(normals, dtype=float)
        self.offsets = np.ascontiguousarray(offsets, dtype=float)
        if self.normals.shape[0]:
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
                raise ValueError("all cut normals must have unit norm")
        r = self.ball_radius
        self.box_lo = np.full(self.dim, -r) if box_lo is None else np.asarray(box_lo, dtype=float)
        self.box_hi = np.full(self.dim, r) if box_hi is None else np.asarray(box_hi, dtype=float)
        self.interior_hint = None if interior_hint is None else np.asarray(interior_hint, dtype=float)
        self._tight_box = bool(tight_box)

    @property
    def cuts(self):
        """Cuts as a list of Halfspace values."""
        return [Halfspace(self.normals[j].copy(), float(self.offsets[j]))
                for j in range(self.normals.shape[0])]

    @property
    def num_cuts(self) -> int:
        return self.normals.shape[0]

    def contains(self, q, tol=FEASIBILITY_TOL):
        """Exact membership in the uninflated body, within tolerance."""
        q = np.asarray(q, dtype=float)
        if np.linalg.norm(q) > self.ball_radius + tol:
            return False
        if self.num_cuts and np.any(self.normals @ q > self.offsets + tol):
            return False
        return True

    def replace_hint(self, point) -> "ConvexBody":
        """Return the same body with a new interior hint (no geometry change)."""
        return ConvexBody(self.dim, self.ball_radius, self.normals, self.offsets,
                          self.box_lo, self.box_hi, point, self._tight_box)


# ---------------------------------------------------------------------------
# Dykstra alternating projections
# ---------------------------------------------------------------------------

@njit(cache=True)
def _dykstra_points(Q, normals, offsets, radius, tol, max_iter):
    k, d = Q.shape
    m = normals.shape[0]
    out = np.empty_like(Q)
    status = np.zeros(k, dtype=np.int8)
    incr = np.zeros((m + 1, d))
    x = np.zeros(d)
    x_prev = np.zeros(d)
    for p in range(k):
        for j in range(d):
            x[j] = Q[p, j]
        incr[:, :] = 0.0
        converged = False
        for _ in range(max_iter):
            for j in range(d):
                x_prev[j] = x[j]
            # halfspace cycle
            for c in range(m):
                # y = x + incr[c]
                dot = 0.0
                for j in range(d):
                    x[j] += incr[c, j]
                    dot += normals[c, j] * x[j]
                viol = dot - offsets[c]
                if viol > 0.0:
                    for j in range(d):
                        proj = x[j] - viol * normals[c, j]
                        incr[c, j] = x[j] - proj
                        x[j] = proj
                else:
                    for j in range(d):
                        incr[c, j] = 0.0
            # ball last so the returned point satisfies it exactly
            nrm2 = 0.0
            for j in range(d):
                x[j] += incr[m, j]
                nrm2 += x[j] * x[j]
            nrm = math.sqrt(nrm2)
            if nrm > radius:
                scale = radius / nrm
                for j in range(d):
                    proj = x[j] * scale
                    incr[m, j] = x[j] - proj
                    x[j] = proj
            else:
                for j in range(d):
                    incr[m, j] = 0.0
            move = 0.0
            for j in range(d):
                dj = abs(x[j] - x_prev[j])
                if dj > move:
                    move = dj
            if move < tol:
                # small per-sweep movement alone can be premature when the
                # alternating rate is close to 1; require feasibility too
                feas = True
                for c in range(m):
                    dot = 0.0
                    for j in range(d):
                        dot += normals[c, j] * x[j]
                    if dot - offsets[c] > 1e-9:
                        feas = False
                        break
                if feas:
                    converged = True
                    break
        if not converged:
            status[p] = 1
        for j in range(d):
            out[p, j] = x[j]
    return out, status


def project(body: ConvexBody, q, tol: float = DYKSTRA_TOL,
            max_iter: int = DYKSTRA_MAX_ITER) -> np.ndarray:
    """Euclidean projection of ``q`` onto the body via Dykstra.

    Raises NonConvergence if the alternating projections do not stabilize
    within the iteration cap, which signals a (near-)empty body.
    """
    q = np.ascontiguousarray(np.atleast_2d(np.asarray(q, dtype=float)))
    out, status = _dykstra_points(q, body.normals, body.offsets,
                                  body.ball_radius, tol, max_iter)
    if status[0] != 0:
        raise NonConvergence("Dykstra did not stabilize within %d iterations" % max_iter)
    p = out[0]
    if body.num_cuts:
        worst = float(np.max(body.normals @ p - body.offsets))
        if worst > FEASIBILITY_TOL:
            raise NonConvergence("projection violates a cut by %.3g" % worst)
    return p


def project_points(body: ConvexBody, Q, tol: float = DYKSTRA_TOL,
                   max_iter: int = DYKSTRA_MAX_ITER):
    """Batched Dykstra projection; returns (points, non_convergence_mask)."""
    Q = np.ascontiguousarray(np.asarray(Q, dtype=float))
    out, status = _dykstra_points(Q, body.normals, body.offsets,
                                  body.ball_radius, tol, max_iter)
    return out, status != 0


# ---------------------------------------------------------------------------
# Membership in the z-inflation (Minkowski sum with a z-ball)
# ---------------------------------------------------------------------------

def _ray_exit_bound(body: ConvexBody, Q, center):
    """Upper bound on dist(q, body): distance to the exit point of the ray
    from an interior point toward q. Valid for any feasible ``center``."""
    U = Q - center[None, :]
    unorm2 = np.einsum("ij,ij->i", U, U)
    unorm2 = np.maximum(unorm2, 1e-300)
    # ball exit: ||center + t U|| = R
    b = U @ center
    c0 = float(center @ center) - body.ball_radius**2
    disc = np.maximum(b * b - unorm2 * c0, 0.0)
    t = (-b + np.sqrt(disc)) / unorm2
    if body.num_cuts:
        num = body.offsets - body.normals @ center  # >= 0 for feasible center
        den = U @ body.normals.T
        with np.errstate(divide="ignore", invalid="ignore"):
            tj = np.where(den > 1e-300, num[None, :] / den, np.inf)
        t = np.minimum(t, tj.min(axis=1))
    t = np.clip(t, 0.0, 1.0)
    return (1.0 - t) * np.sqrt(unorm2)


def inflated_membership(body: ConvexBody, z: float, Q,
                        tol: float = MEMBERSHIP_TOL,
                        strict: bool = False) -> np.ndarray:
    """Vectorized test for membership in body + z*ball.

    Equivalent to dist(q, body) <= z + tol with dist from ``project``:
    cheap lower/upper distance bounds settle most points, the remainder is
    resolved by batched Dykstra.  Non-strict mode classifies the rare
    Dykstra-cap points by their best-effort distance (a measure-tiny set
    for Monte-Carlo use); strict mode raises NonConvergence instead.
    """
    if z < 0:
        raise ValueError("inflation radius must be nonnegative")
    Q = np.ascontiguousarray(np.asarray(Q, dtype=float))
    n = Q.shape[0]
    norms = np.linalg.norm(Q, axis=1)
    lower = np.maximum(norms - body.ball_radius, 0.0)
    if body.num_cuts:
        viol = Q @ body.normals.T - body.offsets[None, :]
        lower = np.maximum(lower, viol.max(axis=1))
    result = np.zeros(n, dtype=bool)
    inside = lower <= 0.0
    result[inside] = True
    undecided = ~inside & (lower <= z + tol)
    if not np.any(undecided):
        return result
    center = body.interior_hint
    if center is not None and np.any(undecided):
        ub = _ray_exit_bound(body, Q[undecided], center)
        idx = np.flatnonzero(undecided)
        accepted = ub <= z + tol
        result[idx[accepted]] = True
        undecided[idx[accepted]] = False
    if np.any(undecided):
        idx = np.flatnonzero(undecided)
        proj, bad = project_points(body, Q[idx])
        if strict and np.any(bad):
            raise NonConvergence("Dykstra failed on %d membership queries"
                                 % int(bad.sum()))
        dist = np.linalg.norm(Q[idx] - proj, axis=1)
        dist = np.maximum(dist, lower[idx])
        result[idx] = dist <= z + tol
    return result


def inflated_contains(body: ConvexBody, z: float, q) -> bool:
    """True iff dist(q, body) <= z + 1e-8, distance via projection."""
    return bool(inflated_membership(body, z, np.atleast_2d(np.asarray(q, dtype=float)),
                                    strict=True)[0])


# ---------------------------------------------------------------------------
# Support values and width
# ---------------------------------------------------------------------------

def _support_start(body: ConvexBody):
    hint = body.interior_hint
    if hint is not None and body.contains(hint):
        return np.asarray(hint, dtype=float)
    if body.contains(np.zeros(body.dim)):
        return np.zeros(body.dim)
    return project(body, np.zeros(body.dim))

def _null_component(N, g):
    """Component of g orthogonal to the rows of N."""
    if N.shape[0] == 0:
        return g.copy()
    coef, *_ = np.linalg.lstsq(N.T, g, rcond=None)
    return g - N.T @ coef


def _first_blocking_angle(alpha, beta, gamma, theta_max):
    """Smallest angle in (0, theta_max] where a*cos + b*sin crosses gamma.

    Entries are vectors over the inactive cuts; returns (theta, index) with
    index -1 when nothing blocks.  At angle 0 all constraints satisfy
    a <= gamma (feasible start).
    """
    amp = np.hypot(alpha, beta)
    theta = math.pi if theta_max is None else theta_max
    idx = -1
    crossing = amp >= np.abs(gamma) - 1e-15
    for j in np.flatnonzero(crossing):
        a, bb, g, r = alpha[j], beta[j], gamma[j], amp[j]
        if r < 1e-15:
            continue
        phi = math.atan2(bb, a)
        delta = math.acos(min(1.0, max(-1.0, g / r)))
        for cand in (phi - delta, phi + delta):
            c = cand % (2.0 * math.pi)
            if 1e-13 < c <= theta + 1e-15:
                # confirm it is an entering crossing, not a numerical echo
                val = a * math.cos(c) + bb * math.sin(c) - g
                if val > -1e-12:
                    theta = min(theta, c)
                    idx = j
    return theta, idx


def _support_walk(body: ConvexBody, x, start):
    """Exact support maximization by an active-set walk.

    Inside the ball the iterate moves along straight feasible ascent
    segments; on the sphere it moves along great-circle arcs of the current
    face (the working cuts as equalities, intersected with the sphere),
    with blocking cuts found in closed form.  Stationarity is certified
    through the KKT multipliers, so the returned value is exact up to
    round-off.  Returns (value, point, certified).
    """
    R = body.ball_radius
    m = body.num_cuts
    N_all = body.normals
    b_all = body.offsets
    v = np.asarray(start, dtype=float).copy()
    best_v = v.copy()
    best = float(v @ x)
    working: list[int] = (
        [int(j) for j in np.flatnonzero(b_all - N_all @ v <= 1e-9)] if m else []
    )
    for _ in range(60 * (body.dim + m + 4)):
        working = [j for j in working if b_all[j] - float(N_all[j] @ v) <= 1e-7]
        W = np.array(sorted(set(working)), dtype=int)
        N = N_all[W] if W.size else np.zeros((0, body.dim))
        on_sphere = np.linalg.norm(v) >= R - 1e-9
        if not on_sphere:
            g = _null_component(N, x)
            if np.linalg.norm(g) <= 1e-11:
                if not W.size:
                    break
                lam, *_ = np.linalg.lstsq(N.T, x, rcond=None)
                resid = float(np.linalg.norm(x - N.T @ lam))
                if np.min(lam) < -1e-9:
                    working.remove(int(W[int(np.argmin(lam))]))
                    continue
                return (best, best_v, True) if resid <= 1e-8 else (best, best_v, False)
            gv = float(v @ g)
            gg = float(g @ g)
            disc = gv * gv - gg * (float(v @ v) - R * R)
            t = (-gv + math.sqrt(max(disc, 0.0))) / gg
            blocker = -1
            if m:
                slack = b_all - N_all @ v
                den = N_all @ g
                for j in range(m):
                    if j in working or den[j] <= 1e-14:
                        continue
                    tj = max(slack[j], 0.0) / den[j]
                    if tj < t:
                        t, blocker = tj, j
            v = v + t * g
            if blocker >= 0:
                working.append(blocker)
            val = float(v @ x)
            if val > best:
                best, best_v = val, v.copy()
            continue
        # sphere phase: re-tighten v onto the exact face-sphere first
        if W.size:
            c, *_ = np.linalg.lstsq(N, b_all[W], rcond=None)
        else:
            c = np.zeros(body.dim)
        rho2 = R * R - float(c @ c)
        if rho2 <= 1e-18:
            # face barely touches the sphere; the face point is the optimum
            # candidate here, certify or drop below
            if not W.size:
                break
            lam, *_ = np.linalg.lstsq(N.T, x, rcond=None)
            if np.min(lam) < -1e-9:
                working.remove(int(W[int(np.argmin(lam))]))
                v = v * (1.0 - 1e-9)
                continue
            if _feasible_point(body, c):
                val = float(c @ x)
                if val > best:
                    best, best_v = val, c.copy()
            return best, best_v, False
        rho = math.sqrt(rho2)
        u = _null_component(N, v - c)
        un = float(np.linalg.norm(u))
        if un <= 1e-13:
            break
        u *= rho / un
        v = c + u
        g = _null_component(N, x)
        g_t = g - (float(g @ u) / (rho * rho)) * u
        if np.linalg.norm(g_t) <= 1e-11:
            vb = v / max(float(np.linalg.norm(v)), 1e-300)
            basis = np.vstack([vb[None, :], N])
            lam, *_ = np.linalg.lstsq(basis.T, x, rcond=None)
            resid = float(np.linalg.norm(x - basis.T @ lam))
            if lam.size > 1 and np.min(lam[1:]) < -1e-9:
                working.remove(int(W[int(np.argmin(lam[1:]))]))
                continue
            if lam[0] < -1e-9:
                v = v * (1.0 - 1e-9)
                continue
            val = float(v @ x)
            if val > best:
                best, best_v = val, v.copy()
            return (best, best_v, True) if resid <= 1e-8 else (best, best_v, False)
        ghat = g_t / float(np.linalg.norm(g_t))
        A = float(x @ u)
        B = rho * float(x @ ghat)
        theta_star = math.atan2(B, A)
        if theta_star <= 1e-13:
            break
        blocker = -1
        theta = theta_star
        if m:
            others = np.array([j for j in range(m) if j not in working], dtype=int)
            if others.size:
                alpha = N_all[others] @ u
                beta = rho * (N_all[others] @ ghat)
                gamma = b_all[others] - N_all[others] @ c
                theta, widx = _first_blocking_angle(alpha, beta, gamma, theta_star)
                if widx >= 0:
                    blocker = int(others[widx])
        v = c + math.cos(theta) * u + math.sin(theta) * rho * ghat
        if blocker >= 0:
            working.append(blocker)
        val = float(v @ x)
        if val > best:
            best, best_v = val, v.copy()
    return best, best_v, False


def _feasible_point(body: ConvexBody, v, tol=1e-9) -> bool:
    if np.linalg.norm(v) > body.ball_radius + tol:
        return False
    if body.num_cuts and np.any(body.normals @ v > body.offsets + tol):
        return False
    return True


def support_max(body: ConvexBody, x, tol: float = 1e-9) -> tuple[float, np.ndarray]:
    """max over the body of <v, x>.

    An active-set walk on the sphere/halfspace boundary computes the
    support point exactly (certified by KKT multipliers); projected
    gradient ascent with Dykstra projections serves as a fallback for the
    rare uncertified exits.
    """
    x = np.asarray(x, dtype=float)
    start = _support_start(body)
    val, v, certified = _support_walk(body, x, start)
    if certified:
        return val, v
    # fallback: budgeted projected-gradient ascent from the walk result
    cur = v
    step = 2.0 * body.ball_radius
    for _ in range(6):
        q = np.ascontiguousarray((cur + step * x)[None, :])
        out, _ = _dykstra_points(q, body.normals, body.offsets,
                                 body.ball_radius, 1e-10, 4000)
        cur = out[0]
        cur_val = float(cur @ x)
        if cur_val > val and body.contains(cur, tol=1e-8):
            v, val = cur, cur_val
        step *= 8.0
    return val, v


def support_interval(body: ConvexBody, x) -> tuple[float, float]:
    """(min, max) of <v, x> over the body."""
    x = np.asarray(x, dtype=float)
    hi, _ = support_max(body, x)
    lo_neg, _ = support_max(body, -x)
    return -lo_neg, hi


def width(body: ConvexBody, x) -> float:
    """Support width max<v,x> - min<v,x>; always within [0, 2*ball_radius].

    Clamped by the carried bounding box, a sound outer approximation, which
    also bounds any numerical drift of the ascent on degenerate bodies.
    """
    x = np.asarray(x, dtype=float)
    if abs(np.linalg.norm(x) - 1.0) > UNIT_NORM_TOL:
        raise ValueError("direction must be a unit vector")
    lo, hi = support_interval(body, x)
    box_w = float(np.abs(x) @ (body.box_hi - body.box_lo))
    return float(np.clip(hi - lo, 0.0, min(2.0 * body.ball_radius, box_w)))


def refresh_box(body: ConvexBody) -> ConvexBody:
    """Recompute the coordinate bounding box exactly via support maxima."""
    lo = np.empty(body.dim)
    hi = np.empty(body.dim)
    e = np.zeros(body.dim)
    for j in range(body.dim):
        e[:] = 0.0
        e[j] = 1.0
        hi[j], _ = support_max(body, e)
        e[j] = -1.0
        mx, _ = support_max(body, e)
        lo[j] = -mx
    lo = np.maximum(lo, body.box_lo)
    hi = np.minimum(hi, body.box_hi)
    return ConvexBody(body.dim, body.ball_radius, body.normals, body.offsets,
                      lo, hi, body.interior_hint, tight_box=True)


# ---------------------------------------------------------------------------
# Cuts
# ---------------------------------------------------------------------------

def _box_support(lo, hi, normal):
    """max over the box of <v, normal>."""
    return float(np.sum(np.where(normal >= 0, hi * normal, lo * normal)))


def _tighten_box(lo, hi, normal, offset):
    """Exact per-axis interval tightening of a box by one halfspace."""
    lo = lo.copy()
    hi = hi.copy()
    for j in range(lo.size):
        nj = normal[j]
        if abs(nj) < 1e-14:
            continue
        rest = np.sum(np.where(np.delete(normal, j) >= 0,
                               np.delete(lo, j) * np.delete(normal, j),
                               np.delete(hi, j) * np.delete(normal, j)))
        bound = (offset - rest) / nj
        if nj > 0:
            hi[j] = min(hi[j], bound)
        else:
            lo[j] = max(lo[j], bound)
    return lo, hi


def add_cut(body: ConvexBody, x, y: float, sign: int) -> ConvexBody:
    """Append the halfspace {v : sign*(y - <v,x>) >= 0} in normal/offset form.

    sign=+1 keeps <v,x> <= y, sign=-1 keeps <v,x> >= y.  The original body
    is unchanged.  The carried bounding box is tightened by the new cut and
    box-redundant cuts are dropped (they cannot constrain the body).
    """
    x = np.asarray(x, dtype=float)
    if abs(np.linalg.norm(x) - 1.0) > UNIT_NORM_TOL:
        raise ValueError("cut direction must be a unit vector")
    if sign not in (+1, -1):
        raise ValueError("sign must be +1 or -1")
    normal = x if sign == +1 else -x
    offset = float(y) if sign == +1 else -float(y)
    lo, hi = _tighten_box(body.box_lo, body.box_hi, normal, offset)
    normals = np.vstack([body.normals, normal[None, :]])
    offsets = np.append(body.offsets, offset)
    # prune cuts that cannot bind anywhere in the box
    keep = np.ones(normals.shape[0], dtype=bool)
    for j in range(normals.shape[0]):
        if _box_support(lo, hi, normals[j]) <= offsets[j] - 1e-12:
            keep[j] = False
    keep[-1] = True  # always retain the newest cut
    hint = body.interior_hint
    if hint is not None and normal @ hint > offset + FEASIBILITY_TOL:
        hint = None
    return ConvexBody(body.dim, body.ball_radius, normals[keep], offsets[keep],
                      lo, hi, hint)


# ---------------------------------------------------------------------------
# Volume estimation and quantile cuts
# ---------------------------------------------------------------------------

@dataclass
class Envelope:
    """Sampling envelope: a ball guaranteed to contain body + z*ball."""

    center: np.ndarray
    radius: float

    def volume(self, dim: int) -> float:
        return unit_ball_volume(dim, self.radius)


def tight_envelope(body: ConvexBody, z: float) -> Envelope:
    """Smaller of the origin ball and the box circumball, inflated by z."""
    half = 0.5 * (body.box_hi - body.box_lo)
    center = 0.5 * (body.box_hi + body.box_lo)
    r_box = float(np.linalg.norm(half))
    if r_box < body.ball_radius:
        return Envelope(center, r_box + z)
    return Envelope(np.zeros(body.dim), body.ball_radius + z)


def _sample_envelope(env: Envelope, dim: int, count: int, rng: np.random.Generator):
    g = rng.standard_normal((count, dim))
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    r = env.radius * rng.random(count) ** (1.0 / dim)
    return env.center[None, :] + g * r[:, None]


@dataclass
class SamplingPass:
    """One rejection-sampling pass over body + z*ball."""

    estimate: VolumeEstimate
    hit_points: np.ndarray
    envelope: Envelope
    z: float


def sample_inflated(body: ConvexBody, z: float, samples: int,
                    rng: np.random.Generator, envelope: Envelope | None = None,
                    batch: int = 65536) -> SamplingPass:
    """Uniform rejection sampling of body + z*ball from an enclosing ball."""
    if samples < 1:
        raise ValueError("samples must be positive")
    env = tight_envelope(body, z) if envelope is None else envelope
    hits = []
    total_hits = 0
    remaining = int(samples)
    while remaining > 0:
        n = min(batch, remaining)
        pts = _sample_envelope(env, body.dim, n, rng)
        mask = inflated_membership(body, z, pts)
        sel = pts[mask]
        total_hits += sel.shape[0]
        if sel.shape[0]:
            hits.append(sel)
        remaining -= n
    frac = total_hits / samples
    value = frac * env.volume(body.dim)
    rel = math.sqrt((1.0 - frac) / total_hits) if total_hits > 0 else math.inf
    est = VolumeEstimate(value=value, samples=int(samples), hits=int(total_hits),
                         rel_std_err=rel)
    pts = np.vstack(hits) if hits else np.zeros((0, body.dim))
    return SamplingPass(estimate=est, hit_points=pts, envelope=env, z=z)


def estimate_volume(body: ConvexBody, z: float, cut=None, samples: int = 50_000,
                    rng: np.random.Generator | None = None,
                    envelope: Envelope | None = None) -> VolumeEstimate:
    """Monte-Carlo estimate of Vol((body + z*ball) ∩ optional halfspace).

    ``cut`` is an optional triple (x, y, side) keeping side*(<x,v> - y) <= 0.
    Unbiased uniform rejection sampling from an enclosing ball; the envelope
    defaults to the tightest of the origin ball and the box circumball.
    Raises DegenerateEstimate when no sample lands in the target region.
    """
    if z < 0:
        raise ValueError("inflation radius must be nonnegative")
    if samples < 1000:
        raise ValueError("samples must be at least 1000")
    if rng is None:
        raise ValueError("an rng is required for reproducibility")
    sp = sample_inflated(body, z, samples, rng, envelope=envelope)
    if cut is None:
        if sp.estimate.hits == 0:
            raise DegenerateEstimate("no hits in %d samples" % samples)
        return sp.estimate
    x, y, side = cut
    x = np.asarray(x, dtype=float)
    keep = side * (sp.hit_points @ x - y) <= 0.0
    hits = int(np.count_nonzero(keep))
    if hits == 0:
        raise DegenerateEstimate("no hits in the cut region at %d samples" % samples)
    frac = hits / sp.estimate.samples
    rel = math.sqrt((1.0 - frac) / hits)
    return VolumeEstimate(value=frac * sp.envelope.volume(body.dim),
                          samples=sp.estimate.samples, hits=hits, rel_std_err=rel)


@dataclass
class MedianCutResult:
    """Quantile cut along a direction plus the sampling pass that produced it."""

    value: float
    fraction: float
    achieved_fraction: float
    stalled: bool
    sampling: SamplingPass


def median_cut_detail(body: ConvexBody, z: float, x, fraction: float,
                      samples: int, rng: np.random.Generator,
                      envelope: Envelope | None = None) -> MedianCutResult:
    """Find y with Vol({v in body+zB : <v,x> <= y}) = fraction * total.

    Binary search over y against the empirical hit fractions of a single
    sampling pass (so the search is deterministic given the rng state).
    Stops at relative tolerance 0.05 or when the interval shrinks below
    1e-12, in which case the last iterate is returned with ``stalled`` set.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    if abs(np.linalg.norm(x) - 1.0) > UNIT_NORM_TOL:
        raise ValueError("direction must be a unit vector")
    sp = sample_inflated(body, z, samples, rng, envelope=envelope)
    if sp.estimate.hits == 0:
        raise DegenerateEstimate("no hits in %d samples" % samples)
    proj = np.sort(sp.hit_points @ x)
    lo = proj[0] - 1e-9
    hi = proj[-1] + 1e-9
    total = proj.size
    y = 0.5 * (lo + hi)
    achieved = np.searchsorted(proj, y, side="right") / total
    stalled = False
    while True:
        y = 0.5 * (lo + hi)
        achieved = np.searchsorted(proj, y, side="right") / total
        if abs(achieved - fraction) <= MEDIAN_REL_TOL * fraction:
            break
        if hi - lo < BISECTION_FLOOR:
            stalled = True
            break
        if achieved < fraction:
            lo = y
        else:
            hi = y
    return MedianCutResult(value=float(y), fraction=fraction,
                           achieved_fraction=float(achieved), stalled=stalled,
                           sampling=sp)


def median_cut(body: ConvexBody, z: float, x, fraction: float,
               samples: int = 50_000, rng: np.random.Generator | None = None) -> float:
    """Quantile cut value; see median_cut_detail."""
    if rng is None:
        raise ValueError("an rng is required for reproducibility")
    return median_cut_detail(body, z, x, fraction, samples, rng).value
