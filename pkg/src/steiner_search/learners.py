"""Learner state machines: volume-potential searchers over convex bodies,
net-based searchers for general hypothesis classes, and the noisy
multiplicative-weights variants.

Every learner exposes begin / propose / observe plus round_info(), a dict
of per-round instrumentation (chosen scale, margins, medians, volume
ratios, survivor counts) that the episode harness copies into the trace.
Lemma-level checks classify rounds post hoc from those extras together
with the true value recorded by the environment, so no learner ever reads
the hidden function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from . import hypothesis as hyp

WEIGHT_NORM_TOL = 1e-9


class LearnerError(Exception):
    pass


class GridTooFine(LearnerError):
    """The weight-field grid would exceed the configured cell cap."""


# ---------------------------------------------------------------------------
# Weight fields
# ---------------------------------------------------------------------------

class WeightField:
    """Normalized nonnegative weights over a finite carrier.

    Multiplicative updates never zero out an entry; the field renormalizes
    after every update and checks the normalization invariant.
    """

    def __init__(self, size: int):
        self.w = np.full(size, 1.0 / size)

    @property
    def size(self) -> int:
        return self.w.size

    def multiply(self, mask, factor_in: float, factor_out: float) -> None:
        if factor_in <= 0 or factor_out <= 0:
            raise ValueError("multiplicative factors must stay positive")
        self.w = np.where(mask, self.w * factor_in, self.w * factor_out)
        total = self.w.sum()
        if total <= 0:
            raise LearnerError("weight field collapsed")
        self.w /= total
        if abs(self.w.sum() - 1.0) > WEIGHT_NORM_TOL:
            raise LearnerError("weight normalization drifted")


# ---------------------------------------------------------------------------
# Scale index arithmetic
# ---------------------------------------------------------------------------

def symmetric_scale_index(w: float, i_max: int = 40) -> int:
    """Largest i >= -1 with w <= 2^-i (i = -1 covers widths above 1)."""
    if w <= 0:
        return i_max
    i = math.floor(-math.log2(w) + 1e-12)
    return max(-1, min(i, i_max))


def pricing_scale_index(w: float, i_max: int = 10) -> int:
    """Largest i >= 0 with w <= 2^-2^i, clamped to 0 when w > 1/2."""
    if w >= 0.5:
        return 0
    if w <= 0:
        return i_max
    e = -math.log2(w)  # > 1
    i = math.floor(math.log2(e) + 1e-12)
    return max(0, min(i, i_max))


def bucket_index(w: float, i_max: int = 60) -> int:
    """Largest i >= 0 with w <= 10 * 2^-i."""
    if w <= 0:
        return i_max
    i = math.floor(math.log2(10.0 / w) + 1e-12)
    return max(0, min(i, i_max))


# ---------------------------------------------------------------------------
# Base class
# ---------------------------------------------------------------------------

class Learner:
    feedback_mode = "binary"
    name = "learner"

    def begin(self, dim: int, horizon: int, rng: np.random.Generator,
              hidden_hint=None) -> None:
        raise NotImplementedError

    def propose(self, x) -> float:
        raise NotImplementedError

    def observe(self, x, y: float, sigma: int) -> None:
        raise NotImplementedError

    def observe_full(self, x, y: float, u: float) -> None:
        raise NotImplementedError("binary-feedback learner")

    def round_info(self) -> dict:
        return dict(self._info)


# ---------------------------------------------------------------------------
# Volume-potential machinery shared by the convex-body learners
# ---------------------------------------------------------------------------

@dataclass
class _PendingPass:
    z: float
    envelope: geo.Envelope
    hit_points: np.ndarray
    pre_value: float
    pre_hits: int
    samples: int


class _ConvexBodyLearner(Learner):
    """Common body bookkeeping: sampling with escalation, tight envelopes,
    interior-hint maintenance, and paired pre/post potential estimates."""

    # Below this support width the consistent set is a point at float64
    # resolution: membership tolerances would swamp the scale margins, so
    # the learner reports the midpoint and stops cutting.
    WIDTH_FLOOR = 2e-5

    def __init__(self, mc_samples: int = 50_000, min_hits: int = 2048,
                 escalation_rounds: int = 2, perturbed: bool = False,
                 box_refresh_every: int = 16, store_hits_cap: int = 32_768):
        self.mc_samples = int(mc_samples)
        self.min_hits = int(min_hits)
        self.escalation_rounds = int(escalation_rounds)
        self.perturbed = bool(perturbed)
        self.box_refresh_every = int(box_refresh_every)
        self.store_hits_cap = int(store_hits_cap)

    def _converged_guess(self, x, w: float):
        lo, hi = geo.support_interval(self.body, x)
        self._pending = None
        self._info = {"scale": "converged", "z": 0.0, "width": w,
                      "median": 0.5 * (lo + hi), "delta": 0.0,
                      "cum_delta": self.cum_delta, "degenerate_fallback": False,
                      "potential": math.nan}
        return 0.5 * (lo + hi)

    def begin(self, dim, horizon, rng, hidden_hint=None):
        self.dim = dim
        self.horizon = horizon
        self.rng = rng
        radius = 1.0 + horizon**-4.0 if self.perturbed else 1.0
        self.body = geo.ConvexBody(dim, ball_radius=radius)
        self.round = 0
        self.cum_delta = 0.0
        self.last_hit_rate = 1.0
        self.degenerate_mode = False
        self._pending: _PendingPass | None = None
        self._last_median = 0.0
        self._info = {}

    # -- sampling ------------------------------------------------------------

    def _sample(self, z: float):
        """Escalating rejection-sampling pass; None when MC-starved."""
        if self.degenerate_mode and self.round % 16 != 1:
            return None
        samples = self.mc_samples
        env = geo.tight_envelope(self.body, z)
        points = []
        hits = 0
        total = 0
        for _ in range(self.escalation_rounds + 1):
            sp = geo.sample_inflated(self.body, z, samples, self.rng, envelope=env)
            points.append(sp.hit_points)
            hits += sp.estimate.hits
            total += sp.estimate.samples
            if hits >= self.min_hits:
                break
            samples *= 4
        self.last_hit_rate = hits / total
        if hits == 0:
            self.degenerate_mode = True
            return None
        self.degenerate_mode = hits < max(32, self.min_hits // 16)
        value = hits / total * env.volume(self.dim)
        pts = np.vstack([p for p in points if p.shape[0]])
        if pts.shape[0] > self.store_hits_cap:
            pts = pts[: self.store_hits_cap]
        return _PendingPass(z=z, envelope=env, hit_points=pts,
                            pre_value=value, pre_hits=hits, samples=total)

    def _quantile_cut(self, pending: _PendingPass, x, fraction: float) -> float:
        proj = np.sort(pending.hit_points @ np.asarray(x, dtype=float))
        lo = proj[0] - 1e-9
        hi = proj[-1] + 1e-9
        total = proj.size
        while True:
            y = 0.5 * (lo + hi)
            achieved = np.searchsorted(proj, y, side="right") / total
            if abs(achieved - fraction) <= geo.MEDIAN_REL_TOL * fraction:
                return float(y)
            if hi - lo < geo.BISECTION_FLOOR:
                return float(y)
            if achieved < fraction:
                lo = y
            else:
                hi = y

    def _maybe_refresh_box(self):
        if self.body.num_cuts and (
                self.round % self.box_refresh_every == 0 or self.last_hit_rate < 0.25):
            self.body = geo.refresh_box(self.body)

    def _perturb(self, y: float) -> tuple[float, float]:
        if not self.perturbed:
            return y, 0.0
        delta = float(self.rng.uniform(0.0, self.horizon**-2.0))
        self.cum_delta += delta
        return y - delta, delta

    def _absorb_cut(self, x, y, sigma):
        """Add the feedback cut and compute the paired potential ratio."""
        new_body = geo.add_cut(self.body, x, y, sigma)
        post_hits = None
        ratio = None
        pending = self._pending
        if pending is not None and pending.hit_points.shape[0]:
            mask = geo.inflated_membership(new_body, pending.z, pending.hit_points)
            post_hits = int(mask.sum())
            stored = pending.hit_points.shape[0]
            ratio = post_hits / stored
            inside = pending.hit_points[mask]
            if inside.shape[0]:
                interior = inside[_contains_batch(new_body, inside)]
                if interior.shape[0]:
                    new_body = new_body.replace_hint(interior.mean(axis=0))
        if new_body.interior_hint is None and self.body.interior_hint is not None:
            hint = self.body.interior_hint
            try:
                new_body = new_body.replace_hint(geo.project(new_body, hint))
            except geo.NonConvergence:
                pass
        self.body = new_body
        return ratio, post_hits


def _contains_batch(body: geo.ConvexBody, pts: np.ndarray) -> np.ndarray:
    ok = np.linalg.norm(pts, axis=1) <= body.ball_radius + 1e-12
    if body.num_cuts:
        ok &= np.all(pts @ body.normals.T <= body.offsets[None, :] + 1e-12, axis=1)
    return ok


class SteinerSymmetricLearner(_ConvexBodyLearner):
    """Width-bucketed median cuts of the inflated consistent set.

    Each round: pick the scale from the width along the context, cut the
    z-inflated body at its volume median, and keep the half consistent with
    feedback.  The paired pre/post inflated-volume estimates feed the
    three-quarters drop check.
    """

    name = "steiner_symmetric"

    def propose(self, x) -> float:
        self.round += 1
        self._maybe_refresh_box()
        w = geo.width(self.body, x)
        if w <= self.WIDTH_FLOOR:
            return float(self._converged_guess(x, w))
        i = symmetric_scale_index(w)
        z = 2.0 ** (-i) / (8.0 * self.dim)
        pending = self._sample(z)
        fallback = False
        if pending is None:
            lo, hi = geo.support_interval(self.body, x)
            y = 0.5 * (lo + hi)
            fallback = True
        else:
            y = self._quantile_cut(pending, x, 0.5)
        self._pending = pending
        y, delta = self._perturb(y)
        self._info = {
            "scale": i, "z": z, "width": w, "median": y + delta,
            "delta": delta, "cum_delta": self.cum_delta,
            "degenerate_fallback": fallback,
            "potential": pending.pre_value if pending else math.nan,
            "pre_volume": pending.pre_value if pending else math.nan,
            "mc_samples": pending.samples if pending else 0,
        }
        return float(y)

    def observe(self, x, y, sigma):
        if self._info.get("scale") == "converged":
            return
        ratio, post_hits = self._absorb_cut(x, y, sigma)
        self._info["volume_ratio"] = ratio
        self._info["post_hits"] = post_hits
        self._pending = None


class SteinerPricingLearner(_ConvexBodyLearner):
    """Conservative pricing variant: cut far below the median quantile.

    Doubly exponential width buckets; at bucket i the cut sits at the
    2^-2^(i-1) volume quantile minus the scale margin, so a no-purchase
    event slashes the inflated volume by that quantile while a purchase
    still trims a guaranteed sliver.  Below width 1/T it bids the support
    minimum outright.
    """

    name = "steiner_pricing"

    def propose(self, x) -> float:
        self.round += 1
        self._maybe_refresh_box()
        w = geo.width(self.body, x)
        self._pending = None
        if w <= max(1.0 / self.horizon, self.WIDTH_FLOOR):
            lo, _ = geo.support_interval(self.body, x)
            self._info = {"scale": "min", "z": 0.0, "width": w, "median": lo,
                          "delta": 0.0, "cum_delta": self.cum_delta,
                          "degenerate_fallback": False, "potential": math.nan}
            y, delta = self._perturb(lo)
            self._info["delta"] = delta
            return float(y)
        i = pricing_scale_index(w)
        z = 2.0 ** (-3.0 * 2.0**i) / (16.0 * self.dim)
        fraction = 2.0 ** (-(2.0 ** (i - 1)))
        pending = self._sample(z)
        fallback = False
        if pending is None:
            lo, _ = geo.support_interval(self.body, x)
            m = lo + z
            fallback = True
        else:
            m = self._quantile_cut(pending, x, fraction)
        self._pending = pending
        y = m - z
        y, delta = self._perturb(y)
        self._info = {
            "scale": i, "z": z, "width": w, "median": m, "fraction": fraction,
            "delta": delta, "cum_delta": self.cum_delta,
            "degenerate_fallback": fallback,
            "potential": pending.pre_value if pending else math.nan,
            "pre_volume": pending.pre_value if pending else math.nan,
            "mc_samples": pending.samples if pending else 0,
        }
        return float(y)

    def observe(self, x, y, sigma):
        ratio, post_hits = self._absorb_cut(x, y, sigma)
        self._info["volume_ratio"] = ratio
        self._info["post_hits"] = post_hits
        self._info["purchase"] = sigma < 0
        self._pending = None


class ExactMedianLearner(_ConvexBodyLearner):
    """Baseline: median of the uninflated consistent set (no regularizer)."""

    name = "exact_median"

    def propose(self, x) -> float:
        self.round += 1
        self._maybe_refresh_box()
        w = geo.width(self.body, x)
        if w <= self.WIDTH_FLOOR:
            return float(self._converged_guess(x, w))
        pending = self._sample(0.0)
        if pending is None:
            lo, hi = geo.support_interval(self.body, x)
            y = 0.5 * (lo + hi)
            fallback = True
        else:
            y = self._quantile_cut(pending, x, 0.5)
            fallback = False
        self._pending = pending
        self._info = {"scale": 0, "z": 0.0, "degenerate_fallback": fallback,
                      "potential": pending.pre_value if pending else math.nan}
        return float(y)

    def observe(self, x, y, sigma):
        if self._info.get("scale") == "converged":
            return
        ratio, _ = self._absorb_cut(x, y, sigma)
        self._info["volume_ratio"] = ratio
        self._pending = None


class MidpointLearner(_ConvexBodyLearner):
    """Baseline: midpoint of the support interval along the context."""

    name = "midpoint"

    def propose(self, x) -> float:
        self.round += 1
        self._maybe_refresh_box()
        w = geo.width(self.body, x)
        if w <= self.WIDTH_FLOOR:
            return float(self._converged_guess(x, w))
        lo, hi = geo.support_interval(self.body, x)
        self._info = {"scale": 0, "z": 0.0, "width": hi - lo, "potential": math.nan}
        return 0.5 * (lo + hi)

    def observe(self, x, y, sigma):
        if self._info.get("scale") == "converged":
            return
        self._pending = None
        self._absorb_cut(x, y, sigma)


# ---------------------------------------------------------------------------
# Net-based learners
# ---------------------------------------------------------------------------

class SingleScaleLearner(Learner):
    """Median of the surviving net members, nudged 2/T to a random side.

    Feedback filters at margin 1/T, so a guess on the far side of the true
    value from the median halves the survivors with probability 1/2.
    """

    name = "single_scale"

    def __init__(self, hclass: hyp.HypothesisClass, net_epsilon: float | None = None):
        self.hclass = hclass
        self.net_epsilon = net_epsilon

    def begin(self, dim, horizon, rng, hidden_hint=None):
        self.horizon = horizon
        self.rng = rng
        eps = self.net_epsilon if self.net_epsilon is not None else 1.0 / horizon
        self.net = hyp.build_net(self.hclass, eps)
        self._last_median = 0.0
        self._info = {}

    def propose(self, x) -> float:
        try:
            m = hyp.set_median(self.net, x)
            empty = False
        except hyp.EmptyNet:
            m = self._last_median
            empty = True
        self._last_median = m
        sign = 1 if self.rng.random() < 0.5 else -1
        y = m + sign * 2.0 / self.horizon
        self._info = {"scale": 0, "median": m, "sign": sign,
                      "alive_before": self.net.alive_count,
                      "empty_fallback": empty, "potential": float(self.net.alive_count)}
        return float(y)

    def observe(self, x, y, sigma):
        if self.net.alive_count:
            self.net = hyp.filter_net(self.net, x, y, sigma, 1.0 / self.horizon)
        after = self.net.alive_count
        before = self._info["alive_before"]
        self._info["alive_after"] = after
        self._info["halved"] = after * 2 <= before
        self._info["potential"] = float(after)


class MultiScaleLearner(Learner):
    """Bucketed-width net searcher with margin ladder and coarse companions.

    The width of the finest maintained net picks the bucket; the guess is
    the bucket-scale net's median nudged 2z to a random side.  Feedback
    filters every maintained net at its own margin.  Instrumented counters
    expose survivor counts of the bucket net and of the coarse companion at
    half the bucket width, which the checks turn into the halving and
    single-elimination lemma frequencies.
    """

    name = "multi_scale"

    def __init__(self, hclass: hyp.HypothesisClass, ladder_dim: int | None = None,
                 build_target: int | None = None, refine: bool = True):
        self.hclass = hclass
        self.ladder_dim = ladder_dim
        self.build_target = build_target
        self.refine = refine

    def begin(self, dim, horizon, rng, hidden_hint=None):
        self.horizon = horizon
        self.rng = rng
        kwargs = {}
        if self.build_target is not None:
            kwargs["build_target"] = self.build_target
        self.ladder = hyp.ScaleLadder(self.hclass, ladder_dim=self.ladder_dim, **kwargs)
        self._last_median = 0.0
        self._info = {}

    def _working_net(self):
        if self.ladder.finest.alive_count:
            return self.ladder.finest
        for sc in self.ladder.scales:
            if sc.net.alive_count:
                return sc.net
        return None

    def propose(self, x) -> float:
        net = self._working_net()
        if net is None:
            self._info = {"scale": None, "empty_fallback": True,
                          "median": self._last_median, "potential": 0.0}
            return float(self._last_median)
        w = hyp.set_width(net, x)
        if w <= 1e-15:
            vals = net.alive_values(x)
            y = float(vals[0])
            self._last_median = y
            self._info = {"scale": "exact", "width": w, "median": y, "z": 0.0,
                          "empty_fallback": False,
                          "potential": float(net.alive_count)}
            self._coarse_tracked = None
            self._chosen = None
            return y
        i = bucket_index(w)
        if self.refine:
            self.ladder.maybe_refine(i)
        znet, z = self.ladder.net_for_bucket(i)
        if znet.alive_count == 0:
            znet, z = net, net.scale
        coarse = self.ladder.ensure_coarse(i + 1)
        m = hyp.set_median(znet, x)
        self._last_median = m
        sign = 1 if self.rng.random() < 0.5 else -1
        y = m + sign * 2.0 * z
        self._chosen = (i, z)
        self._coarse_tracked = (i + 1, coarse)
        self._info = {
            "scale": i, "z": z, "width": w, "median": m, "sign": sign,
            "empty_fallback": False,
            "alive_before": znet.alive_count,
            "coarse_r": 2.0 ** (-(i + 1)),
            "coarse_before": coarse.alive_count,
            "lemma_valid": 2.0 * z <= 2.0 ** (-(i + 2)),
            "potential": float(znet.alive_count),
        }
        return float(y)

    def observe(self, x, y, sigma):
        self.ladder.observe(x, y, sigma)
        if getattr(self, "_chosen", None) is not None:
            _, z = self._chosen
            znet = next((sc.net for sc in self.ladder.scales if sc.z == z),
                        self.ladder.finest)
            self._info["alive_after"] = znet.alive_count
            before = self._info.get("alive_before", 0)
            self._info["halved"] = znet.alive_count * 2 <= before
        if getattr(self, "_coarse_tracked", None) is not None:
            ci, _ = self._coarse_tracked
            coarse = self.ladder.coarse[ci]
            self._info["coarse_after"] = coarse.alive_count
            self._info["coarse_eliminated"] = (
                self._info.get("coarse_before", 0) - coarse.alive_count)


class NoisySingleScaleLearner(Learner):
    """Multiplicative weights over a net under p-flipped binary feedback.

    Guesses a uniform perturbation of the weighted median and downweights
    the side of the carrier that the (possibly flipped) feedback speaks
    against, by p' versus 1 - p'.
    """

    name = "noisy_single_scale"

    def __init__(self, hclass: hyp.HypothesisClass, pprime: float,
                 net_epsilon: float | None = None):
        if not 0.0 < pprime < 0.5:
            raise ValueError("p' must lie in (0, 1/2)")
        self.hclass = hclass
        self.pprime = pprime
        self.net_epsilon = net_epsilon

    def begin(self, dim, horizon, rng, hidden_hint=None):
        self.horizon = horizon
        self.rng = rng
        eps = self.net_epsilon if self.net_epsilon is not None else horizon**-2.0
        self.net = hyp.build_net(self.hclass, eps)
        self.weights = WeightField(self.net.size)
        self._info = {}

    def propose(self, x) -> float:
        m = hyp.set_median(self.net, x, weights=self.weights.w)
        y = m + float(self.rng.uniform(-1.0, 1.0)) / self.horizon
        self._info = {"scale": 0, "median": m,
                      "potential": float(self.weights.w.max())}
        return float(y)

    def observe(self, x, y, sigma):
        vals = self.net.members.values(x)
        wrong = sigma * (y - vals) < 0
        self.weights.multiply(wrong, self.pprime, 1.0 - self.pprime)
        self._info["max_weight"] = float(self.weights.w.max())


class NoisyLinearGridLearner(Learner):
    """Scale-laddered weight fields over a grid of the unit ball.

    One weight field per scale; the working scale is the largest whose
    field concentrates on a thin strip along the context (or whose
    predecessor exhausted its round counter), the guess is that field's
    weighted median plus a uniform perturbation, and the working scale and
    its successor get a (1 - eta) penalty on feedback-violating cells.
    """

    name = "noisy_linear"

    def __init__(self, constants: str = "empirical", cell_side: float | None = None,
                 max_scales: int = 8, cell_cap: int = 400_000):
        if constants not in ("paper", "empirical"):
            raise ValueError("constants mode must be 'paper' or 'empirical'")
        self.constants = constants
        self.cell_side = cell_side
        self.max_scales = max_scales
        self.cell_cap = cell_cap

    def begin(self, dim, horizon, rng, hidden_hint=None):
        if dim > 3:
            raise LearnerError("grid mode supports d <= 3")
        self.dim = dim
        self.horizon = horizon
        self.rng = rng
        side = self.cell_side or (0.02 if dim <= 2 else 0.08)
        axes = [np.arange(-1.0 + side / 2, 1.0, side)] * dim
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        if pts.shape[0] > self.cell_cap:
            raise GridTooFine(f"{pts.shape[0]} cells exceed the cap")
        self.cells = pts[np.linalg.norm(pts, axis=1) <= 1.0]
        n = self.cells.shape[0]
        self.fields = [WeightField(n) for _ in range(self.max_scales + 2)]
        self.counters = np.zeros(self.max_scales + 2, dtype=int)
        d = dim
        if self.constants == "paper":
            self.eta = 1.0 / (2.0 * d**10)
            self.beta = lambda i: 2.0 ** (-100.0 * d * i)
            self.counter_cap = lambda i: 100.0 * (d**4 * i / (2.0 ** (-i)) ** (10 * d)
                                                  + d**25 * i)
        else:
            self.eta = 0.1
            self.beta = lambda i: (2.0**-i) / 16.0
            self.counter_cap = lambda i: min(1e4, 100.0 * (d**4 * i / (2.0 ** (-i)) ** (10 * d)
                                                           + d**25 * i))
        self._info = {}

    def gamma(self, i: int) -> float:
        return 2.0**-i

    def _strip_condition(self, i: int, proj_sorted, w_sorted_cum) -> bool:
        """Is 1 - gamma_i^{4d} of w_i's mass inside a strip of width 10*gamma_i?"""
        need = 1.0 - self.gamma(i) ** (4 * self.dim)
        width_cap = 10.0 * self.gamma(i)
        total = w_sorted_cum[-1]
        lo = np.searchsorted(proj_sorted, proj_sorted - width_cap, side="left")
        below = np.where(lo > 0, w_sorted_cum[lo - 1], 0.0)
        best = float(np.max(w_sorted_cum - below))
        return best >= need * total - 1e-15

    def propose(self, x) -> float:
        x = np.asarray(x, dtype=float)
        proj = self.cells @ x
        order = np.argsort(proj, kind="stable")
        proj_sorted = proj[order]
        i_t = 1
        for i in range(self.max_scales, 1, -1):
            cum = np.cumsum(self.fields[i].w[order])
            if self._strip_condition(i, proj_sorted, cum):
                i_t = i
                break
            if self.counters[i - 1] > self.counter_cap(i - 1):
                i_t = i
                break
        cum = np.cumsum(self.fields[i_t].w[order])
        pos = int(np.searchsorted(cum, 0.5 - 1e-12))
        y = float(proj_sorted[min(pos, len(proj_sorted) - 1)])
        b = self.beta(i_t)
        delta = float(self.rng.uniform(-2.0 * b, 2.0 * b))
        self._i_t = i_t
        self._proj = proj
        self._info = {"scale": i_t, "median": y, "delta": delta,
                      "beta": b, "counter": int(self.counters[i_t]),
                      "potential": float(self.fields[i_t].w.max())}
        return y + delta

    def observe(self, x, y, sigma):
        proj = self._proj
        wrong = sigma * (y - proj) < 0
        for i in (self._i_t, self._i_t + 1):
            if i < len(self.fields):
                self.fields[i].multiply(wrong, 1.0 - self.eta, 1.0)
        self.counters[self._i_t] += 1


# ---------------------------------------------------------------------------
# Exact expectation identities (instrumentation oracles)
# ---------------------------------------------------------------------------

def noisy_weight_update(w: np.ndarray, wrong_mask: np.ndarray, pprime: float) -> np.ndarray:
    """One multiplicative update of the general noisy learner, normalized."""
    out = np.where(wrong_mask, pprime * w, (1.0 - pprime) * w)
    return out / out.sum()


def weight_increase_constant(p: float, pprime: float) -> float:
    """c = (p' - p) [ (1-p')/p' - p'/(1-p') ]."""
    return (pprime - p) * ((1.0 - pprime) / pprime - pprime / (1.0 - pprime))


def reciprocal_weight_expectation(w: np.ndarray, idx: int, x_vals: np.ndarray,
                                  y: float, sigma_true: int, p: float,
                                  pprime: float) -> tuple[float, float]:
    """E[1/w'(f_idx)] by two-branch enumeration vs the closed form.

    Valid when f_idx sits on the true side of y (same side as the hidden
    hypothesis): returns (enum1, formula) where formula is
    (1 - c * W_minus) / w(f_idx) with W_minus the mass on the other side.
    """
    w = np.asarray(w, dtype=float)
    w = w / w.sum()
    clean = noisy_weight_update(w, sigma_true * (y - x_vals) < 0, pprime)
    flipped = noisy_weight_update(w, -sigma_true * (y - x_vals) < 0, pprime)
    enum = (1.0 - p) / clean[idx] + p / flipped[idx]
    same_side = sigma_true * (y - x_vals[idx]) > 0
    if not same_side:
        raise ValueError("identity requires f on the hidden side of y")
    w_minus = float(np.sum(w[sigma_true * (y - x_vals) < 0]))
    formula = (1.0 - weight_increase_constant(p, pprime) * w_minus) / w[idx]
    return float(enum), float(formula)


def grid_weight_update(w: np.ndarray, wrong_mask: np.ndarray, eta: float) -> np.ndarray:
    """One (1 - eta) penalty update of the grid learner, normalized."""
    out = np.where(wrong_mask, (1.0 - eta) * w, w)
    return out / out.sum()


def grid_reciprocal_expectation(w: np.ndarray, idx: int, proj: np.ndarray,
                                y_hat: float, sigma_true: int,
                                eta: float, p: float = 1.0 / 3.0):
    """E[1/w'(q_idx)] for the grid update, exact mixture and its bound.

    The hidden point's side defines the clean feedback; X is the mass on
    the opposite side.  Returns (enum, mixture, bound) where mixture is the
    closed-form two-branch average and bound is (1 - eta X / 10) / w(q).
    """
    w = np.asarray(w, dtype=float)
    w = w / w.sum()
    clean_wrong = sigma_true * (y_hat - proj) < 0
    flip_wrong = -sigma_true * (y_hat - proj) < 0
    clean = grid_weight_update(w, clean_wrong, eta)
    flipped = grid_weight_update(w, flip_wrong, eta)
    enum = (1.0 - p) / clean[idx] + p / flipped[idx]
    if clean_wrong[idx]:
        raise ValueError("identity requires q on the hidden side of y")
    X = float(np.sum(w[clean_wrong]))
    mixture = (1.0 - eta * X * ((1.0 - p) - p / (1.0 - eta))) / w[idx]
    bound = (1.0 - 0.1 * eta * X) / w[idx]
    return float(enum), float(mixture), float(bound)


LEARNERS = {
    "steiner_symmetric": SteinerSymmetricLearner,
    "steiner_pricing": SteinerPricingLearner,
    "exact_median": ExactMedianLearner,
    "midpoint": MidpointLearner,
    "single_scale": SingleScaleLearner,
    "multi_scale": MultiScaleLearner,
    "noisy_single_scale": NoisySingleScaleLearner,
    "noisy_linear": NoisyLinearGridLearner,
}
