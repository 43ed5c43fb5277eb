"""Losses, feedback channels, adversaries, and the episode harness.

The episode loop is the only place where learner, adversary, loss, and
noise meet: context -> guess -> loss -> feedback -> update, with one
RoundRecord per round and a deterministic split of randomness into
independent per-component streams (so changing the learner never perturbs
the adversary's or the channel's draws).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

TIE_FEEDBACK = +1  # sign reported when the guess exactly equals the value


class EnvironmentError_(Exception):
    pass


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def symmetric_loss(y: float, u: float) -> float:
    return abs(y - u)


def pricing_loss(y: float, u: float) -> float:
    """u - y if the buyer buys (y <= u), the full u otherwise."""
    return u - y if y <= u else u


@dataclass(frozen=True)
class LossFunction:
    """Loss over a totally ordered outcome space.

    kind "symmetric" and "pricing" are the built-ins; "custom" wraps an
    arbitrary callable (used by the axiom battery and finite classes).
    """

    kind: str
    fn: object = None

    def __call__(self, y, u) -> float:
        if self.kind == "symmetric":
            return symmetric_loss(y, u)
        if self.kind == "pricing":
            return pricing_loss(y, u)
        return float(self.fn(y, u))

    @staticmethod
    def symmetric() -> "LossFunction":
        return LossFunction("symmetric")

    @staticmethod
    def pricing() -> "LossFunction":
        return LossFunction("pricing")

    @staticmethod
    def custom(fn) -> "LossFunction":
        return LossFunction("custom", fn)

    @staticmethod
    def power(alpha: float, phi=None) -> "LossFunction":
        """|phi(y1) - phi(y2)|^alpha for increasing phi, alpha <= 1."""
        phi = (lambda t: t) if phi is None else phi
        return LossFunction("custom", lambda a, b: abs(phi(a) - phi(b)) ** alpha)


def loss_axiom_check(loss: LossFunction, sample_count: int = 10_000,
                     rng: np.random.Generator | None = None,
                     domain=(-1.0, 1.0)) -> dict:
    """Sample-based battery for the five loss axioms; report only.

    Checks reflexivity, symmetry, triangle inequality, order consistency,
    and continuity (by bisecting for intermediate loss values) on sampled
    outcome triples.  The pricing loss is expected to fail symmetry; the
    report carries per-axiom violation counts and a witness.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    lo, hi = domain
    report = {name: {"violations": 0, "checks": 0, "witness": None}
              for name in ("reflexive", "symmetry", "triangle",
                           "order_consistency", "continuity")}

    def note(name, bad, witness):
        report[name]["checks"] += 1
        if bad:
            report[name]["violations"] += 1
            if report[name]["witness"] is None:
                report[name]["witness"] = witness

    for _ in range(sample_count):
        y1, y2, y3 = sorted(rng.uniform(lo, hi, size=3))
        note("reflexive", abs(loss(y1, y1)) > 1e-12, (y1,))
        note("symmetry", abs(loss(y1, y2) - loss(y2, y1)) > 1e-12, (y1, y2))
        note("triangle", loss(y1, y3) > loss(y1, y2) + loss(y2, y3) + 1e-12,
             (y1, y2, y3))
        note("order_consistency",
             max(loss(y1, y2), loss(y2, y3)) > loss(y1, y3) + 1e-12,
             (y1, y2, y3))
    # continuity on a smaller sample: find y' with loss(y1, y') = target
    for _ in range(min(sample_count, 300)):
        y1, y2 = sorted(rng.uniform(lo, hi, size=2))
        full = loss(y1, y2)
        if full <= 1e-9:
            continue
        target = full * rng.uniform(0.2, 0.8)
        a, b = y1, y2
        for _ in range(80):
            mid = 0.5 * (a + b)
            if loss(y1, mid) < target:
                a = mid
            else:
                b = mid
        achieved = loss(y1, 0.5 * (a + b))
        note("continuity", abs(achieved - target) > 1e-6 * max(1.0, full),
             (y1, y2, target))
    for name in report:
        report[name]["passes"] = report[name]["violations"] == 0
    return report


# ---------------------------------------------------------------------------
# Feedback
# ---------------------------------------------------------------------------

def true_feedback(y: float, u: float) -> int:
    """+1 if the guess is above the value, -1 below, +1 on a tie."""
    if y > u:
        return +1
    if y < u:
        return -1
    return TIE_FEEDBACK


class FeedbackChannel:
    """Flips the feedback sign independently with probability p."""

    def __init__(self, p: float, rng: np.random.Generator | None = None):
        if not 0.0 <= p < 0.5:
            raise ValueError("flip probability must lie in [0, 1/2)")
        self.p = p
        self.rng = rng
        self.flips = 0
        self.draws = 0

    def bind(self, rng: np.random.Generator) -> "FeedbackChannel":
        fresh = FeedbackChannel(self.p)
        fresh.rng = rng
        return fresh

    def apply(self, sigma: int) -> int:
        self.draws += 1
        if self.p == 0.0:
            return sigma
        if self.rng.random() < self.p:
            self.flips += 1
            return -sigma
        return sigma


# ---------------------------------------------------------------------------
# Hidden functions
# ---------------------------------------------------------------------------

@dataclass
class HiddenFunction:
    """The adversary's secret: a linear vector, a table row, or a callable."""

    kind: str
    vector: np.ndarray | None = None
    table_row: int | None = None
    table: np.ndarray | None = None
    fn: object = None

    @staticmethod
    def linear(v) -> "HiddenFunction":
        return HiddenFunction("linear", vector=np.asarray(v, dtype=float))

    @staticmethod
    def unit_demand(w) -> "HiddenFunction":
        return HiddenFunction("unit_demand", vector=np.asarray(w, dtype=float))

    @staticmethod
    def from_table(table, row: int) -> "HiddenFunction":
        return HiddenFunction("finite_table", table=np.asarray(table, dtype=float),
                              table_row=int(row))

    def value(self, x) -> float:
        if self.kind == "linear":
            return float(self.vector @ np.asarray(x, dtype=float))
        if self.kind == "unit_demand":
            return float(np.max(self.vector * np.asarray(x, dtype=float)))
        if self.kind == "finite_table":
            return float(self.table[self.table_row, int(x)])
        return float(self.fn(x))


# ---------------------------------------------------------------------------
# Adversaries
# ---------------------------------------------------------------------------

class Adversary:
    """Context generator; may also fix the hidden function."""

    name = "adversary"

    def reset(self, dim: int, horizon: int, rng: np.random.Generator) -> None:
        self.dim = dim
        self.horizon = horizon
        self.rng = rng

    def next_context(self, t: int):
        raise NotImplementedError

    def hidden_override(self) -> HiddenFunction | None:
        return None


class RandomUnitAdversary(Adversary):
    name = "random_unit"

    def next_context(self, t: int):
        x = self.rng.standard_normal(self.dim)
        return x / np.linalg.norm(x)


class CyclingBasisAdversary(Adversary):
    name = "cycling_basis"

    def next_context(self, t: int):
        x = np.zeros(self.dim)
        x[(t - 1) % self.dim] = 1.0
        return x


class FixedSequenceAdversary(Adversary):
    """Replays context rows from memory or a CSV file, normalized."""

    name = "fixed_sequence"

    def __init__(self, rows=None, path: str | None = None):
        if rows is None and path is None:
            raise ValueError("provide rows or a csv path")
        if rows is None:
            with open(path, newline="") as fh:
                rows = [[float(c) for c in r] for r in csv.reader(fh) if r]
        self.rows = [np.asarray(r, dtype=float) for r in rows]

    def reset(self, dim, horizon, rng):
        super().reset(dim, horizon, rng)
        for r in self.rows:
            if r.shape[0] != dim:
                raise ValueError("context row dimension mismatch")

    def next_context(self, t: int):
        x = self.rows[(t - 1) % len(self.rows)]
        return x / np.linalg.norm(x)


class SparsePricingAdversary(Adversary):
    """Cyclic permutations of one fixed vector, reshuffled per d-round block.

    The hidden function is a uniformly drawn standard basis vector, the
    hardest instance of the 1-sparse class for pricing feedback.
    """

    name = "sparse_pricing"

    def reset(self, dim, horizon, rng):
        if dim < 2:
            raise ValueError("needs dim >= 2")
        super().reset(dim, horizon, rng)
        base = np.full(dim, 1.0 / math.sqrt(2.0 * (dim - 1)))
        base[0] = 1.0 / math.sqrt(2.0)
        self.base = base
        self._hidden = int(rng.integers(dim))
        self._block: list[int] = []

    def hidden_override(self) -> HiddenFunction:
        v = np.zeros(self.dim)
        v[self._hidden] = 1.0
        return HiddenFunction.linear(v)

    def next_context(self, t: int):
        if not self._block:
            self._block = list(self.rng.permutation(self.dim))
        shift = self._block.pop()
        return np.roll(self.base, shift)


ADVERSARIES = {
    "random_unit": RandomUnitAdversary,
    "cycling_basis": CyclingBasisAdversary,
    "fixed_sequence": FixedSequenceAdversary,
    "sparse_pricing": SparsePricingAdversary,
}


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------

@dataclass
class RoundRecord:
    t: int
    x: object
    y: float
    u: float
    sigma_sent: int
    sigma_recv: int
    loss: float
    scale: object = None
    potential: float = math.nan
    extras: dict = field(default_factory=dict)


CSV_COLUMNS = ["t", "y", "u", "sigma_sent", "sigma_recv", "loss",
               "cum_loss", "scale", "potential"]


@dataclass
class RegretTrace:
    records: list
    aborted: bool = False
    abort_reason: str = ""

    @property
    def cumulative_loss(self) -> float:
        return float(sum(r.loss for r in self.records))

    def cumulative_series(self) -> np.ndarray:
        return np.cumsum([r.loss for r in self.records])

    def write_csv(self, path) -> None:
        cum = 0.0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.records:
                cum += r.loss
                scale = "" if r.scale is None else r.scale
                pot = "" if math.isnan(r.potential) else repr(float(r.potential))
                w.writerow([r.t, repr(float(r.y)), repr(float(r.u)),
                            r.sigma_sent, r.sigma_recv, repr(float(r.loss)),
                            repr(cum), scale, pot])

    def summary(self) -> dict:
        per_scale: dict = {}
        for r in self.records:
            if r.scale is not None:
                per_scale[str(r.scale)] = per_scale.get(str(r.scale), 0) + 1
        return {
            "rounds": len(self.records),
            "total_loss": self.cumulative_loss,
            "per_scale_rounds": dict(sorted(per_scale.items())),
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
        }


# ---------------------------------------------------------------------------
# Episode loop
# ---------------------------------------------------------------------------

def episode_streams(seed: int):
    """Independent child generators: adversary, channel, learner, hidden."""
    ss = np.random.SeedSequence(seed)
    a, c, l, h = ss.spawn(4)
    return (np.random.default_rng(a), np.random.default_rng(c),
            np.random.default_rng(l), np.random.default_rng(h))


def default_hidden(dim: int, rng: np.random.Generator) -> HiddenFunction:
    v = rng.standard_normal(dim)
    v *= rng.random() ** (1.0 / dim) / np.linalg.norm(v)
    return HiddenFunction.linear(v)


def run_episode(learner, adversary: Adversary, loss: LossFunction,
                channel: FeedbackChannel, horizon: int, seed: int,
                dim: int, hidden: HiddenFunction | None = None) -> RegretTrace:
    """T rounds of context -> guess -> loss -> feedback -> update.

    Fully deterministic given the seed.  If a learner operation raises, the
    partial trace is preserved with a diagnostic and the aborted flag set.
    """
    adv_rng, ch_rng, learner_rng, hidden_rng = episode_streams(seed)
    adversary.reset(dim, horizon, adv_rng)
    if hidden is None:
        hidden = adversary.hidden_override() or default_hidden(dim, hidden_rng)
    chan = channel.bind(ch_rng)
    learner.begin(dim, horizon, learner_rng, hidden_hint=None)
    records = []
    for t in range(1, horizon + 1):
        x = adversary.next_context(t)
        try:
            y = learner.propose(x)
            u = hidden.value(x)
            s_sent = true_feedback(y, u)
            s_recv = chan.apply(s_sent)
            lval = loss(y, u)
            if learner.feedback_mode == "full":
                learner.observe_full(x, y, u)
            else:
                learner.observe(x, y, s_recv)
        except Exception as exc:  # noqa: BLE001 - diagnostic abort by contract
            return RegretTrace(records, aborted=True,
                               abort_reason=f"round {t}: {type(exc).__name__}: {exc}")
        info = learner.round_info()
        records.append(RoundRecord(
            t=t, x=x, y=float(y), u=float(u), sigma_sent=s_sent,
            sigma_recv=s_recv, loss=float(lval),
            scale=info.get("scale"), potential=info.get("potential", math.nan),
            extras=info))
    return RegretTrace(records)
