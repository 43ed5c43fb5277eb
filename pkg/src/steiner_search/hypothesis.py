"""Hypothesis classes, epsilon-nets, and the multi-scale net ladder.

Four class kinds are supported: explicit finite tables, linear functions
over the unit ball, s-sparse linear functions, and unit-demand maxima.
Nets are grid discretizations with an alive mask; margin filters kill
members that contradict feedback beyond the net's scale and never
resurrect them.

The ScaleLadder maintains one margin-filtered net per scale plus coarse
companion nets used by the small-loss instrumentation.  Full grids at fine
scales are astronomically large for interesting classes, so deeper scales
are instantiated lazily: a new net is gridded only over a neighborhood of
the currently alive region (wide enough that the member nearest the hidden
hypothesis is always included) and then filtered through the stored
feedback history before use.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

NET_MEMBER_CAP = 5_000_000
LADDER_SCALE_FLOOR = 1e-12


class HypothesisError(Exception):
    pass


class NetTooLarge(HypothesisError):
    """Predicted net cardinality exceeds the configured cap."""


class EmptyNet(HypothesisError):
    """Operation requires at least one alive member."""


# ---------------------------------------------------------------------------
# Hypothesis classes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HypothesisClass:
    """A family of functions from contexts to reals.

    kind: one of "finite_table", "linear", "sparse_linear", "unit_demand".
    linear/sparse members are parameter vectors in the unit ball; contexts
    are unit vectors.  unit_demand members live in [0,1]^d with binary
    contexts.  finite_table contexts are integer indices into the table.
    """

    kind: str
    dim: int
    sparsity: int = 0
    table: np.ndarray | None = None

    @staticmethod
    def linear(dim: int) -> "HypothesisClass":
        return HypothesisClass("linear", dim)

    @staticmethod
    def sparse_linear(dim: int, s: int) -> "HypothesisClass":
        if not 1 <= s <= dim:
            raise ValueError("sparsity must lie in [1, dim]")
        return HypothesisClass("sparse_linear", dim, sparsity=s)

    @staticmethod
    def unit_demand(dim: int) -> "HypothesisClass":
        return HypothesisClass("unit_demand", dim)

    @staticmethod
    def finite_table(table) -> "HypothesisClass":
        table = np.asarray(table, dtype=float)
        if table.ndim != 2:
            raise ValueError("finite table must be hypotheses x contexts")
        return HypothesisClass("finite_table", table.shape[1], table=table)

    @property
    def num_hypotheses(self):
        return None if self.table is None else self.table.shape[0]

    def nominal_cover_dim(self) -> int:
        """Rough covering-dimension proxy used to seed ladder scales."""
        if self.kind == "finite_table":
            return max(1, math.ceil(math.log2(max(self.table.shape[0], 2))))
        if self.kind == "sparse_linear":
            return self.sparsity * max(1, math.ceil(math.log2(max(self.dim, 2))))
        return self.dim

    def random_member(self, rng: np.random.Generator):
        if self.kind == "finite_table":
            return int(rng.integers(self.table.shape[0]))
        if self.kind == "unit_demand":
            return rng.random(self.dim)
        v = rng.standard_normal(self.dim)
        v *= rng.random() ** (1.0 / self.dim) / np.linalg.norm(v)
        if self.kind == "sparse_linear":
            keep = rng.choice(self.dim, size=self.sparsity, replace=False)
            w = np.zeros(self.dim)
            w[keep] = v[: self.sparsity]
            return w
        return v

    def random_context(self, rng: np.random.Generator):
        if self.kind == "finite_table":
            return int(rng.integers(self.dim))
        if self.kind == "unit_demand":
            x = rng.integers(0, 2, size=self.dim).astype(float)
            if not x.any():
                x[int(rng.integers(self.dim))] = 1.0
            return x
        x = rng.standard_normal(self.dim)
        return x / np.linalg.norm(x)

    def evaluate(self, member, x):
        """Value of one hypothesis at one context."""
        if self.kind == "finite_table":
            return float(self.table[int(member), int(x)])
        member = np.asarray(member, dtype=float)
        if self.kind == "unit_demand":
            return float(np.max(member * np.asarray(x, dtype=float)))
        return float(member @ np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# Member storage and evaluation
# ---------------------------------------------------------------------------

@dataclass
class MemberSet:
    """Vectorized storage of net members for one class kind."""

    kind: str
    dim: int
    dense: np.ndarray | None = None          # (n, d) for linear / unit_demand
    supports: np.ndarray | None = None       # (n, s) int32, -1 padded (sparse)
    coords: np.ndarray | None = None         # (n, s) float (sparse)
    indices: np.ndarray | None = None        # (n,) table rows (finite)
    table: np.ndarray | None = None

    @property
    def count(self) -> int:
        for arr in (self.dense, self.coords, self.indices):
            if arr is not None:
                return arr.shape[0]
        return 0

    def values(self, x, idx=None) -> np.ndarray:
        """Member values at context x, optionally restricted to idx."""
        if self.kind == "finite_table":
            rows = self.indices if idx is None else self.indices[idx]
            return self.table[rows, int(x)]
        x = np.asarray(x, dtype=float)
        if self.kind == "sparse_linear":
            sup = self.supports if idx is None else self.supports[idx]
            co = self.coords if idx is None else self.coords[idx]
            xv = np.where(sup >= 0, x[np.maximum(sup, 0)], 0.0)
            return np.einsum("ns,ns->n", co, xv)
        dense = self.dense if idx is None else self.dense[idx]
        if self.kind == "unit_demand":
            return np.max(dense * x[None, :], axis=1)
        return dense @ x

    def to_dense(self, idx=None) -> np.ndarray:
        """Parameter vectors as a dense (n, d) array (not for finite tables)."""
        if self.kind == "finite_table":
            rows = self.indices if idx is None else self.indices[idx]
            return self.table[rows]
        if self.kind == "sparse_linear":
            sup = self.supports if idx is None else self.supports[idx]
            co = self.coords if idx is None else self.coords[idx]
            out = np.zeros((sup.shape[0], self.dim))
            rows = np.repeat(np.arange(sup.shape[0]), sup.shape[1])
            mask = sup.ravel() >= 0
            out[rows[mask], sup.ravel()[mask]] = co.ravel()[mask]
            return out
        dense = self.dense if idx is None else self.dense[idx]
        return dense.copy()


# ---------------------------------------------------------------------------
# Net construction
# ---------------------------------------------------------------------------

def _grid_range(lo, hi, spacing):
    k_lo = math.ceil(lo / spacing - 1e-12)
    k_hi = math.floor(hi / spacing + 1e-12)
    return k_lo, k_hi


def _predict_linear_count(dim, eps, box_lo, box_hi):
    g = eps / math.sqrt(dim)
    total = 1
    for j in range(dim):
        k_lo, k_hi = _grid_range(box_lo[j], box_hi[j], g)
        total *= max(0, k_hi - k_lo + 1)
        if total > 100 * NET_MEMBER_CAP:
            return total
    return total


def _linear_grid(dim, eps, box_lo, box_hi, radius=1.0):
    """Grid of spacing eps/sqrt(dim) inside the ball, restricted to a box."""
    g = eps / math.sqrt(dim)
    axes = []
    for j in range(dim):
        k_lo, k_hi = _grid_range(max(box_lo[j], -radius), min(box_hi[j], radius), g)
        axes.append(np.arange(k_lo, k_hi + 1) * g)
    if any(a.size == 0 for a in axes):
        return np.zeros((0, dim))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return pts[np.linalg.norm(pts, axis=1) <= radius + 1e-12]


def _sparse_support_count(support, eps, boxes, s_total) -> int:
    """Grid-point count bound for one support without materializing it."""
    g = eps / math.sqrt(max(s_total, 1))
    total = 1
    for j in support:
        lo, hi = boxes.get(j, (-1.0, 1.0)) if boxes else (-1.0, 1.0)
        k_lo, k_hi = _grid_range(max(lo, -1.0), min(hi, 1.0), g)
        total *= max(0, k_hi - k_lo + 1)
        if total > 1 << 62:
            return total
    return total


def _sparse_support_grid(support, eps, boxes, s_total, cap=None):
    """Grid for one support, all coordinates nonzero, inside the unit ball.

    boxes maps coordinate index -> (lo, hi) restriction; None means [-1, 1].
    """
    k = len(support)
    if cap is not None and _sparse_support_count(support, eps, boxes, s_total) > cap:
        raise NetTooLarge("support grid exceeds the member cap")
    g = eps / math.sqrt(max(s_total, 1))
    axes = []
    for j in support:
        lo, hi = boxes.get(j, (-1.0, 1.0)) if boxes else (-1.0, 1.0)
        k_lo, k_hi = _grid_range(max(lo, -1.0), min(hi, 1.0), g)
        vals = np.arange(k_lo, k_hi + 1) * g
        vals = vals[np.abs(vals) > 1e-15]
        axes.append(vals)
    if any(a.size == 0 for a in axes):
        return np.zeros((0, k))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return pts[np.linalg.norm(pts, axis=1) <= 1.0 + 1e-12]


@dataclass
class HypothesisNet:
    """A finite net of a hypothesis class at one scale with survivors."""

    hclass: HypothesisClass
    scale: float
    members: MemberSet
    alive: np.ndarray

    @property
    def size(self) -> int:
        return self.members.count

    @property
    def alive_count(self) -> int:
        return int(np.count_nonzero(self.alive))

    def alive_indices(self) -> np.ndarray:
        return np.flatnonzero(self.alive)

    def alive_values(self, x) -> np.ndarray:
        return self.members.values(x, idx=self.alive_indices())


def build_net(hclass: HypothesisClass, eps: float, rng=None,
              cap: int = NET_MEMBER_CAP) -> HypothesisNet:
    """Construct the grid net of a class at scale eps, all members alive.

    linear / sparse_linear use grids of spacing eps/sqrt(effective dim)
    over the unit ball (per-support grids for the sparse case), unit_demand
    uses the lattice {eps * k}, and a finite table is its own net at every
    scale.  Raises NetTooLarge when the predicted cardinality exceeds cap.
    """
    if not 0.0 < eps <= 1.0 and hclass.kind != "finite_table":
        raise ValueError("net scale must lie in (0, 1]")
    d = hclass.dim
    if hclass.kind == "finite_table":
        n = hclass.table.shape[0]
        members = MemberSet("finite_table", d, indices=np.arange(n), table=hclass.table)
        return HypothesisNet(hclass, eps, members, np.ones(n, dtype=bool))
    if hclass.kind == "unit_demand":
        steps = math.floor(1.0 / eps) + 1
        if steps**d > cap:
            raise NetTooLarge(f"unit-demand net would have {steps**d} members")
        axes = [np.arange(steps) * eps] * d
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        members = MemberSet("unit_demand", d, dense=pts)
        return HypothesisNet(hclass, eps, members, np.ones(pts.shape[0], dtype=bool))
    if hclass.kind == "linear":
        lo, hi = np.full(d, -1.0), np.full(d, 1.0)
        if _predict_linear_count(d, eps, lo, hi) > cap:
            raise NetTooLarge(f"linear net at eps={eps} exceeds the {cap} member cap")
        pts = _linear_grid(d, eps, lo, hi)
        members = MemberSet("linear", d, dense=pts)
        return HypothesisNet(hclass, eps, members, np.ones(pts.shape[0], dtype=bool))
    # sparse_linear: union of per-support grids over all supports of size <= s
    s = hclass.sparsity
    g = eps / math.sqrt(s)
    per_axis = 2 * math.floor(1.0 / g) + 1
    predicted = sum(math.comb(d, k) * per_axis**k for k in range(1, s + 1)) + 1
    if predicted > cap:
        raise NetTooLarge(f"sparse net at eps={eps} predicts {predicted} members")
    sup_list, coord_list = [np.full((1, s), -1, dtype=np.int32)], [np.zeros((1, s))]
    for k in range(1, s + 1):
        for support in itertools.combinations(range(d), k):
            pts = _sparse_support_grid(support, eps, {}, s)
            if pts.shape[0] == 0:
                continue
            sup = np.full((pts.shape[0], s), -1, dtype=np.int32)
            sup[:, :k] = np.asarray(support, dtype=np.int32)
            co = np.zeros((pts.shape[0], s))
            co[:, :k] = pts
            sup_list.append(sup)
            coord_list.append(co)
    members = MemberSet("sparse_linear", d,
                        supports=np.vstack(sup_list), coords=np.vstack(coord_list))
    return HypothesisNet(hclass, eps, members, np.ones(members.count, dtype=bool))


# ---------------------------------------------------------------------------
# Net operations
# ---------------------------------------------------------------------------

def filter_net(net: HypothesisNet, x, y: float, sigma: int, margin: float) -> HypothesisNet:
    """Kill every alive member with sigma*(y - f(x)) < -margin."""
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    idx = net.alive_indices()
    if idx.size == 0:
        return net
    vals = net.members.values(x, idx=idx)
    dead = sigma * (y - vals) < -margin
    if not dead.any():
        return net
    alive = net.alive.copy()
    alive[idx[dead]] = False
    return replace(net, alive=alive)


def set_width(net: HypothesisNet, x) -> float:
    """max - min of f(x) over alive members."""
    idx = net.alive_indices()
    if idx.size == 0:
        raise EmptyNet("no alive members")
    vals = net.members.values(x, idx=idx)
    return float(vals.max() - vals.min())


def set_median(net: HypothesisNet, x, weights=None) -> float:
    """Lower median of alive values; weighted version takes the smallest
    value whose cumulative mass reaches 1/2."""
    idx = net.alive_indices()
    if idx.size == 0:
        raise EmptyNet("no alive members")
    vals = net.members.values(x, idx=idx)
    if weights is None:
        srt = np.sort(vals)
        return float(srt[math.ceil(srt.size / 2) - 1])
    w = np.asarray(weights, dtype=float)
    if w.shape[0] != net.size:
        raise ValueError("weights must cover every member")
    w = w[idx]
    total = w.sum()
    if total <= 0:
        raise EmptyNet("total weight is zero")
    order = np.argsort(vals, kind="stable")
    cum = np.cumsum(w[order]) / total
    pos = int(np.searchsorted(cum, 0.5 - 1e-12))
    return float(vals[order[min(pos, order.size - 1)]])


# ---------------------------------------------------------------------------
# Finite-table JSON interface
# ---------------------------------------------------------------------------

def load_finite_table(source) -> tuple[HypothesisClass, list]:
    """Load {"contexts": [...], "hypotheses": [[values per context]]}.

    Accepts a path or an already-parsed dict; returns (class, context labels).
    """
    if isinstance(source, (str, bytes)):
        with open(source) as fh:
            doc = json.load(fh)
    else:
        doc = source
    contexts = doc["contexts"]
    table = np.asarray(doc["hypotheses"], dtype=float)
    if table.shape[1] != len(contexts):
        raise ValueError("hypothesis rows must match the context count")
    return HypothesisClass.finite_table(table), contexts


# ---------------------------------------------------------------------------
# Scale ladder with lazy refinement
# ---------------------------------------------------------------------------

@dataclass
class LadderScale:
    z: float
    net: HypothesisNet


class ScaleLadder:
    """Decreasing margin scales with per-scale nets plus coarse companions.

    Scales follow z_i = 3^{-D(i+1)} for the configured ladder dimension D,
    clamped to what is actually constructible: the first net must grid the
    whole class under the member cap, and finer nets are lazily gridded
    over a neighborhood of the alive region once the width bucket asks for
    them.  Every maintained net is filtered at its own margin each round;
    lazily added nets are filtered through the stored history first, so
    their alive sets are exactly what eager maintenance would have kept
    (restricted to the covered region).
    """

    def __init__(self, hclass: HypothesisClass, ladder_dim: int | None = None,
                 cap: int = NET_MEMBER_CAP, build_target: int | None = None,
                 scale_floor: float = LADDER_SCALE_FLOOR):
        self.hclass = hclass
        self.ladder_dim = hclass.nominal_cover_dim() if ladder_dim is None else ladder_dim
        self.cap = cap
        self.build_target = build_target or max(200_000, cap // 8)
        self.scale_floor = scale_floor
        self.history: list[tuple] = []
        self.scales: list[LadderScale] = []
        self.coarse: dict[int, HypothesisNet] = {}
        z0 = self._coarsest_buildable(self.formula_z(0))
        self.scales.append(LadderScale(z0, build_net(hclass, z0, cap=cap)))

    # -- scale bookkeeping ---------------------------------------------------

    def formula_z(self, i: int) -> float:
        return max(3.0 ** (-self.ladder_dim * (i + 1)), self.scale_floor)

    def _coarsest_buildable(self, z_want: float) -> float:
        if self.hclass.kind == "finite_table":
            return max(z_want, self.scale_floor)
        z = max(z_want, self.scale_floor)
        for _ in range(80):
            try:
                if self._predict_full(z) <= self.build_target:
                    return min(z, 1.0)
            except OverflowError:
                pass
            z *= 1.6
            if z > 1.0:
                return 1.0
        return 1.0

    def _predict_full(self, eps: float) -> int:
        h = self.hclass
        if h.kind == "finite_table":
            return h.table.shape[0]
        if h.kind == "unit_demand":
            return (math.floor(1.0 / eps) + 1) ** h.dim
        if h.kind == "linear":
            return _predict_linear_count(h.dim, eps, np.full(h.dim, -1.0), np.full(h.dim, 1.0))
        g = eps / math.sqrt(h.sparsity)
        per_axis = 2 * math.floor(1.0 / g) + 1
        return sum(math.comb(h.dim, k) * per_axis**k for k in range(1, h.sparsity + 1)) + 1

    @property
    def finest(self) -> HypothesisNet:
        return self.scales[-1].net

    @property
    def finest_scale(self) -> float:
        return self.scales[-1].z

    def net_for_bucket(self, i: int) -> tuple[HypothesisNet, float]:
        """Net whose scale best matches bucket i (clamped to the ladder)."""
        z_want = self.formula_z(i)
        for sc in self.scales:
            if sc.z <= z_want * (1 + 1e-12):
                return sc.net, sc.z
        return self.finest, self.finest_scale

    # -- feedback ------------------------------------------------------------

    def observe(self, x, y: float, sigma: int) -> None:
        """Record one feedback round and filter every maintained net."""
        self.history.append((x, float(y), int(sigma)))
        for sc in self.scales:
            sc.net = filter_net(sc.net, x, y, sigma, sc.z)
        for i, net in self.coarse.items():
            self.coarse[i] = filter_net(net, x, y, sigma, net.scale)

    # -- lazy construction ---------------------------------------------------

    def _alive_boxes(self, pad: float):
        """Per-coordinate [lo, hi] hull of alive finest members, padded."""
        net = self.finest
        idx = net.alive_indices()
        if idx.size == 0:
            return None
        dense = net.members.to_dense(idx=idx)
        lo = dense.min(axis=0) - pad
        hi = dense.max(axis=0) + pad
        return lo, hi

    def _alive_sparse_groups(self) -> dict | None:
        """Alive finest members grouped by support: key -> (n, k) coords."""
        net = self.finest
        idx = net.alive_indices()
        if idx.size == 0:
            return None
        sup_all = net.members.supports[idx]
        co_all = net.members.coords[idx]
        groups: dict[tuple, list] = {}
        for row_sup, row_co in zip(sup_all, co_all):
            key = tuple(int(j) for j in row_sup if j >= 0)
            groups.setdefault(key, []).append(row_co[: len(key)])
        return {k: np.asarray(v) for k, v in groups.items()}

    def _restricted_count(self, eps: float, pad: float) -> int | None:
        """Predicted member count of a restricted net, without building it."""
        h = self.hclass
        if h.kind in ("linear", "unit_demand"):
            box = self._alive_boxes(pad)
            if box is None:
                return None
            lo, hi = box
            if h.kind == "linear":
                return _predict_linear_count(h.dim, eps, lo, hi)
            total = 1
            for j in range(h.dim):
                k_lo, k_hi = _grid_range(max(lo[j], 0.0), min(hi[j], 1.0), eps)
                total *= max(0, k_hi - k_lo + 1)
                if total > 1 << 62:
                    return total
            return total
        groups = self._alive_sparse_groups()
        if groups is None:
            return None
        total = 1
        for key, arr in groups.items():
            if len(key) == 0:
                continue
            boxes = {j: (arr[:, a].min() - pad, arr[:, a].max() + pad)
                     for a, j in enumerate(key)}
            total += _sparse_support_count(key, eps, boxes, h.sparsity)
            if total > 1 << 62:
                return total
        return total

    def _replay(self, members: MemberSet, margin: float) -> np.ndarray:
        """Alive mask after filtering members through the whole history.

        Rounds that cannot kill anything in the candidate box (by interval
        arithmetic on f(x) over the box hull) are skipped.
        """
        n = members.count
        alive = np.ones(n, dtype=bool)
        if not self.history or n == 0:
            return alive
        dense = members.to_dense()
        lo = dense.min(axis=0)
        hi = dense.max(axis=0)
        for (x, y, sigma) in self.history:
            if members.kind in ("linear", "sparse_linear"):
                xv = np.asarray(x, dtype=float)
                vlo = float(np.sum(np.where(xv >= 0, lo * xv, hi * xv)))
                vhi = float(np.sum(np.where(xv >= 0, hi * xv, lo * xv)))
            elif members.kind == "unit_demand":
                xv = np.asarray(x, dtype=float)
                vlo = float(np.max(lo * xv))
                vhi = float(np.max(hi * xv))
            else:
                vlo, vhi = -math.inf, math.inf
            # sigma*(y - f) >= -margin must fail somewhere in the box to bind
            worst = sigma * (y - (vhi if sigma > 0 else vlo))
            if worst >= -margin:
                continue
            idx = np.flatnonzero(alive)
            vals = members.values(x, idx=idx)
            dead = sigma * (y - vals) < -margin
            alive[idx[dead]] = False
        return alive

    def _restricted_members(self, eps: float, pad: float) -> MemberSet | None:
        h = self.hclass
        if h.kind == "finite_table":
            return None
        if h.kind in ("linear", "unit_demand"):
            box = self._alive_boxes(pad)
            if box is None:
                return None
            lo, hi = box
            if h.kind == "linear":
                if _predict_linear_count(h.dim, eps, lo, hi) > self.cap:
                    return None
                pts = _linear_grid(h.dim, eps, lo, hi)
                return MemberSet("linear", h.dim, dense=pts)
            g = eps
            count = 1
            for j in range(h.dim):
                k_lo, k_hi = _grid_range(max(lo[j], 0.0), min(hi[j], 1.0), g)
                count *= max(0, k_hi - k_lo + 1)
            if count > self.cap or count == 0:
                return None
            axes = []
            for j in range(h.dim):
                k_lo, k_hi = _grid_range(max(lo[j], 0.0), min(hi[j], 1.0), g)
                axes.append(np.arange(k_lo, k_hi + 1) * g)
            mesh = np.meshgrid(*axes, indexing="ij")
            pts = np.stack([m.ravel() for m in mesh], axis=1)
            return MemberSet("unit_demand", h.dim, dense=pts)
        # sparse: per-support boxes around alive members of that support
        groups = self._alive_sparse_groups()
        if groups is None:
            return None
        s = h.sparsity
        sup_list, coord_list = [], []
        total = 0
        for key, arr in groups.items():
            if len(key) == 0:
                sup_list.append(np.full((1, s), -1, dtype=np.int32))
                coord_list.append(np.zeros((1, s)))
                total += 1
                continue
            boxes = {j: (arr[:, a].min() - pad, arr[:, a].max() + pad)
                     for a, j in enumerate(key)}
            try:
                pts = _sparse_support_grid(key, eps, boxes, s, cap=self.cap)
            except NetTooLarge:
                return None
            total += pts.shape[0]
            if total > self.cap:
                return None
            if pts.shape[0] == 0:
                continue
            sup = np.full((pts.shape[0], s), -1, dtype=np.int32)
            sup[:, : len(key)] = np.asarray(key, dtype=np.int32)
            co = np.zeros((pts.shape[0], s))
            co[:, : len(key)] = pts
            sup_list.append(sup)
            coord_list.append(co)
        if not sup_list:
            return None
        return MemberSet("sparse_linear", h.dim,
                         supports=np.vstack(sup_list), coords=np.vstack(coord_list))

    def maybe_refine(self, bucket: int) -> bool:
        """Extend the ladder toward the bucket's formula scale if feasible.

        The new net covers everything within (z_prev + z_new) of an alive
        finest member, which in noiseless runs always includes the net
        point nearest the hidden hypothesis: its nearest finest-net member
        survives the z_prev-margin filter, and the two are within
        z_prev + z_new of each other.
        """
        if self.hclass.kind == "finite_table":
            return False
        z_prev = self.finest_scale
        z_want = max(self.formula_z(bucket), self.scale_floor)
        if z_want >= z_prev * 0.75:
            return False
        if self.finest.alive_count == 0:
            return False
        z = max(z_want, self.scale_floor)
        found = False
        for _ in range(80):
            pad = z_prev + 2.0 * z
            count = self._restricted_count(z, pad)
            if count is None:
                return False
            if count <= self.build_target:
                found = True
                break
            z *= 2.0
            if z >= z_prev * 0.75:
                return False
        if not found:
            return False
        members = self._restricted_members(z, z_prev + 2.0 * z)
        if members is None:
            return False
        alive = self._replay(members, z)
        net = HypothesisNet(self.hclass, z, members, alive)
        self.scales.append(LadderScale(z, net))
        return True

    def ensure_coarse(self, i: int) -> HypothesisNet:
        """Companion net at scale r_i = 2^{-i}, built on first use."""
        if i in self.coarse:
            return self.coarse[i]
        r = 2.0 ** (-i)
        if self.hclass.kind == "finite_table":
            net = build_net(self.hclass, r, cap=self.cap)
            net = replace(net, alive=self._replay(net.members, r))
        else:
            try:
                full_ok = self._predict_full(r) <= self.build_target
            except OverflowError:
                full_ok = False
            if full_ok:
                net = build_net(self.hclass, r, cap=self.cap)
                net = replace(net, alive=self._replay(net.members, r))
            else:
                pad = 1.5 * r + self.finest_scale
                count = self._restricted_count(r, pad)
                members = (self._restricted_members(r, pad)
                           if count is not None and count <= self.cap else None)
                if members is None:
                    members = MemberSet(self.hclass.kind, self.hclass.dim,
                                        dense=np.zeros((0, self.hclass.dim)))
                net = HypothesisNet(self.hclass, r, members, self._replay(members, r))
        self.coarse[i] = net
        return net
