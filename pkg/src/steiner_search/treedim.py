"""Tree dimension of finite hypothesis classes and the full-feedback case.

A finite class is a table of outcome indices over explicit contexts with a
metric on outcomes.  The tree dimension is the maximum guaranteed
root-to-leaf loss of a satisfiable decision tree; it is computed exactly
by memoized recursion over survivor subsets, together with a witness tree
that independent validators can re-check.  The contextual binary-search
learner, the uniform-leaf lower-bound adversary, a greedy covering
estimate, and the binary-vs-full separation fixture complete the toolkit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .environment import Adversary, HiddenFunction
from .learners import Learner


class TreeDimError(Exception):
    pass


class BudgetExceeded(TreeDimError):
    """Exact recursion would expand more states than the configured cap."""


# ---------------------------------------------------------------------------
# Finite classes
# ---------------------------------------------------------------------------

@dataclass
class FiniteClass:
    """Hypotheses as rows of outcome indices over explicit contexts."""

    contexts: list
    outcomes: np.ndarray      # outcome values, shape (nY,)
    table: np.ndarray         # outcome indices, shape (H, X)
    metric: np.ndarray        # loss table, shape (nY, nY)

    def __post_init__(self):
        m = self.metric
        if m.shape[0] != m.shape[1] or m.shape[0] != self.outcomes.shape[0]:
            raise ValueError("metric must be square over the outcomes")
        if np.any(np.abs(np.diag(m)) > 1e-12):
            raise ValueError("metric diagonal must be zero")
        if np.any(np.abs(m - m.T) > 1e-12):
            raise ValueError("metric must be symmetric")
        if np.any(m < -1e-12):
            raise ValueError("metric must be nonnegative")
        n = m.shape[0]
        for k in range(n):
            if np.any(m > m[:, k][:, None] + m[k, :][None, :] + 1e-9):
                raise ValueError("metric violates the triangle inequality")

    @property
    def num_hypotheses(self) -> int:
        return self.table.shape[0]

    @property
    def num_contexts(self) -> int:
        return self.table.shape[1]

    def value(self, h: int, x: int) -> float:
        return float(self.outcomes[self.table[h, x]])

    def values_at(self, x: int) -> np.ndarray:
        return self.outcomes[self.table[:, x]]

    def loss_between(self, yi: int, yj: int) -> float:
        return float(self.metric[yi, yj])

    def distance_matrix(self) -> np.ndarray:
        """Pairwise d_infinity distances: max over contexts of the metric."""
        H = self.num_hypotheses
        out = np.zeros((H, H))
        for x in range(self.num_contexts):
            idx = self.table[:, x]
            out = np.maximum(out, self.metric[np.ix_(idx, idx)])
        return out

    @staticmethod
    def from_values(values, contexts=None, metric_fn=None) -> "FiniteClass":
        """Build from raw outcome values (H x X); default metric |y1 - y2|."""
        values = np.asarray(values, dtype=float)
        outcomes, inverse = np.unique(values, return_inverse=True)
        table = inverse.reshape(values.shape)
        if metric_fn is None:
            metric = np.abs(outcomes[:, None] - outcomes[None, :])
        else:
            metric = np.array([[metric_fn(a, b) for b in outcomes] for a in outcomes],
                              dtype=float)
        ctx = list(range(values.shape[1])) if contexts is None else list(contexts)
        return FiniteClass(ctx, outcomes, table, metric)

    @staticmethod
    def from_json(doc) -> "FiniteClass":
        """Shared finite-table JSON: {"contexts": [...], "hypotheses": [[...]]}."""
        import json

        if isinstance(doc, (str, bytes)):
            with open(doc) as fh:
                doc = json.load(fh)
        return FiniteClass.from_values(doc["hypotheses"], contexts=doc["contexts"])


# ---------------------------------------------------------------------------
# Labeled trees
# ---------------------------------------------------------------------------

@dataclass
class TreeNode:
    """Interior node (x, y1, y2) or a leaf labeled with a hypothesis."""

    x: int | None = None
    y1: int | None = None
    y2: int | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    leaf: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.leaf is not None


def tree_cost(node: TreeNode, fc: FiniteClass) -> float:
    """Guaranteed cost: min over leaves of the root-to-leaf loss sum."""
    if node.is_leaf:
        return 0.0
    step = fc.loss_between(node.y1, node.y2)
    return step + min(tree_cost(node.left, fc), tree_cost(node.right, fc))


def validate_tree(node: TreeNode, fc: FiniteClass) -> bool:
    """Check structural and satisfiability invariants of a witness tree."""

    def leaves_ok(nd, constraints):
        if nd.is_leaf:
            return all(fc.table[nd.leaf, x] == y for x, y in constraints)
        if nd.left is None or nd.right is None:
            return False
        return (leaves_ok(nd.left, constraints + [(nd.x, nd.y1)])
                and leaves_ok(nd.right, constraints + [(nd.x, nd.y2)]))

    return leaves_ok(node, [])


def tree_depth(node: TreeNode) -> int:
    if node.is_leaf:
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def pad_tree_uniform(node: TreeNode, fc: FiniteClass, depth: int) -> TreeNode:
    """Pad leaves with (x, y, y) nodes so every leaf sits at the same depth.

    Padding adds zero-loss nodes, so the guaranteed cost is unchanged.
    """
    if depth == 0:
        return node
    if node.is_leaf:
        h = node.leaf
        y = int(fc.table[h, 0])
        child = pad_tree_uniform(TreeNode(leaf=h), fc, depth - 1)
        return TreeNode(x=0, y1=y, y2=y, left=child,
                        right=pad_tree_uniform(TreeNode(leaf=h), fc, depth - 1))
    return TreeNode(x=node.x, y1=node.y1, y2=node.y2,
                    left=pad_tree_uniform(node.left, fc, depth - 1),
                    right=pad_tree_uniform(node.right, fc, depth - 1))


# ---------------------------------------------------------------------------
# Tree dimension
# ---------------------------------------------------------------------------

class _TreeDimSolver:
    def __init__(self, fc: FiniteClass, budget: int):
        self.fc = fc
        self.budget = budget
        self.expansions = 0
        self.memo: dict = {}

    def solve(self, subset: frozenset) -> float:
        if subset in self.memo:
            return self.memo[subset][0]
        if len(subset) <= 1:
            self.memo[subset] = (0.0, None)
            return 0.0
        self.expansions += 1
        if self.expansions > self.budget:
            raise BudgetExceeded(f"more than {self.budget} state expansions")
        members = sorted(subset)
        best = 0.0
        best_split = None
        for x in range(self.fc.num_contexts):
            groups: dict[int, list] = {}
            for h in members:
                groups.setdefault(int(self.fc.table[h, x]), []).append(h)
            keys = sorted(groups)
            for a in range(len(keys)):
                for b in range(a + 1, len(keys)):
                    y1, y2 = keys[a], keys[b]
                    step = self.fc.loss_between(y1, y2)
                    s1 = frozenset(groups[y1])
                    s2 = frozenset(groups[y2])
                    val = step + min(self.solve(s1), self.solve(s2))
                    if val > best:
                        best = val
                        best_split = (x, y1, y2, s1, s2)
        self.memo[subset] = (best, best_split)
        return best

    def witness(self, subset: frozenset) -> TreeNode:
        _, split = self.memo[subset]
        if split is None:
            return TreeNode(leaf=min(subset))
        x, y1, y2, s1, s2 = split
        return TreeNode(x=x, y1=y1, y2=y2,
                        left=self.witness(s1), right=self.witness(s2))


def tree_dimension(fc: FiniteClass, subset=None,
                   budget: int = 10_000) -> tuple[float, TreeNode]:
    """Exact tree dimension and a witness tree achieving it.

    tau(S) = max over splits (x, y1, y2) with both restrictions nonempty of
    loss(y1, y2) + min(tau at each restriction), memoized over survivor
    subsets; singletons have tau 0.
    """
    if fc.num_hypotheses < 1:
        raise ValueError("class must contain at least one hypothesis")
    solver = _TreeDimSolver(fc, budget)
    full = frozenset(range(fc.num_hypotheses)) if subset is None else frozenset(subset)
    tau = solver.solve(full)
    return tau, solver.witness(full)


def tree_dimension_of(fc: FiniteClass, subset, solver_cache: dict | None = None,
                      budget: int = 200_000) -> float:
    """Tree dimension of a survivor subset with a shareable memo table."""
    if solver_cache is not None and "solver" in solver_cache:
        solver = solver_cache["solver"]
    else:
        solver = _TreeDimSolver(fc, budget)
        if solver_cache is not None:
            solver_cache["solver"] = solver
    return solver.solve(frozenset(subset))


# ---------------------------------------------------------------------------
# Contextual binary search (full feedback)
# ---------------------------------------------------------------------------

class ContextualBinarySearchLearner(Learner):
    """Guess a value whose restriction keeps the tree dimension maximal.

    Candidates are the values realized by survivors at the context; the
    learner picks, among restrictions of maximum tree dimension (smallest
    epsilon with a nonempty candidate set), the lowest value.  Full
    feedback then restricts the survivors to the exact value.  The
    per-round potential-drop inequality tau(S') <= tau(S) - loss is checked
    as a runtime assertion.
    """

    name = "cbs"
    feedback_mode = "full"

    def __init__(self, fc: FiniteClass, budget: int = 200_000,
                 check_drop: bool = True):
        self.fc = fc
        self.budget = budget
        self.check_drop = check_drop

    def begin(self, dim, horizon, rng, hidden_hint=None):
        self.rng = rng
        self.survivors = frozenset(range(self.fc.num_hypotheses))
        self._solver = _TreeDimSolver(self.fc, self.budget)
        self.total_loss = 0.0
        self._info = {}

    def _tau(self, subset) -> float:
        return self._solver.solve(frozenset(subset))

    def propose(self, x) -> float:
        x = int(x)
        tau_now = self._tau(self.survivors)
        groups: dict[int, list] = {}
        for h in sorted(self.survivors):
            groups.setdefault(int(self.fc.table[h, x]), []).append(h)
        best_tau = -math.inf
        best_y = None
        for y_idx in sorted(groups, key=lambda k: self.fc.outcomes[k]):
            t = self._tau(groups[y_idx])
            if t > best_tau + 1e-12:
                best_tau = t
                best_y = y_idx
        self._pending = (x, tau_now)
        self._info = {"scale": None, "tau": tau_now,
                      "epsilon": tau_now - best_tau,
                      "potential": tau_now}
        return float(self.fc.outcomes[best_y])

    def observe_full(self, x, y, u):
        x = int(x)
        vals = self.fc.values_at(x)
        keep = [h for h in self.survivors if abs(vals[h] - u) <= 1e-12]
        if not keep:
            raise TreeDimError("feedback value matches no survivor")
        self.survivors = frozenset(keep)
        _, tau_before = self._pending
        tau_after = self._tau(self.survivors)
        loss = abs(float(y) - float(u))
        self.total_loss += loss
        self._info["tau_after"] = tau_after
        self._info["drop_ok"] = tau_after <= tau_before - loss + 1e-9
        if self.check_drop and not self._info["drop_ok"]:
            raise TreeDimError(
                f"potential drop violated: {tau_after} > {tau_before} - {loss}")

    def observe(self, x, y, sigma):
        raise TreeDimError("contextual binary search needs full feedback")


# ---------------------------------------------------------------------------
# Lower-bound adversary
# ---------------------------------------------------------------------------

class TreeLowerBoundAdversary(Adversary):
    """Presents root-to-leaf contexts of a uniformly drawn leaf.

    The input tree is padded with zero-loss nodes to uniform depth, so a
    fair coin at every interior node draws a uniformly random leaf; the
    hidden hypothesis is that leaf's label.
    """

    name = "tree_lower_bound"

    def __init__(self, fc: FiniteClass, tree: TreeNode):
        self.fc = fc
        depth = tree_depth(tree)
        self.tree = _pad_to_depth(tree, fc, depth)
        self.depth = depth

    def reset(self, dim, horizon, rng):
        super().reset(dim, horizon, rng)
        node = self.tree
        path = []
        while not node.is_leaf:
            path.append(node.x)
            node = node.left if rng.random() < 0.5 else node.right
        self.path = path
        self.leaf = node.leaf

    def hidden_override(self) -> HiddenFunction:
        values = self.fc.outcomes[self.fc.table]
        return HiddenFunction.from_table(values, self.leaf)

    def next_context(self, t: int):
        return self.path[(t - 1) % max(len(self.path), 1)]


def _pad_to_depth(node: TreeNode, fc: FiniteClass, target: int) -> TreeNode:
    if node.is_leaf:
        if target == 0:
            return node
        h = node.leaf
        y = int(fc.table[h, 0])
        return TreeNode(x=0, y1=y, y2=y,
                        left=_pad_to_depth(TreeNode(leaf=h), fc, target - 1),
                        right=_pad_to_depth(TreeNode(leaf=h), fc, target - 1))
    return TreeNode(x=node.x, y1=node.y1, y2=node.y2,
                    left=_pad_to_depth(node.left, fc, target - 1),
                    right=_pad_to_depth(node.right, fc, target - 1))


# ---------------------------------------------------------------------------
# Covering-dimension estimate
# ---------------------------------------------------------------------------

def cdim_estimate(fc: FiniteClass, eps_grid=(0.5, 0.25, 0.125)) -> float:
    """Greedy-cover upper estimate of the covering dimension.

    For each scale, a greedy set cover with d_infinity balls upper-bounds
    the covering number within a log factor; the estimate is the maximum of
    log(cover size) / log(1/eps) over the grid.
    """
    dm = fc.distance_matrix()
    H = fc.num_hypotheses
    best = 0.0
    for eps in eps_grid:
        if not 0 < eps < 1:
            raise ValueError("eps grid entries must lie in (0, 1)")
        covered = np.zeros(H, dtype=bool)
        cover = 0
        within = dm <= eps + 1e-12
        while not covered.all():
            gains = within[:, ~covered].sum(axis=1)
            pick = int(np.argmax(gains))
            covered |= within[pick]
            cover += 1
        if cover > 1:
            best = max(best, math.log(cover) / math.log(1.0 / eps))
    return best


# ---------------------------------------------------------------------------
# Separation fixture
# ---------------------------------------------------------------------------

def separation_fixture(n: int, rng: np.random.Generator,
                       sample_factor: int = 10) -> FiniteClass:
    """Random sample of step functions with outputs perturbed apart.

    Hypotheses map [n] to {0, 1/n, ..., (n-1)/n}; each sampled hypothesis
    k gets a distinct perturbation (k+1)*delta with delta small enough that
    all perturbations stay below 1/n^3, so no two hypotheses agree at any
    context.  Symmetric loss.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    count = sample_factor * n
    delta = 1.0 / (n**3 * (count + 2))
    base = rng.integers(0, n, size=(count, n)).astype(float) / n
    values = base + (np.arange(1, count + 1)[:, None]) * delta
    fc = FiniteClass.from_values(values)
    return fc
