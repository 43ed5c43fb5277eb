"""Seeded experiment runner and invariant check suites.

``steiner-search`` runs an episode grid (learner x adversary x loss x
noise) and writes one trace CSV per seed plus a deterministic aggregate
summary, or executes one of the invariant batteries with --check.  Exit
codes: 0 all assertions pass, 1 invariant violation, 2 configuration
error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import environment as env
from . import geometry as geo
from . import hypothesis as hyp
from . import learners as lrn
from . import treedim as tdm


class ConfigError(Exception):
    pass


LEARNER_CHOICES = sorted(lrn.LEARNERS) + ["cbs"]
ADVERSARY_CHOICES = sorted(env.ADVERSARIES) + ["tree_lower_bound"]
LOSS_CHOICES = ["symmetric", "pricing"]
CHECK_SUITES = ["geometry", "lemmas", "noisy_identities", "treedim", "all"]


@dataclass
class ExperimentConfig:
    learner: str = "steiner_symmetric"
    adversary: str = "random_unit"
    loss: str = "symmetric"
    d: int = 2
    T: int = 100
    p: float = 0.0
    pprime: float = 1.0 / 3.0
    seeds: list = field(default_factory=lambda: [0])
    mc_samples: int = 50_000
    out: str = "runs"
    snapshot_cadence: int = 1
    emit_plot_script: bool = False
    perturbed: bool = False
    constants: str = "empirical"
    net_epsilon: float | None = None
    hclass: dict = field(default_factory=dict)
    adversary_params: dict = field(default_factory=dict)
    hidden: dict | None = None

    def validate(self) -> None:
        if self.learner not in LEARNER_CHOICES:
            raise ConfigError(f"unknown learner {self.learner!r}")
        if self.adversary not in ADVERSARY_CHOICES:
            raise ConfigError(f"unknown adversary {self.adversary!r}")
        if self.loss not in LOSS_CHOICES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.d < 1 or self.T < 0:
            raise ConfigError("d must be >= 1 and T >= 0")
        if not 0.0 <= self.p < 0.5:
            raise ConfigError("p must lie in [0, 1/2)")
        if self.learner in ("noisy_single_scale", "noisy_linear"):
            if not self.p < self.pprime < 0.5:
                raise ConfigError("noisy learners need p < p' < 1/2")
        if not self.seeds:
            raise ConfigError("at least one seed required")
        if self.mc_samples < 1000:
            raise ConfigError("mc_samples must be at least 1000")


def parse_seeds(spec: str) -> list:
    if ".." in spec:
        a, b = spec.split("..", 1)
        return list(range(int(a), int(b) + 1))
    return [int(s) for s in spec.split(",")]


def _hypothesis_class(cfg: ExperimentConfig) -> hyp.HypothesisClass:
    spec = dict(cfg.hclass)
    kind = spec.get("kind", "linear")
    if kind == "linear":
        return hyp.HypothesisClass.linear(cfg.d)
    if kind == "sparse_linear":
        return hyp.HypothesisClass.sparse_linear(cfg.d, int(spec.get("s", 1)))
    if kind == "unit_demand":
        return hyp.HypothesisClass.unit_demand(cfg.d)
    if kind == "finite_table":
        if "path" in spec:
            hclass, _ = hyp.load_finite_table(spec["path"])
            return hclass
        return hyp.HypothesisClass.finite_table(np.asarray(spec["table"], dtype=float))
    raise ConfigError(f"unknown hypothesis class kind {kind!r}")


def make_learner(cfg: ExperimentConfig):
    name = cfg.learner
    if name in ("steiner_symmetric", "steiner_pricing", "exact_median", "midpoint"):
        cls = lrn.LEARNERS[name]
        return cls(mc_samples=cfg.mc_samples, perturbed=cfg.perturbed)
    if name == "single_scale":
        return lrn.SingleScaleLearner(_hypothesis_class(cfg), net_epsilon=cfg.net_epsilon)
    if name == "multi_scale":
        return lrn.MultiScaleLearner(_hypothesis_class(cfg))
    if name == "noisy_single_scale":
        return lrn.NoisySingleScaleLearner(_hypothesis_class(cfg), pprime=cfg.pprime,
                                           net_epsilon=cfg.net_epsilon)
    if name == "noisy_linear":
        return lrn.NoisyLinearGridLearner(constants=cfg.constants)
    if name == "cbs":
        spec = dict(cfg.hclass)
        if spec.get("kind") != "finite_table":
            raise ConfigError("cbs requires a finite_table hypothesis class")
        fc = (tdm.FiniteClass.from_json(spec["path"]) if "path" in spec
              else tdm.FiniteClass.from_values(np.asarray(spec["table"], dtype=float)))
        return tdm.ContextualBinarySearchLearner(fc)
    raise ConfigError(f"unknown learner {name!r}")


def make_adversary(cfg: ExperimentConfig) -> env.Adversary:
    name = cfg.adversary
    if name == "fixed_sequence":
        return env.FixedSequenceAdversary(path=cfg.adversary_params.get("path"),
                                          rows=cfg.adversary_params.get("rows"))
    if name == "tree_lower_bound":
        raise ConfigError("tree_lower_bound is only available programmatically")
    return env.ADVERSARIES[name]()


def make_hidden(cfg: ExperimentConfig) -> env.HiddenFunction | None:
    if cfg.hidden is None:
        return None
    kind = cfg.hidden.get("kind", "linear")
    if kind == "linear":
        return env.HiddenFunction.linear(np.asarray(cfg.hidden["vector"], dtype=float))
    if kind == "unit_demand":
        return env.HiddenFunction.unit_demand(np.asarray(cfg.hidden["vector"], dtype=float))
    if kind == "finite_table":
        return env.HiddenFunction.from_table(np.asarray(cfg.hidden["table"], dtype=float),
                                             int(cfg.hidden["row"]))
    raise ConfigError(f"unknown hidden kind {kind!r}")


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _lemma_counters(cfg: ExperimentConfig, trace: env.RegretTrace) -> dict:
    out = {"volume_ratio_rounds": 0, "lemma1_violations": 0,
           "degenerate_fallbacks": 0}
    for r in trace.records:
        ratio = r.extras.get("volume_ratio")
        if r.extras.get("degenerate_fallback"):
            out["degenerate_fallbacks"] += 1
        if cfg.learner == "steiner_symmetric" and ratio is not None:
            out["volume_ratio_rounds"] += 1
            if ratio > 0.80:
                out["lemma1_violations"] += 1
    return out


def run_experiment(cfg: ExperimentConfig) -> int:
    cfg.validate()
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    loss = env.LossFunction.symmetric() if cfg.loss == "symmetric" else env.LossFunction.pricing()
    hidden = make_hidden(cfg)

    def one_seed(seed: int):
        learner = make_learner(cfg)
        adversary = make_adversary(cfg)
        channel = env.FeedbackChannel(cfg.p)
        return seed, env.run_episode(learner, adversary, loss, channel,
                                     cfg.T, seed, cfg.d, hidden=hidden)

    workers = int(os.environ.get("STEINER_SEARCH_THREADS", "1"))
    t0 = time.time()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_seed, cfg.seeds))
    else:
        results = [one_seed(s) for s in cfg.seeds]
    runtime = time.time() - t0

    totals = []
    per_scale: dict = {}
    counters = {"volume_ratio_rounds": 0, "lemma1_violations": 0,
                "degenerate_fallbacks": 0}
    aborted = []
    for seed, trace in results:
        trace.write_csv(out_dir / f"trace_seed{seed}.csv")
        totals.append(trace.cumulative_loss)
        for k, v in trace.summary()["per_scale_rounds"].items():
            per_scale[k] = per_scale.get(k, 0) + v
        for k, v in _lemma_counters(cfg, trace).items():
            counters[k] += v
        if trace.aborted:
            aborted.append({"seed": seed, "reason": trace.abort_reason})

    summary = {
        "config": {
            "learner": cfg.learner, "adversary": cfg.adversary, "loss": cfg.loss,
            "d": cfg.d, "T": cfg.T, "p": cfg.p, "pprime": cfg.pprime,
            "seeds": list(cfg.seeds), "mc_samples": cfg.mc_samples,
            "perturbed": cfg.perturbed,
        },
        "total_loss": {
            "mean": float(np.mean(totals)) if totals else 0.0,
            "std": float(np.std(totals)) if totals else 0.0,
            "per_seed": {str(s): float(t.cumulative_loss) for s, t in results},
        },
        "per_scale_rounds": dict(sorted(per_scale.items())),
        "lemma_counters": counters,
        "aborted": aborted,
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "meta.json", "w") as fh:
        json.dump({"runtime_sec": runtime}, fh)
        fh.write("\n")
    if cfg.emit_plot_script:
        _write_plot_script(out_dir)
    return 1 if aborted else 0


def _write_plot_script(out_dir: Path) -> None:
    script = '''"""Plot cumulative-loss curves from the trace CSVs in this directory."""
import csv
import glob

import matplotlib.pyplot as plt

for path in sorted(glob.glob("trace_seed*.csv")):
    ts, cum = [], []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            ts.append(int(row["t"]))
            cum.append(float(row["cum_loss"]))
    plt.plot(ts, cum, label=path)
plt.xlabel("round")
plt.ylabel("cumulative loss")
plt.legend()
plt.savefig("cumloss.png", dpi=120)
'''
    (out_dir / "plot_cumloss.py").write_text(script)


# ---------------------------------------------------------------------------
# check suites
# ---------------------------------------------------------------------------

class CheckReport:
    def __init__(self):
        self.lines = []
        self.failures = 0

    def add(self, name: str, ok: bool, measured: str) -> None:
        self.lines.append(f"{'PASS' if ok else 'FAIL'}  {name}  [{measured}]")
        if not ok:
            self.failures += 1

    def print(self) -> None:
        for line in self.lines:
            print(line)
        print(f"{'OK' if self.failures == 0 else 'FAILURES'}: "
              f"{len(self.lines) - self.failures}/{len(self.lines)} checks passed")


def check_geometry(report: CheckReport) -> None:
    for d in (2, 3):
        for z in (0.1, 0.5, 1.0):
            est = geo.estimate_volume(geo.ConvexBody(d), z, samples=50_000,
                                      rng=np.random.default_rng(100 * d + int(10 * z)))
            oracle = geo.unit_ball_volume(d) * (1 + z) ** d
            err = abs(est.value - oracle)
            tol = 3 * est.rel_std_err * oracle + 1e-9 * oracle
            report.add(f"steiner_identity d={d} z={z}", err <= tol,
                       f"est={est.value:.4f} oracle={oracle:.4f}")
    rng = np.random.default_rng(5)
    worst = -math.inf
    for _ in range(25):
        dd = int(rng.integers(2, 5))
        hidden = rng.standard_normal(dd)
        hidden *= 0.3 / np.linalg.norm(hidden)
        body = geo.ConvexBody(dd)
        for _ in range(int(rng.integers(1, 8))):
            n = rng.standard_normal(dd)
            n /= np.linalg.norm(n)
            body = geo.add_cut(body, n, float(n @ hidden + abs(rng.normal()) * 0.3), +1)
        q = rng.standard_normal(dd) * 2
        p = geo.project(body, q)
        w = geo.project(body, hidden + rng.standard_normal(dd) * 0.2)
        worst = max(worst, float((q - p) @ (w - p)))
    report.add("projection_variational", worst <= 1e-6, f"max inner product={worst:.2e}")
    body = geo.add_cut(geo.ConvexBody(2), np.array([0.6, 0.8]), 0.25, +1)
    frac = 0.25
    x = np.array([1.0, 0.0])
    y = geo.median_cut(body, 0.1, x, frac, samples=60_000, rng=np.random.default_rng(8))
    tot = geo.estimate_volume(body, 0.1, samples=60_000, rng=np.random.default_rng(9))
    part = geo.estimate_volume(body, 0.1, cut=(x, y, +1), samples=60_000,
                               rng=np.random.default_rng(9))
    err = abs(part.value / tot.value - frac)
    report.add("median_cut_self_consistency", err <= 0.05, f"fraction err={err:.4f}")
    envlp = geo.tight_envelope(geo.ConvexBody(2), 0.2)
    a = geo.estimate_volume(geo.ConvexBody(2), 0.2, samples=30_000,
                            rng=np.random.default_rng(7), envelope=envlp)
    b = geo.estimate_volume(geo.add_cut(geo.ConvexBody(2), np.array([1.0, 0.0]), 0.1, +1),
                            0.2, samples=30_000, rng=np.random.default_rng(7),
                            envelope=envlp)
    report.add("volume_monotone_under_cut", b.value <= a.value,
               f"before={a.value:.4f} after={b.value:.4f}")


def check_lemmas(report: CheckReport) -> None:
    # three-quarters drop of the inflated volume, short symmetric run
    cfgs = [(2, 11), (3, 12)]
    viol = rounds = 0
    for d, seed in cfgs:
        learner = lrn.SteinerSymmetricLearner(mc_samples=16384)
        trace = env.run_episode(learner, env.RandomUnitAdversary(),
                                env.LossFunction.symmetric(), env.FeedbackChannel(0.0),
                                120, seed, d)
        for r in trace.records:
            ratio = r.extras.get("volume_ratio")
            if ratio is not None:
                rounds += 1
                viol += ratio > 0.80
    rate = viol / max(rounds, 1)
    report.add("symmetric_volume_drop", rate <= 0.01,
               f"violations={viol}/{rounds}")
    # pricing no-purchase drop, short run
    learner = lrn.SteinerPricingLearner(mc_samples=16384)
    trace = env.run_episode(learner, env.RandomUnitAdversary(),
                            env.LossFunction.pricing(), env.FeedbackChannel(0.0),
                            400, 21, 2)
    ok = tot = 0
    for r in trace.records:
        ratio = r.extras.get("volume_ratio")
        i = r.extras.get("scale")
        if ratio is None or not isinstance(i, int) or i < 1 or r.sigma_sent != +1:
            continue
        tot += 1
        ok += ratio <= 1.1 * 2.0 ** (-(2.0 ** (i - 1)))
    report.add("pricing_no_purchase_drop", tot == 0 or ok / tot >= 0.95,
               f"ok={ok}/{tot}")
    # single-scale halving on forced far-median states
    rng = np.random.default_rng(3)
    halves = trials = 0
    for _ in range(200):
        ok_trial = _forced_halving_trial(rng)
        if ok_trial is None:
            continue
        trials += 1
        halves += ok_trial
    freq = halves / max(trials, 1)
    sigma = math.sqrt(0.25 / max(trials, 1))
    report.add("single_scale_halving", freq >= 0.5 - 3 * sigma,
               f"freq={freq:.3f} trials={trials}")


def _forced_halving_trial(rng: np.random.Generator):
    """One far-median step on a random finite class; None if not forced."""
    T = 100
    table = rng.random((64, 5))
    hclass = hyp.HypothesisClass.finite_table(table)
    learner = lrn.SingleScaleLearner(hclass, net_epsilon=0.01)
    learner.begin(5, T, np.random.default_rng(int(rng.integers(1 << 31))))
    mask = rng.random(64) < 0.7
    if not mask.any():
        mask[0] = True
    learner.net.alive[:] = mask
    x = int(rng.integers(5))
    hidden_row = int(rng.integers(64))
    u = float(table[hidden_row, x])
    m = hyp.set_median(learner.net, x)
    if abs(m - u) <= 2.0 / T:
        return None
    y = learner.propose(x)
    sigma = env.true_feedback(y, u)
    learner.observe(x, y, sigma)
    return learner._info["halved"]


def check_noisy_identities(report: CheckReport) -> None:
    rng = np.random.default_rng(17)
    worst1 = 0.0
    for _ in range(100):
        n = int(rng.integers(3, 40))
        w = rng.random(n) + 1e-3
        w /= w.sum()
        vals = np.sort(rng.normal(size=n))
        u = float(rng.normal())
        y = float(rng.normal())
        if y == u:
            continue
        sigma = 1 if y > u else -1
        same = np.flatnonzero(sigma * (y - vals) > 0)
        if same.size == 0:
            continue
        idx = int(same[rng.integers(same.size)])
        p, pp = 0.25, 1.0 / 3.0
        enum, formula = lrn.reciprocal_weight_expectation(w, idx, vals, y, sigma, p, pp)
        worst1 = max(worst1, abs(enum - formula))
    report.add("noisy_single_scale_identity", worst1 <= 1e-10, f"max err={worst1:.2e}")
    worst2 = 0.0
    bound_ok = True
    for _ in range(100):
        n = int(rng.integers(5, 60))
        w = rng.random(n) + 1e-3
        w /= w.sum()
        proj = np.sort(rng.normal(size=n))
        u = float(rng.normal())
        y = float(rng.normal())
        if y == u:
            continue
        sigma = 1 if y > u else -1
        same = np.flatnonzero(sigma * (y - proj) > 0)
        if same.size == 0:
            continue
        idx = int(same[rng.integers(same.size)])
        eta = float(rng.uniform(0.01, 0.25))
        enum, mixture, bound = lrn.grid_reciprocal_expectation(w, idx, proj, y, sigma, eta)
        worst2 = max(worst2, abs(enum - mixture))
        bound_ok &= enum <= bound + 1e-12
    report.add("noisy_linear_identity", worst2 <= 1e-10, f"max err={worst2:.2e}")
    report.add("noisy_linear_bound", bound_ok, "mixture <= (1 - eta X/10)/w")


def check_treedim(report: CheckReport) -> None:
    values = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    fc = tdm.FiniteClass.from_values(values)
    tau, tree = tdm.tree_dimension(fc)
    report.add("tau_all_binary_functions", tau == 2.0, f"tau={tau}")
    report.add("witness_tree_valid",
               tdm.validate_tree(tree, fc) and tdm.tree_cost(tree, fc) == tau,
               f"cost={tdm.tree_cost(tree, fc)}")
    # CBS never exceeds tau on exhaustive short sequences
    ok = True
    worst = 0.0
    for seq in __import__("itertools").product(range(2), repeat=3):
        for h in range(fc.num_hypotheses):
            learner = tdm.ContextualBinarySearchLearner(fc)
            learner.begin(2, len(seq), np.random.default_rng(0))
            total = 0.0
            for x in seq:
                y = learner.propose(x)
                u = fc.value(h, x)
                total += abs(y - u)
                learner.observe_full(x, y, u)
            worst = max(worst, total)
            ok &= total <= tau + 1e-9
    report.add("cbs_loss_within_tau", ok, f"worst={worst}")
    est = tdm.cdim_estimate(fc)
    report.add("tau_below_6_cdim", tau <= 6 * est + 1e-9, f"cdim_est={est:.3f}")


def run_check(suite: str) -> int:
    report = CheckReport()
    if suite in ("geometry", "all"):
        check_geometry(report)
    if suite in ("lemmas", "all"):
        check_lemmas(report)
    if suite in ("noisy_identities", "all"):
        check_noisy_identities(report)
    if suite in ("treedim", "all"):
        check_treedim(report)
    report.print()
    return 0 if report.failures == 0 else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="steiner-search",
                                 description="Contextual-search experiment runner")
    ap.add_argument("--config", type=str, help="JSON config file")
    ap.add_argument("--learner", choices=LEARNER_CHOICES)
    ap.add_argument("--adversary", choices=ADVERSARY_CHOICES)
    ap.add_argument("--loss", choices=LOSS_CHOICES)
    ap.add_argument("--d", type=int)
    ap.add_argument("--T", type=int)
    ap.add_argument("--p", type=float)
    ap.add_argument("--pprime", type=float)
    ap.add_argument("--seeds", type=str, help="e.g. 0..9 or 1,5,7")
    ap.add_argument("--mc-samples", type=int, dest="mc_samples")
    ap.add_argument("--out", type=str)
    ap.add_argument("--emit-plot-script", action="store_true", default=None)
    ap.add_argument("--perturbed", action="store_true", default=None)
    ap.add_argument("--check", choices=CHECK_SUITES)
    return ap


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
        for key, val in doc.items():
            if not hasattr(cfg, key):
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, val)
    overrides = {
        "learner": args.learner, "adversary": args.adversary, "loss": args.loss,
        "d": args.d, "T": args.T, "p": args.p, "pprime": args.pprime,
        "mc_samples": args.mc_samples, "out": args.out,
        "emit_plot_script": args.emit_plot_script, "perturbed": args.perturbed,
    }
    for key, val in overrides.items():
        if val is not None:
            setattr(cfg, key, val)
    if args.seeds is not None:
        cfg.seeds = parse_seeds(args.seeds)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.check:
        return run_check(args.check)
    try:
        cfg = config_from_args(args)
        return run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
