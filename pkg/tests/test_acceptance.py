"""Exit criteria. Each test records one PASS/FAIL line (see conftest)."""

from __future__ import annotations

import csv
import math
import shutil
import time
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest

from offgraph_vc.agents import render_prompts
from offgraph_vc.encoders import CachedEncoder, HashingEncoder
from offgraph_vc.gains import compute_gain
from offgraph_vc.gate import GateConfig, evaluate_gate, loss_and_grads, planted_gate_data, random_weight_baseline, train_gate
from offgraph_vc.graph import (
    TargetLabel,
    all_targets,
    first_round_edges,
    label_window_end,
    load_graph,
    target_view,
)
from offgraph_vc.llm import LabelLogLik, binary_probability
from offgraph_vc.metrics import (
    PredictionRecord,
    auc_pr,
    auc_roc,
    average_precision_at_k,
    classification_metrics,
    precision_at_k,
    read_predictions,
)
from offgraph_vc.pipeline import STAGES, load_config
from offgraph_vc.retrieval import audit_retrieval, build_investor_profile, retrieve_peers, select_lead_investor
from offgraph_vc.selector import (
    SelectorModel,
    batch_loss_and_grads,
    extract_paths,
    listwise_loss,
    listwise_targets,
    random_paths,
)
from offgraph_vc.synth import GeneratorConfig, generate

import oracles
from conftest import record_criterion
from gradcheck import max_relative_error, numeric_grads
from test_gate import small_model, smooth_batch

pytestmark = pytest.mark.acceptance

BENCHMARK = Path(__file__).resolve().parents[1] / "configs" / "benchmark.yaml"
SEEDS = (0, 1, 2)


def verdict(number, ok, detail):
    record_criterion(number, ok, detail)
    assert ok, detail


# -- pure math ---------------------------------------------------------------

@pytest.mark.criterion(1)
def test_binary_probability_matches_sigmoid():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    pairs = rng.uniform(-60, 0, size=(1000, 2))
    err = max(abs(binary_probability(LabelLogLik(lt, lf)) - oracles.sigmoid(lt - lf)) for lt, lf in pairs)
    secs = time.perf_counter() - start
    verdict(1, err <= 1e-9 and secs < 1.0, f"max abs err {err:.2e} over 1000 pairs in {secs:.3f}s")


@pytest.mark.criterion(2)
def test_gain_matches_brute_force():
    rng = np.random.default_rng(2)
    probs = rng.random((10_000, 2))
    probs[:50] = rng.choice([0.0, 1.0], size=(50, 2))  # exercise clamping
    ys = rng.integers(0, 2, 10_000)
    lams = rng.random(10_000)
    err = max(
        abs(compute_gain(int(y), pb, pv, lam) - oracles.gain(int(y), pb, pv, lam))
        for y, (pb, pv), lam in zip(ys, probs, lams)
    )
    example = compute_gain(1, 0.5, 0.8, 0.2)
    ok = err <= 1e-9 and abs(example - 0.53001) <= 1e-4
    verdict(2, ok, f"max abs err {err:.2e} over 10000 tuples; worked example {example:.5f}")


@pytest.mark.criterion(3)
def test_listwise_targets_and_loss():
    rng = np.random.default_rng(3)
    worst_sum, min_kl, worst_self, worst_oracle = 0.0, math.inf, 0.0, 0.0
    for _ in range(10_000):
        k = int(rng.integers(2, 7))
        tau = float(rng.uniform(0.05, 3))
        q = listwise_targets(rng.normal(scale=2, size=k), tau)
        p = listwise_targets(rng.normal(scale=2, size=k), tau)
        worst_sum = max(worst_sum, abs(q.sum() - 1), abs(p.sum() - 1))
        kl = listwise_loss(q, p)
        min_kl = min(min_kl, kl)
        worst_oracle = max(worst_oracle, abs(kl - oracles.kl(q, p)))
        worst_self = max(worst_self, abs(listwise_loss(q, q)))
    q = listwise_targets([0.5, 0.1, 0.3], 0.5)
    example_err = float(np.max(np.abs(q - [0.47177, 0.21198, 0.31624])))
    skipped = listwise_targets([0.4, 0.4, 0.4], 0.5) is None
    ok = worst_sum <= 1e-9 and min_kl >= 0 and worst_self <= 1e-12 and example_err <= 1e-4 and skipped
    verdict(
        3, ok,
        f"|sum q - 1| <= {worst_sum:.1e}, min KL {min_kl:.2e}, |KL(q||q)| <= {worst_self:.1e}, "
        f"oracle err {worst_oracle:.1e}, example err {example_err:.1e}, equal gains skipped={skipped}",
    )


@pytest.mark.criterion(4)
def test_gradients_match_finite_differences():
    start = time.perf_counter()
    worst = {}
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        model = SelectorModel.init(embed_dim=5, hidden=8, seed=seed)
        x = rng.normal(size=(6, 3, 15))
        mask = np.ones((6, 3), dtype=bool)
        mask[1, 2] = False
        q = np.zeros((6, 3))
        for i in range(6):
            q[i, mask[i]] = listwise_targets(rng.normal(size=int(mask[i].sum())), 0.5)
        _, analytic = batch_loss_and_grads(model.params, x, mask, q, 0.5)
        numeric = numeric_grads(lambda prm: batch_loss_and_grads(prm, x, mask, q, 0.5)[0], model.params)
        worst[f"selector/s{seed}"] = max_relative_error(analytic, numeric)
        for attention in (False, True):
            gm = small_model(attention, seed)
            r, a, y = smooth_batch(gm, attention, seed)
            _, analytic = loss_and_grads(gm.params, r, a, y, attention)
            numeric = numeric_grads(lambda prm: loss_and_grads(prm, r, a, y, attention)[0], gm.params)
            worst[f"gate{'+attn' if attention else ''}/s{seed}"] = max_relative_error(analytic, numeric)
    secs = time.perf_counter() - start
    top = max(worst.values())
    verdict(4, top <= 1e-4 and secs < 30, f"max rel err {top:.2e} over {len(worst)} checks in {secs:.1f}s")


# -- synthetic benchmark shared by criteria 5, 10 and 11 ---------------------------

@dataclass
class SeedRun:
    seed: int
    base_cfg: object
    base_seconds: float
    groups: int
    selector_eval: dict
    metrics: dict = field(default_factory=dict)  # variant -> metrics dict


def bench_cfg(seed, out, **top):
    cfg = load_config(BENCHMARK)
    return replace(cfg, seed=seed, out_dir=str(out), **top)


@pytest.fixture(scope="session")
def benchmark_base(tmp_path_factory):
    root = tmp_path_factory.mktemp("benchmark")
    runs = {}
    for seed in SEEDS:
        cfg = bench_cfg(seed, root / f"s{seed}" / "selector_gate")
        start = time.perf_counter()
        for stage in ("gen-data", "label-gains", "train-selector"):
            STAGES[stage](cfg)
        ev = STAGES["eval-selector"](cfg)
        secs = time.perf_counter() - start
        groups = sum(1 for ln in (cfg.out / "groups.jsonl").read_text().splitlines() if ln.strip())
        runs[seed] = SeedRun(seed, cfg, secs, groups, ev)
    return runs


def _finish(cfg, stages):
    for stage in stages:
        STAGES[stage](cfg)
    return STAGES["evaluate"](cfg)


@pytest.fixture(scope="session")
def benchmark(benchmark_base):
    for run in benchmark_base.values():
        base = run.base_cfg
        root = base.out.parent
        data = str(base.data_path)
        run.metrics["selector/gate"] = _finish(base, ("run-agents", "train-gate", "predict"))
        for mode in ("random", "all"):
            cfg = replace(base, out_dir=str(root / f"{mode}_gate"), data_dir=data,
                          retrieval=replace(base.retrieval, path_mode=mode))
            run.metrics[f"{mode}/gate"] = _finish(cfg, ("run-agents", "train-gate", "predict"))
        # fusion only changes the predict stage, so the specialist verdicts are shared
        fixed = replace(base, out_dir=str(root / "selector_fixed"), data_dir=data, fusion="fixed")
        fixed.out.mkdir(parents=True)
        for name in ("selector.json", "verdicts.jsonl", "agents_meta.json"):
            shutil.copy(base.out / name, fixed.out / name)
        run.metrics["selector/fixed"] = _finish(fixed, ("predict",))
    return benchmark_base


@pytest.mark.criterion(5)
def test_selector_beats_random(benchmark_base):
    runs = list(benchmark_base.values())
    sel_hit = np.mean([r.selector_eval["selector"]["hit_at_1"] for r in runs])
    rnd_hit = np.mean([r.selector_eval["random"]["hit_at_1"] for r in runs])
    sel_ndcg = np.mean([r.selector_eval["selector"]["ndcg_at_1"] for r in runs])
    rnd_ndcg = np.mean([r.selector_eval["random"]["ndcg_at_1"] for r in runs])
    secs = sum(r.base_seconds for r in runs)
    min_groups = min(r.groups for r in runs)
    ok = (
        sel_hit - rnd_hit >= 0.10 and sel_ndcg - rnd_ndcg >= 0.10
        and min_groups >= 300 and secs < 300
    )
    verdict(
        5, ok,
        f"Hit@1 {sel_hit:.3f} vs random {rnd_hit:.3f}, NDCG@1 {sel_ndcg:.3f} vs {rnd_ndcg:.3f} "
        f"(>= {min_groups} groups per seed, {secs:.0f}s for 3 seeds)",
    )


@pytest.mark.criterion(6)
def test_gate_beats_random_weights():
    start = time.perf_counter()
    data = planted_gate_data(1200, seed=6)
    train, val, test = data.subset(slice(0, 800)), data.subset(slice(800, 1000)), data.subset(slice(1000, 1200))
    cfg = GateConfig(epochs=15, batch_size=32, seed=6)
    res = train_gate(train, cfg, val)
    gate = evaluate_gate(res.model, test)
    rand = random_weight_baseline(train, test, cfg)
    secs = time.perf_counter() - start
    w_inf = gate["mean_weights"][2]
    ok = gate["f1"] - rand["f1"] >= 0.10 and w_inf > 0.5 and secs < 120
    verdict(
        6, ok,
        f"F1 {gate['f1']:.3f} vs random weights {rand['f1']:.3f}, informative-view weight {w_inf:.3f}, {secs:.0f}s",
    )


# -- leakage -------------------------------------------------------------------

def _day(s):
    return date.fromisoformat(s[:10])


def truncated_graph(ds, cutoff, keep=None):
    """The world as recorded strictly before ``cutoff``.

    ``keep`` is a target whose own first-round edges (dated exactly t0) stay in.
    """
    comps = [c for c in ds.companies if _day(c["founded"]) < cutoff or c["id"] == keep]
    ids = {c["id"] for c in comps}
    invs = [dict(i, employment=[j for j in i.get("employment", []) if _day(j["date"]) < cutoff]) for i in ds.investors]
    edges = [
        e for e in ds.investments
        if e["company"] in ids and (_day(e["date"]) < cutoff or (e["company"] == keep and _day(e["date"]) == cutoff))
    ]
    return load_graph(comps, invs, edges)


def _direct_issues(paths, peers, profile, cutoff, first_t0, allowed_edges=frozenset()):
    """Date checks on the raw retrieval output, independent of the counterfactual."""
    issues = [f"path edge {e}" for p in paths for e in p.edges if not (e.timestamp < cutoff or e in allowed_edges)]
    for peer in peers.peers:
        if not label_window_end(first_t0[peer.record.node]) < cutoff:
            issues.append(f"peer {peer.record.node.id} window still open at {cutoff}")
    if profile is not None:
        issues += [f"job dated {j.date}" for j in profile.employment if not j.date < cutoff]
        issues += [f"history edge dated {x.edge.timestamp}" for x in profile.investments if not x.edge.timestamp < cutoff]
    return issues


@pytest.mark.criterion(7)
def test_no_retrieval_depends_on_future_events():
    """Every probe reruns retrieval on a copy of the data with all events
    dated >= cutoff deleted; any difference means the future leaked in."""
    enc = CachedEncoder(HashingEncoder(dim=64))
    sel = SelectorModel.init(64, 16, seed=0)
    n_graphs, per_graph = 20, 500
    probes, problems = 0, []
    for gseed in range(n_graphs):
        ds = generate(GeneratorConfig(seed=1000 + gseed, n_companies=70))
        g = ds.graph()
        targets = all_targets(g)
        first_t0 = {t.company: t.t0 for t in targets}
        companies = list(g.companies())
        investors = [i.node for i in g.investors()]
        lo, hi = min(t.t0 for t in targets), max(t.t0 for t in targets) + timedelta(days=400)
        rng = np.random.default_rng(gseed)
        for i in range(per_graph):
            probes += 1
            if i % 2 == 0:
                # the target's own t0: full specialist evidence
                lab = targets[int(rng.integers(len(targets)))]
                seen = []
                for graph in (g, truncated_graph(ds, lab.t0, lab.company.id)):
                    view = target_view(graph, lab)
                    paths = extract_paths(lab, view, sel, enc, 2, 4)
                    walks = random_paths(lab, view, 2, 4, np.random.default_rng(i))
                    peers = retrieve_peers(graph.company(lab.company), graph, enc, lab.t0)
                    lead = select_lead_investor(lab.company, graph)
                    prof = build_investor_profile(lead, lab.t0, graph) if lead else None
                    bundle = render_prompts(lab.company, view, graph, paths + walks, peers, prof)
                    seen.append((paths, walks, peers, prof, bundle))
                    if graph is g:
                        own = frozenset(first_round_edges(lab.company, g))
                        problems += _direct_issues(paths + walks, peers, prof, lab.t0, first_t0, own)
                        problems += audit_retrieval(lab, g, peers, prof)
                if seen[0] != seen[1]:
                    problems.append(f"target {lab.company.id} at {lab.t0}: evidence changes when the future is deleted")
            else:
                # arbitrary cutoff, arbitrary focal company and investor
                cutoff = lo + timedelta(days=int(rng.integers((hi - lo).days)))
                rec = companies[int(rng.integers(len(companies)))]
                inv = investors[int(rng.integers(len(investors)))]
                seen = []
                for graph in (g, truncated_graph(ds, cutoff, rec.node.id)):
                    view = graph.view(cutoff)
                    walks = random_paths(TargetLabel(rec.node, cutoff, 0), view, 2, 4, np.random.default_rng(i))
                    peers = retrieve_peers(graph.company(rec.node), graph, enc, cutoff)
                    prof = build_investor_profile(inv, cutoff, graph)
                    seen.append((walks, peers, prof))
                    if graph is g:
                        problems += _direct_issues(walks, peers, prof, cutoff, first_t0)
                if seen[0] != seen[1]:
                    problems.append(f"{rec.node.id}/{inv.id} at {cutoff}: retrieval changes when the future is deleted")
    ok = probes >= 10_000 and not problems
    verdict(7, ok, f"{probes} probes, {len(problems)} leaks" + (f"; first: {problems[0]}" if problems else ""))


# -- metrics -------------------------------------------------------------------

@pytest.mark.criterion(8)
def test_metrics_match_brute_force():
    rng = np.random.default_rng(8)
    mismatches = []
    for trial in range(200):
        n = int(rng.integers(2, 80))
        tie_prone = trial % 2 == 1
        conf = rng.integers(0, 6, n) / 5 if tie_prone else rng.random(n)
        recs = [
            PredictionRecord(f"t{i:03d}", date(2021, int(rng.integers(1, 5)), 1), int(rng.random() < 0.3),
                             int(rng.random() < 0.4), float(conf[i]))
            for i in range(n)
        ]
        rows = [(r.target_id, r.confidence, r.y_true) for r in recs]
        monthly = [(r.month,) + row for r, row in zip(recs, rows)]
        for k in (5, 10, 20):
            if precision_at_k(recs, k) != float(oracles.p_at_k(rows, k)):
                mismatches.append(f"P@{k} trial {trial}")
            if average_precision_at_k(recs, k) != oracles.ap_at_k(monthly, k):
                mismatches.append(f"AP@{k} trial {trial}")
        m = classification_metrics(recs)
        if (m["precision"], m["recall"], m["f1"]) != oracles.prf([r.y_true for r in recs], [r.y_pred for r in recs]):
            mismatches.append(f"P/R/F1 trial {trial}")
        y, s = [r.y_true for r in recs], [r.confidence for r in recs]
        for name, got, want in (("AUC-ROC", auc_roc(y, s), oracles.auc_roc_pairs(y, s)),
                                ("AUC-PR", auc_pr(y, s), oracles.auc_pr_steps(y, s))):
            if (got is None) != (want is None) or (got is not None and abs(got - want) > 1e-9):
                mismatches.append(f"{name} trial {trial}")
    jan = [PredictionRecord(f"a{i}", date(2021, 1, 3), y, 1, 1 - i / 10) for i, y in enumerate([1, 0, 0, 1, 0])]
    feb = [PredictionRecord(f"b{i}", date(2021, 2, 9), y, 1, 1 - i / 10) for i, y in enumerate([0, 0, 1, 0, 0, 1])]
    example = average_precision_at_k(jan + feb, 5)
    ok = not mismatches and example == 0.3
    verdict(8, ok, f"200 datasets, {len(mismatches)} mismatches; two-month AP@5 = {example!r}")


# -- end to end ----------------------------------------------------------------

@pytest.mark.criterion(9)
def test_pipeline_is_deterministic(tmp_path):
    times, outputs = [], []
    for name in ("first", "second"):
        cfg = bench_cfg(0, tmp_path / name)
        cfg = replace(cfg, generator=replace(cfg.generator, n_companies=500))
        start = time.perf_counter()
        for stage in STAGES:
            STAGES[stage](cfg)
        times.append(time.perf_counter() - start)
        outputs.append((cfg.out / "predictions.jsonl").read_bytes())
    n = len(read_predictions(tmp_path / "first" / "predictions.jsonl"))
    ok = outputs[0] == outputs[1] and max(times) < 600 and n > 0
    verdict(9, ok, f"{n} predictions, identical={outputs[0] == outputs[1]}, runs {times[0]:.0f}s / {times[1]:.0f}s")


@pytest.mark.criterion(10)
def test_pipeline_recovers_planted_signal(benchmark):
    gaps = [r.metrics["selector/gate"]["ap_at_5"] - _shuffled(r, "ap_at_5") for r in benchmark.values()]
    ap = np.mean([r.metrics["selector/gate"]["ap_at_5"] for r in benchmark.values()])
    ok = float(np.mean(gaps)) >= 0.15
    verdict(10, ok, f"AP@5 {ap:.3f}, mean gap over shuffled labels {np.mean(gaps):+.3f} (per seed {', '.join(f'{x:+.3f}' for x in gaps)})")


def _shuffled(run, key):
    # evaluate wrote the shuffled-label reference next to the real value
    out = run.base_cfg.out
    with (out / "metrics.csv").open() as fh:
        for row in csv.DictReader(fh):
            if row["metric"] == key:
                return float(row["shuffled"])
    raise KeyError(key)


@pytest.mark.criterion(11)
def test_ablation_ordering(benchmark):
    f1 = {name: np.array([r.metrics[name]["f1"] for r in benchmark.values()]) for name in next(iter(benchmark.values())).metrics}
    mean = {k: float(v.mean()) for k, v in f1.items()}
    # "within noise": standard error of the per-seed paired difference
    diff = f1["random/gate"] - f1["all/gate"]
    noise = float(diff.std(ddof=1) / math.sqrt(len(diff)))
    checks = {
        "selector >= random": mean["selector/gate"] >= mean["random/gate"],
        "random >= all (within noise)": mean["random/gate"] >= mean["all/gate"] - noise,
        "gate >= fixed": mean["selector/gate"] >= mean["selector/fixed"],
    }
    table = ", ".join(f"{k} {v:.3f}" for k, v in mean.items())
    failed = [k for k, v in checks.items() if not v]
    verdict(11, not failed, f"mean F1: {table}" + (f"; violated: {', '.join(failed)}" if failed else ""))
