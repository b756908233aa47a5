"""Stage functions wiring data, labeling, training, agents and evaluation.

Every stage reads its inputs from and writes its artifacts to one output
directory, so stages can run separately from the command line or in one
process from tests.
"""

from __future__ import annotations

import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np
import yaml

from .agents import (
    VIEWS,
    Agent,
    AgentStats,
    AgentVerdict,
    ask,
    combined_prompt,
    read_verdicts,
    render_prompts,
    run_manager,
    run_specialists,
    write_verdicts,
)
from .encoders import CachedEncoder, HashingEncoder, HttpEncoder, TextEncoder
from .gains import GainLog, RankingGroup, build_expansion_tree, label_groups
from .gate import GateConfig, GateData, GateModel, evaluate_gate, random_weight_baseline, train_gate, write_gate_log
from .graph import (
    InvestmentGraph,
    TargetLabel,
    add_months,
    all_targets,
    first_round_edges,
    load_graph_dir,
    target_view,
)
from .llm import CHARS_PER_TOKEN, DEFAULT_MOCK_RULES, Gateway, HttpGateway, MockGateway, RetryPolicy
from .metrics import PredictionRecord, read_metrics_csv, read_predictions, report, shuffled_labels, summary_metrics, write_predictions
from .profiles import company_block
from .retrieval import build_investor_profile, retrieve_peers, select_lead_investor
from .selector import (
    GroupTensors,
    SelectorConfig,
    SelectorModel,
    embed_groups,
    evaluate_selector,
    exhaustive_paths,
    extract_paths,
    random_baseline,
    random_paths,
    train_selector,
    write_training_log,
)
from .synth import GeneratorConfig, generate

logger = logging.getLogger(__name__)

PATH_MODES = ("selector", "random", "all")
FUSION_MODES = ("gate", "fixed", "single")


class MissingArtifact(RuntimeError):
    """An upstream stage has not produced its output yet."""

    def __init__(self, artifact: Path, stage: str):
        super().__init__(f"missing {artifact.name}: run {stage} first")
        self.artifact = artifact
        self.stage = stage


# -- configuration ---------------------------------------------------------

@dataclass
class GatewaySettings:
    provider: str = "mock"
    model: str = "mock"
    base_url: str = ""
    api_key_env: str = "OFFGRAPH_LLM_API_KEY"
    max_in_flight: int = 4
    context_tokens: int = 12_000
    max_attempts: int = 5
    mock_rules: list = field(default_factory=lambda: [list(r) for r in DEFAULT_MOCK_RULES])
    mock_noise: float = 0.0


@dataclass
class EncoderSettings:
    provider: str = "hashing"
    dim: int = 384
    base_url: str = ""
    api_key_env: str = "OFFGRAPH_ENCODER_API_KEY"
    cache: bool = True


@dataclass
class LabelingSettings:
    lambda_conf: float = 0.2
    tree_depth: int = 3
    branching: int = 3
    max_targets: Optional[int] = None
    workers: int = 4


@dataclass
class RetrievalSettings:
    peers: int = 4
    history: int = 5
    num_paths: int = 2
    max_depth: int = 4
    all_depth: int = 3
    max_candidates: Optional[int] = None
    path_mode: str = "selector"
    use_graph: bool = True
    use_peers: bool = True
    use_investor: bool = True


@dataclass
class SplitSettings:
    eval_months: int = 12
    train: float = 0.70
    val: float = 0.15


@dataclass
class PipelineConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    data_dir: Optional[str] = None
    fusion: str = "gate"
    workers: int = 4
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    gateway: GatewaySettings = field(default_factory=GatewaySettings)
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    labeling: LabelingSettings = field(default_factory=LabelingSettings)
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    retrieval: RetrievalSettings = field(default_factory=RetrievalSettings)
    gate: GateConfig = field(default_factory=GateConfig)
    splits: SplitSettings = field(default_factory=SplitSettings)

    def __post_init__(self) -> None:
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}")
        if self.retrieval.path_mode not in PATH_MODES:
            raise ValueError(f"path mode must be one of {PATH_MODES}")

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    @property
    def data_path(self) -> Path:
        return Path(self.data_dir) if self.data_dir else self.out / "data"

    def to_dict(self) -> dict:
        return asdict(self)


def _merge(cls, base, overrides: Mapping[str, Any]):
    if not overrides:
        return base
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, val in overrides.items():
        if key not in known:
            raise ValueError(f"unknown config key {cls.__name__}.{key}")
        cur = getattr(base, key)
        kwargs[key] = _merge(type(cur), cur, val) if is_dataclass(cur) and isinstance(val, Mapping) else val
    return replace(base, **kwargs)


def config_from_dict(obj: Optional[Mapping[str, Any]] = None) -> PipelineConfig:
    return _merge(PipelineConfig, PipelineConfig(), obj or {})


def load_config(path: Optional[str | Path]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(doc, Mapping):
        raise ValueError(f"{path}: top level must be a mapping")
    return config_from_dict(doc)


def write_resolved_config(cfg: PipelineConfig, stage: str) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / f"config.{stage}.yaml"
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True), encoding="utf-8")
    return path


# -- shared resources ------------------------------------------------------

def make_gateway(cfg: PipelineConfig) -> Gateway:
    g = cfg.gateway
    common = dict(
        max_context_tokens=g.context_tokens,
        max_in_flight=g.max_in_flight,
        retry=RetryPolicy(max_attempts=g.max_attempts, seed=cfg.seed),
        audit_path=cfg.out / "llm_audit.jsonl" if g.provider != "mock" else None,
    )
    if g.provider == "mock":
        rules = [(str(s), float(v)) for s, v in g.mock_rules]
        return MockGateway(rules=rules, seed=cfg.seed, noise=g.mock_noise, **common)
    if g.provider == "http":
        return HttpGateway(base_url=g.base_url, model=g.model, api_key_env=g.api_key_env, **common)
    raise ValueError(f"unknown gateway provider {g.provider!r}")


def make_encoder(cfg: PipelineConfig) -> TextEncoder:
    e = cfg.encoder
    if e.provider == "hashing":
        inner: TextEncoder = HashingEncoder(dim=e.dim, seed=0)
        # hashing is cheap and deterministic; an on-disk cache buys nothing
        return inner
    if e.provider == "http":
        inner = HttpEncoder(e.base_url, dim=e.dim, api_key_env=e.api_key_env)
        return CachedEncoder(inner, cfg.out / "embeddings.npz" if e.cache else None)
    raise ValueError(f"unknown encoder provider {e.provider!r}")


def load_data(cfg: PipelineConfig) -> InvestmentGraph:
    if not (cfg.data_path / "investments.jsonl").exists():
        raise MissingArtifact(cfg.data_path / "investments.jsonl", "gen-data")
    return load_graph_dir(cfg.data_path)


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifact(path, stage)
    return path


# -- splits ----------------------------------------------------------------

@dataclass
class Splits:
    train: list[str]
    val: list[str]
    test: list[str]
    eval: list[str]

    def dev(self) -> list[str]:
        return self.train + self.val + self.test

    def to_json(self) -> dict:
        return asdict(self)


def _month_index(d) -> int:
    return d.year * 12 + d.month - 1


def make_splits(targets: Sequence[TargetLabel], cfg: PipelineConfig) -> Splits:
    """Temporal hold-out of the last months, stratified 70/15/15 on the rest."""
    if not targets:
        return Splits([], [], [], [])
    last = max(_month_index(t.t0) for t in targets)
    first_eval = last - cfg.splits.eval_months + 1
    ev = sorted(t.company.id for t in targets if _month_index(t.t0) >= first_eval)
    dev = sorted((t for t in targets if _month_index(t.t0) < first_eval), key=lambda t: t.company.id)
    rng = np.random.default_rng(cfg.seed)
    parts: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    for y in (0, 1):
        ids = [t.company.id for t in dev if t.y == y]
        perm = [ids[i] for i in rng.permutation(len(ids))]
        n_tr = int(round(cfg.splits.train * len(ids)))
        n_va = int(round(cfg.splits.val * len(ids)))
        parts["train"] += perm[:n_tr]
        parts["val"] += perm[n_tr:n_tr + n_va]
        parts["test"] += perm[n_tr + n_va:]
    return Splits(sorted(parts["train"]), sorted(parts["val"]), sorted(parts["test"]), ev)


def targets_by_id(graph: InvestmentGraph) -> dict[str, TargetLabel]:
    return {t.company.id: t for t in all_targets(graph)}


# -- stage: gen-data -------------------------------------------------------

def stage_gen_data(cfg: PipelineConfig) -> dict:
    gen_cfg = replace(cfg.generator, seed=cfg.seed)
    ds = generate(gen_cfg)
    ds.write(cfg.data_path)
    (cfg.data_path / "tiers.json").write_text(json.dumps(ds.tiers, sort_keys=True), encoding="utf-8")
    graph = load_graph_dir(cfg.data_path)
    targets = all_targets(graph)
    return {
        **graph.summary(),
        "targets": len(targets),
        "positives": sum(t.y for t in targets),
        "data_dir": str(cfg.data_path),
    }


# -- stage: label-gains ----------------------------------------------------

def _selector_ids(splits: Splits, cfg: PipelineConfig) -> dict[str, list[str]]:
    out = {"train": splits.train, "val": splits.val, "test": splits.test}
    cap = cfg.labeling.max_targets
    if cap is not None:
        # keep split proportions while capping the labeling budget
        total = max(len(splits.dev()), 1)
        out = {k: v[: max(1, int(round(cap * len(v) / total)))] for k, v in out.items()}
    return out


def stage_label_gains(cfg: PipelineConfig, gateway: Optional[Gateway] = None) -> dict:
    graph = load_data(cfg)
    targets = targets_by_id(graph)
    splits = make_splits(list(targets.values()), cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "splits.json").write_text(json.dumps(splits.to_json()), encoding="utf-8")
    gateway = gateway or make_gateway(cfg)
    chosen = _selector_ids(splits, cfg)
    log_path = cfg.out / "gain_tuples.jsonl"
    log = GainLog(log_path)
    summary: dict = {}
    with (cfg.out / "groups.jsonl").open("w", encoding="utf-8") as fh:
        for part, ids in chosen.items():
            groups: list[RankingGroup] = []
            for tid in ids:
                lab = targets[tid]
                groups += build_expansion_tree(
                    lab, target_view(graph, lab), cfg.labeling.tree_depth, cfg.labeling.branching
                )
            labeled, stats = label_groups(
                groups, gateway, graph, cfg.labeling.lambda_conf, log, max_workers=cfg.labeling.workers
            )
            for g in labeled:
                fh.write(json.dumps({"split": part, **g.to_json()}) + "\n")
            summary[part] = {"targets": len(ids), "groups": len(labeled), "dropped": stats.groups_dropped}
    return summary


def load_groups(cfg: PipelineConfig) -> dict[str, list[RankingGroup]]:
    path = _require(cfg.out / "groups.jsonl", "label-gains")
    out: dict[str, list[RankingGroup]] = {"train": [], "val": [], "test": []}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            obj = json.loads(line)
            out[obj["split"]].append(RankingGroup.from_json(obj))
    return out


# -- stage: train-selector / eval-selector ---------------------------------

def _embed(groups: Sequence[RankingGroup], graph: InvestmentGraph, encoder: TextEncoder) -> Optional[GroupTensors]:
    if not groups:
        return None
    return embed_groups(groups, encoder, lambda lab: target_view(graph, lab))


def stage_train_selector(cfg: PipelineConfig) -> dict:
    groups = load_groups(cfg)
    graph = load_data(cfg)
    encoder = make_encoder(cfg)
    train = _embed(groups["train"], graph, encoder)
    if train is None:
        raise ValueError("no training groups; label more targets")
    val = _embed(groups["val"], graph, encoder)
    sel_cfg = replace(cfg.selector, seed=cfg.seed)
    model, log = train_selector(train, sel_cfg, val)
    model.save(cfg.out / "selector.json")
    write_training_log(cfg.out / "selector_log.csv", log)
    return {"best_epoch": model.meta.get("best_epoch"), "final_loss": log[-1].loss, "groups": len(train)}


def stage_eval_selector(cfg: PipelineConfig) -> dict:
    model_path = _require(cfg.out / "selector.json", "train-selector")
    groups = load_groups(cfg)
    graph = load_data(cfg)
    data = _embed(groups["test"] or groups["val"], graph, make_encoder(cfg))
    if data is None:
        raise ValueError("no held-out groups to evaluate")
    model = SelectorModel.load(model_path)
    res = {"selector": evaluate_selector(model, data), "random": random_baseline(data, cfg.seed)}
    (cfg.out / "selector_eval.json").write_text(json.dumps(res, indent=2, sort_keys=True), encoding="utf-8")
    return res


# -- stage: run-agents -----------------------------------------------------

def _disabled(cfg: PipelineConfig) -> set[Agent]:
    r = cfg.retrieval
    off = set()
    if not r.use_graph:
        off.add(Agent.IC)
    if not r.use_peers:
        off.add(Agent.PC)
    if not r.use_investor:
        off.add(Agent.IP)
    return off


def _target_seed(seed: int, target_id: str) -> list[int]:
    return [seed, zlib.crc32(target_id.encode("utf-8"))]


@dataclass
class AgentContext:
    graph: InvestmentGraph
    encoder: TextEncoder
    gateway: Gateway
    selector: Optional[SelectorModel]
    cfg: PipelineConfig
    stats: AgentStats = field(default_factory=AgentStats)


def select_paths(lab: TargetLabel, ctx: AgentContext):
    r = ctx.cfg.retrieval
    view = target_view(ctx.graph, lab)
    if r.path_mode == "selector":
        return extract_paths(lab, view, ctx.selector, ctx.encoder, r.num_paths, r.max_depth, r.max_candidates)
    if r.path_mode == "random":
        rng = np.random.default_rng(_target_seed(ctx.cfg.seed, lab.company.id))
        return random_paths(lab, view, r.num_paths, r.max_depth, rng)
    return exhaustive_paths(lab, view, r.all_depth)


def build_bundle(lab: TargetLabel, ctx: AgentContext):
    r = ctx.cfg.retrieval
    off = _disabled(ctx.cfg)
    view = target_view(ctx.graph, lab)
    paths = select_paths(lab, ctx) if Agent.IC not in off else []
    peers = None
    if Agent.PC not in off:
        peers = retrieve_peers(ctx.graph.company(lab.company), ctx.graph, ctx.encoder, lab.t0, r.peers)
    profile = None
    if Agent.IP not in off:
        lead = select_lead_investor(lab.company, ctx.graph)
        if lead is not None:
            profile = build_investor_profile(lead, lab.t0, ctx.graph, r.history)
    budget = ctx.cfg.gateway.context_tokens * CHARS_PER_TOKEN - 6_000
    return render_prompts(lab.company, view, ctx.graph, paths, peers, profile, budget, off), off


def agent_verdicts(lab: TargetLabel, ctx: AgentContext) -> list[AgentVerdict]:
    bundle, off = build_bundle(lab, ctx)
    verdicts = run_specialists(bundle, ctx.gateway, ctx.stats, parallel=False, disabled=off)
    if ctx.cfg.fusion == "single":
        name = ctx.graph.name_of(lab.company)
        verdicts.append(ask(Agent.SINGLE, combined_prompt(bundle, name), ctx.gateway, ctx.stats))
    return verdicts


def _run_targets(fn, items: Sequence, workers: int) -> list:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def stage_run_agents(cfg: PipelineConfig, gateway: Optional[Gateway] = None) -> dict:
    graph = load_data(cfg)
    selector = None
    if cfg.retrieval.path_mode == "selector" and cfg.retrieval.use_graph:
        selector = SelectorModel.load(_require(cfg.out / "selector.json", "train-selector"))
    targets = targets_by_id(graph)
    splits = make_splits(list(targets.values()), cfg)
    ctx = AgentContext(graph, make_encoder(cfg), gateway or make_gateway(cfg), selector, cfg)
    ids = splits.dev() + splits.eval
    results = _run_targets(lambda tid: agent_verdicts(targets[tid], ctx), ids, cfg.workers)
    n = write_verdicts(cfg.out / "verdicts.jsonl", ((tid, v) for tid, vs in zip(ids, results) for v in vs))
    meta = {
        "path_mode": cfg.retrieval.path_mode,
        "fusion": cfg.fusion,
        "disabled": sorted(a.value for a in _disabled(cfg)),
        "targets": len(ids),
        "verdicts": n,
        "unparseable": ctx.stats.unparseable,
        "failed": ctx.stats.failed,
    }
    (cfg.out / "agents_meta.json").write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")
    return meta


# -- stage: train-gate -----------------------------------------------------

def attribute_vocab(graph: InvestmentGraph) -> list[str]:
    industries = sorted({c.industry for c in graph.companies() if c.industry})
    regions = sorted({c.region for c in graph.companies() if c.region})
    return [f"industry={v}" for v in industries] + [f"region={v}" for v in regions] + ["round=angel", "round=seed"]


def attribute_vector(lab: TargetLabel, graph: InvestmentGraph, vocab: Sequence[str]) -> np.ndarray:
    rec = graph.company(lab.company)
    rounds = {e.round.value for e in first_round_edges(lab.company, graph)}
    on = {f"industry={rec.industry}", f"region={rec.region}"} | {f"round={r}" for r in rounds}
    return np.array([1.0 if v in on else 0.0 for v in vocab])


def gate_dataset(
    ids: Sequence[str],
    verdicts: Mapping[str, Mapping[Agent, AgentVerdict]],
    targets: Mapping[str, TargetLabel],
    graph: InvestmentGraph,
    encoder: TextEncoder,
) -> GateData:
    vocab = attribute_vocab(graph)
    r = np.zeros((len(ids), len(VIEWS), encoder.dim))
    a = np.zeros((len(ids), len(vocab)))
    y = np.zeros(len(ids))
    for i, tid in enumerate(ids):
        vs = verdicts[tid]
        r[i] = encoder.encode_many([vs[ag].rationale for ag in VIEWS])
        a[i] = attribute_vector(targets[tid], graph, vocab)
        y[i] = targets[tid].y
    return GateData(r, a, y)


def _load_verdicts(cfg: PipelineConfig):
    return read_verdicts(_require(cfg.out / "verdicts.jsonl", "run-agents"))


def stage_train_gate(cfg: PipelineConfig) -> dict:
    verdicts = _load_verdicts(cfg)
    graph = load_data(cfg)
    targets = targets_by_id(graph)
    splits = make_splits(list(targets.values()), cfg)
    enc = make_encoder(cfg)
    train = gate_dataset(splits.train, verdicts, targets, graph, enc)
    val = gate_dataset(splits.val, verdicts, targets, graph, enc) if splits.val else None
    test = gate_dataset(splits.test, verdicts, targets, graph, enc) if splits.test else val
    gate_cfg = replace(cfg.gate, seed=cfg.seed)
    res = train_gate(train, gate_cfg, val)
    res.model.save(cfg.out / "gate.json")
    write_gate_log(cfg.out / "gate_log.csv", res.log)
    out = {"best_epoch": res.best_epoch}
    if test is not None:
        out["test"] = evaluate_gate(res.model, test, gate_cfg.threshold)
        out["random_weights"] = random_weight_baseline(train, test, gate_cfg)
    (cfg.out / "gate_eval.json").write_text(json.dumps(out, indent=2, sort_keys=True), encoding="utf-8")
    return out


# -- stage: predict --------------------------------------------------------

def stage_predict(cfg: PipelineConfig, gateway: Optional[Gateway] = None) -> dict:
    if cfg.retrieval.path_mode == "selector" and cfg.retrieval.use_graph:
        _require(cfg.out / "selector.json", "train-selector")
    verdicts = _load_verdicts(cfg)
    meta = json.loads(_require(cfg.out / "agents_meta.json", "run-agents").read_text(encoding="utf-8"))
    if (meta.get("fusion") == "single") != (cfg.fusion == "single"):
        raise MissingArtifact(cfg.out / "verdicts.jsonl", f"run-agents --fusion={cfg.fusion}")
    gate = GateModel.load(_require(cfg.out / "gate.json", "train-gate")) if cfg.fusion == "gate" else None
    graph = load_data(cfg)
    targets = targets_by_id(graph)
    splits = make_splits(list(targets.values()), cfg)
    gateway = gateway or make_gateway(cfg)
    enc = make_encoder(cfg)
    stats = AgentStats()
    data = gate_dataset(splits.eval, verdicts, targets, graph, enc) if gate is not None and splits.eval else None
    gate_out = gate.forward_batch(data.r, data.a) if data is not None else None

    def one(i: int) -> PredictionRecord:
        tid = splits.eval[i]
        lab = targets[tid]
        vs = verdicts[tid]
        per_view = {a.value: vs[a].prediction for a in VIEWS if vs[a].available}
        if cfg.fusion == "single":
            final = vs[Agent.SINGLE]
            return PredictionRecord(tid, lab.t0, lab.y, int(final.prediction), float(final.prediction), "verdict", [], per_view)
        if gate_out is not None:
            w = [float(x) for x in gate_out[0][i]]
            p_gate = float(gate_out[2][i])
        else:
            w, p_gate = [1.0 / 3] * 3, None
        view = target_view(graph, lab)
        final = run_manager(
            [vs[a] for a in VIEWS], w, company_block(lab.company, view, show_outcome=False),
            graph.name_of(lab.company), gateway, stats,
        )
        pred = int(final.prediction)
        if p_gate is not None:
            conf, source = (pred + p_gate) / 2.0, "verdict+gate"
        else:
            conf, source = float(pred), "verdict"
        return PredictionRecord(tid, lab.t0, lab.y, pred, conf, source, w, per_view, p_gate)

    records = _run_targets(one, list(range(len(splits.eval))), cfg.workers)
    write_predictions(cfg.out / "predictions.jsonl", records)
    return {"predictions": len(records), "positives_predicted": sum(r.y_pred for r in records)}


# -- stage: evaluate -------------------------------------------------------

def stage_evaluate(cfg: PipelineConfig, baselines_path: Optional[str | Path] = None, shuffles: int = 20) -> dict:
    records = read_predictions(_require(cfg.out / "predictions.jsonl", "predict"))
    baselines: dict[str, dict] = {}
    if records:
        acc: dict[str, float] = {}
        for s in range(shuffles):
            m = summary_metrics(shuffled_labels(records, cfg.seed + s))
            for k, v in m.items():
                if v is not None:
                    acc[k] = acc.get(k, 0.0) + v / shuffles
        baselines["shuffled"] = acc
    if baselines_path is not None:
        baselines["baseline"] = read_metrics_csv(baselines_path)
    return report(records, cfg.out, baselines)


STAGES = {
    "gen-data": stage_gen_data,
    "label-gains": stage_label_gains,
    "train-selector": stage_train_selector,
    "eval-selector": stage_eval_selector,
    "run-agents": stage_run_agents,
    "train-gate": stage_train_gate,
    "predict": stage_predict,
    "evaluate": stage_evaluate,
}

STAGE_OUTPUTS = {
    "gen-data": ["data/companies.jsonl", "data/investors.jsonl", "data/investments.jsonl"],
    "label-gains": ["splits.json", "groups.jsonl", "gain_tuples.jsonl"],
    "train-selector": ["selector.json", "selector_log.csv"],
    "eval-selector": ["selector_eval.json"],
    "run-agents": ["verdicts.jsonl", "agents_meta.json"],
    "train-gate": ["gate.json", "gate_log.csv", "gate_eval.json"],
    "predict": ["predictions.jsonl"],
    "evaluate": ["metrics.csv", "monthly.csv"],
}


def run_all(cfg: PipelineConfig, skip_data: bool = False) -> dict:
    out = {}
    for name in STAGES:
        if name == "gen-data" and skip_data:
            continue
        out[name] = STAGES[name](cfg)
    return out
