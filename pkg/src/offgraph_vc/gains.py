"""Oracle information-gain labels for candidate path expansions.

For each labeled target a breadth-first expansion tree is built on the
leakage-safe view; every (path, candidate) pair is scored by a frozen LM and
converted to a gain: cross-entropy reduction plus a confidence-shift bonus.
"""

from __future__ import annotations

import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .graph import (
    GraphView,
    InvestmentEdge,
    InvestmentGraph,
    NodeId,
    NodeKind,
    TargetLabel,
    parse_round,
    target_view,
)
from .llm import Gateway, GatewayError, binary_probability, prompt_hash
from .profiles import node_block

logger = logging.getLogger(__name__)

PROB_EPS = 1e-6
DEFAULT_LAMBDA_CONF = 0.2
LAMBDA_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


def node_to_str(node: NodeId) -> str:
    return f"{node.kind.value}:{node.id}"


def node_from_str(s: str) -> NodeId:
    kind, _, ident = s.partition(":")
    return NodeId(NodeKind(kind), ident)


@dataclass(frozen=True)
class PathState:
    """Path ``<c*, ..., u>`` starting at the target company."""

    nodes: tuple[NodeId, ...]
    edges: tuple[InvestmentEdge, ...] = ()

    def __post_init__(self) -> None:
        if not self.nodes:
            raise ValueError("empty path")
        if self.nodes[0].kind is not NodeKind.COMPANY:
            raise ValueError("path must start at a company")
        if len(self.edges) != len(self.nodes) - 1:
            raise ValueError("edges must parallel consecutive node pairs")
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("path repeats a node")
        for a, b in zip(self.nodes, self.nodes[1:]):
            if a.kind is b.kind:
                raise ValueError("path must alternate company/investor")

    @property
    def target(self) -> NodeId:
        return self.nodes[0]

    @property
    def hop(self) -> int:
        return len(self.nodes) - 1

    @property
    def last(self) -> NodeId:
        return self.nodes[-1]

    def extend(self, node: NodeId, edge: InvestmentEdge) -> "PathState":
        return PathState(self.nodes + (node,), self.edges + (edge,))

    def to_json(self) -> dict:
        return {"nodes": [node_to_str(n) for n in self.nodes], "edges": [e.to_json() for e in self.edges]}

    @classmethod
    def from_json(cls, obj: dict) -> "PathState":
        from .graph import company, investor

        edges = tuple(
            InvestmentEdge(
                investor(e["investor"]),
                company(e["company"]),
                date.fromisoformat(e["date"]),
                parse_round(e["round"]),
                e.get("amount"),
            )
            for e in obj.get("edges", ())
        )
        return cls(tuple(node_from_str(n) for n in obj["nodes"]), edges)


@dataclass
class Candidate:
    node: NodeId
    path: PathState
    gain: Optional[float] = None
    p: Optional[float] = None


@dataclass
class RankingGroup:
    label: TargetLabel
    base: PathState
    candidates: list[Candidate]
    p_base: Optional[float] = None

    @property
    def hop(self) -> int:
        return self.base.hop

    @property
    def gains(self) -> list[float]:
        if any(c.gain is None for c in self.candidates):
            raise ValueError("group has unlabeled candidates")
        return [float(c.gain) for c in self.candidates]

    def to_json(self) -> dict:
        return {
            "target": self.label.company.id,
            "t0": self.label.t0.isoformat(),
            "y": self.label.y,
            "hop": self.hop,
            "p_base": self.p_base,
            "base": self.base.to_json(),
            "candidates": [
                {"node": node_to_str(c.node), "gain": c.gain, "p": c.p, "path": c.path.to_json()}
                for c in self.candidates
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RankingGroup":
        from .graph import company

        label = TargetLabel(company(obj["target"]), date.fromisoformat(obj["t0"]), int(obj["y"]))
        cands = [
            Candidate(node_from_str(c["node"]), PathState.from_json(c["path"]), c.get("gain"), c.get("p"))
            for c in obj["candidates"]
        ]
        return cls(label, PathState.from_json(obj["base"]), cands, obj.get("p_base"))


@dataclass(frozen=True)
class GainTuple:
    target_id: str
    hop: int
    base_path: tuple[str, ...]
    candidate_id: str
    p_base: float
    p_v: float
    y: int
    delta: float
    lambda_conf: float
    base_prompt_hash: str
    candidate_prompt_hash: str

    def to_json(self) -> dict:
        d = self.__dict__.copy()
        d["base_path"] = list(self.base_path)
        return d


# -- tree construction -----------------------------------------------------

def build_expansion_tree(
    target: TargetLabel,
    view: GraphView,
    max_depth: int = 3,
    branching: int = 3,
) -> list[RankingGroup]:
    """BFS groups around the target (gains unset).

    Each expanded node contributes one group holding up to ``branching``
    neighbors not yet seen anywhere in this tree. Groups exist for hops
    ``0 .. max_depth - 1``.
    """
    root = target.company
    if root not in view:
        raise KeyError(f"target {root} not in view")
    visited = {root}
    frontier = [PathState((root,))]
    groups: list[RankingGroup] = []
    for _hop in range(max_depth):
        nxt: list[PathState] = []
        for path in frontier:
            cands = []
            for nb, edge in view.neighbors(path.last):
                if nb in visited:
                    continue
                cands.append(Candidate(nb, path.extend(nb, edge)))
                if len(cands) == branching:
                    break
            if not cands:
                continue
            visited.update(c.node for c in cands)
            groups.append(RankingGroup(target, path, cands))
            nxt.extend(c.path for c in cands)
        frontier = nxt
    return groups


# -- verbalization ---------------------------------------------------------

def chain_line(path: PathState, view: GraphView) -> str:
    parts = [view.name_of(path.nodes[0])]
    for prev, node in zip(path.nodes, path.nodes[1:]):
        arrow = "←" if prev.kind is NodeKind.COMPANY else "→"
        parts.append(f"{arrow} {view.name_of(node)}")
    return " ".join(parts)


def verbalize_path(path: PathState, view: GraphView, cache: Optional[dict] = None) -> str:
    """Chain notation followed by one profile block per node.

    The target's own outcome is never rendered. ``cache`` memoizes node
    blocks and must only be shared between calls on the same view.
    """
    blocks = []
    if len(path.nodes) > 1:
        blocks.append("### Investment Path ###\n" + chain_line(path, view))
    for i, node in enumerate(path.nodes):
        key = (node, i > 0)
        if cache is not None and key in cache:
            blocks.append(cache[key])
            continue
        block = node_block(node, view, show_outcome=i > 0)
        if cache is not None:
            cache[key] = block
        blocks.append(block)
    return "\n\n".join(blocks)


SCORING_TEMPLATE = """Role: You are a venture-capital analyst judging whether a seed / angel-stage
      start-up will raise a Series A round within the next 12 months.

Evidence retrieved for {name}:
{evidence}

Question: Will {name} raise a Series A round within 12 months? Answer True or False.
Answer:"""


def scoring_prompt(path: PathState, view: GraphView) -> str:
    return SCORING_TEMPLATE.format(name=view.name_of(path.target), evidence=verbalize_path(path, view))


# -- gain ------------------------------------------------------------------

def _clamp(p: float) -> float:
    return min(max(float(p), PROB_EPS), 1.0 - PROB_EPS)


def binary_cross_entropy(y: int, p: float) -> float:
    p = _clamp(p)
    return -math.log(p) if y else -math.log(1.0 - p)


def compute_gain(y: int, p_base: float, p_v: float, lambda_conf: float = DEFAULT_LAMBDA_CONF) -> float:
    """Cross-entropy reduction plus ``lambda_conf`` times the confidence shift."""
    if y not in (0, 1):
        raise ValueError("y must be 0 or 1")
    if not 0.0 <= lambda_conf <= 1.0:
        raise ValueError("lambda_conf must lie in [0, 1]")
    pb, pv = _clamp(p_base), _clamp(p_v)
    ce_drop = binary_cross_entropy(y, pb) - binary_cross_entropy(y, pv)
    return ce_drop + lambda_conf * (abs(pv - 0.5) - abs(pb - 0.5))


# -- labeling --------------------------------------------------------------

class GainLog:
    """Append-only ``gain_tuples.jsonl`` with prompt-hash reuse for resumption."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._probs: dict[str, float] = {}
        self._seen: set[tuple[str, str, float]] = set()
        self._lock = threading.Lock()
        self.tuples: list[GainTuple] = []
        if self.path and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                d = json.loads(line)
                self._probs[d["base_prompt_hash"]] = d["p_base"]
                self._probs[d["candidate_prompt_hash"]] = d["p_v"]
                self._seen.add((d["base_prompt_hash"], d["candidate_prompt_hash"], d["lambda_conf"]))

    def cached_prob(self, h: str) -> Optional[float]:
        return self._probs.get(h)

    def write(self, tuples: Iterable[GainTuple]) -> int:
        new = []
        with self._lock:
            for t in tuples:
                key = (t.base_prompt_hash, t.candidate_prompt_hash, t.lambda_conf)
                if key in self._seen:
                    continue
                self._seen.add(key)
                self._probs[t.base_prompt_hash] = t.p_base
                self._probs[t.candidate_prompt_hash] = t.p_v
                new.append(t)
            self.tuples.extend(new)
            if self.path and new:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    for t in new:
                        fh.write(json.dumps(t.to_json()) + "\n")
        return len(new)


@dataclass
class LabelingStats:
    groups_in: int = 0
    groups_labeled: int = 0
    groups_dropped: int = 0
    calls: int = 0
    tuples_written: int = 0
    dropped_targets: list[str] = field(default_factory=list)


def _score(prompt: str, gateway: Gateway, log: GainLog) -> tuple[float, bool]:
    cached = log.cached_prob(prompt_hash(prompt))
    if cached is not None:
        return cached, False
    return binary_probability(gateway.score_labels(prompt)), True


def label_group(
    group: RankingGroup,
    gateway: Gateway,
    graph: InvestmentGraph,
    lambda_conf: float = DEFAULT_LAMBDA_CONF,
    log: Optional[GainLog] = None,
) -> tuple[RankingGroup, list[GainTuple], int]:
    """Score one group; raises GatewayError if any call fails after retries."""
    log = log if log is not None else GainLog()
    view = target_view(graph, group.label)
    calls = 0
    base_prompt = scoring_prompt(group.base, view)
    p_base, fresh = _score(base_prompt, gateway, log)
    calls += fresh
    base_hash = prompt_hash(base_prompt)
    cands, tuples = [], []
    y = group.label.y
    for c in group.candidates:
        prompt = scoring_prompt(c.path, view)
        p_v, fresh = _score(prompt, gateway, log)
        calls += fresh
        delta = compute_gain(y, p_base, p_v, lambda_conf)
        cands.append(replace(c, gain=delta, p=p_v))
        tuples.append(
            GainTuple(
                target_id=group.label.company.id,
                hop=group.hop,
                base_path=tuple(node_to_str(n) for n in group.base.nodes),
                candidate_id=node_to_str(c.node),
                p_base=p_base,
                p_v=p_v,
                y=y,
                delta=delta,
                lambda_conf=lambda_conf,
                base_prompt_hash=base_hash,
                candidate_prompt_hash=prompt_hash(prompt),
            )
        )
    return RankingGroup(group.label, group.base, cands, p_base), tuples, calls


def label_groups(
    groups: Sequence[RankingGroup],
    gateway: Gateway,
    graph: InvestmentGraph,
    lambda_conf: float = DEFAULT_LAMBDA_CONF,
    log: Optional[GainLog] = None,
    max_workers: int = 1,
) -> tuple[list[RankingGroup], LabelingStats]:
    """Fill in gains for every group; failed groups are dropped and counted.

    Results (and log lines) keep the input order regardless of concurrency.
    """
    log = log if log is not None else GainLog()
    stats = LabelingStats(groups_in=len(groups))

    def work(g: RankingGroup):
        try:
            return label_group(g, gateway, graph, lambda_conf, log)
        except GatewayError as exc:
            logger.warning("dropping group for %s hop %d: %s", g.label.company.id, g.hop, exc)
            return None

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(work, groups))
    else:
        results = [work(g) for g in groups]

    out = []
    for g, res in zip(groups, results):
        if res is None:
            stats.groups_dropped += 1
            stats.dropped_targets.append(g.label.company.id)
            continue
        labeled, tuples, calls = res
        stats.calls += calls
        stats.tuples_written += log.write(tuples)
        out.append(labeled)
    stats.groups_labeled = len(out)
    return out, stats
