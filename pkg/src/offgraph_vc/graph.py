"""Time-stamped company/investor investment network.

The graph is immutable after loading. Leakage control happens through
:class:`GraphView`, which hides every edge dated on or after its cutoff.
"""

from __future__ import annotations

import bisect
import calendar
import json
import logging
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Optional, Sequence

logger = logging.getLogger(__name__)

LABEL_WINDOW_MONTHS = 12


class NodeKind(str, Enum):
    COMPANY = "company"
    INVESTOR = "investor"


class Round(str, Enum):
    ANGEL = "angel"
    SEED = "seed"
    SERIES_A = "series_a"
    LATER = "later"

    @property
    def is_first_round(self) -> bool:
        return self in (Round.ANGEL, Round.SEED)


_ROUND_ALIASES = {
    "angel": Round.ANGEL,
    "seed": Round.SEED,
    "series_a": Round.SERIES_A,
    "seriesa": Round.SERIES_A,
    "series a": Round.SERIES_A,
    "series-a": Round.SERIES_A,
    "a": Round.SERIES_A,
    "later": Round.LATER,
}


def parse_round(value: str) -> Round:
    try:
        return _ROUND_ALIASES[str(value).strip().lower()]
    except KeyError:
        raise ValueError(f"unknown round {value!r}") from None


@dataclass(frozen=True, order=True)
class NodeId:
    kind: NodeKind
    id: str

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.id}"


def company(cid: str) -> NodeId:
    return NodeId(NodeKind.COMPANY, cid)


def investor(iid: str) -> NodeId:
    return NodeId(NodeKind.INVESTOR, iid)


@dataclass(frozen=True)
class InvestmentEdge:
    investor: NodeId
    company: NodeId
    timestamp: date
    round: Round
    amount: Optional[float] = None

    def other(self, node: NodeId) -> NodeId:
        return self.company if node == self.investor else self.investor

    def to_json(self) -> dict:
        return {
            "investor": self.investor.id,
            "company": self.company.id,
            "date": self.timestamp.isoformat(),
            "round": self.round.value,
            "amount": self.amount,
        }


@dataclass(frozen=True)
class CompanyRecord:
    node: NodeId
    name: str
    founded: date
    description: str = ""
    attributes: Mapping[str, str] = field(default_factory=dict)
    headquarters: str = ""
    employees: Optional[int] = None

    @property
    def industry(self) -> str:
        return self.attributes.get("industry", "")

    @property
    def region(self) -> str:
        return self.attributes.get("region", "")


@dataclass(frozen=True)
class EmploymentEntry:
    role: str
    date: date


@dataclass(frozen=True)
class InvestorRecord:
    node: NodeId
    name: str
    description: str = ""
    demographics: Mapping[str, str] = field(default_factory=dict)
    employment: tuple[EmploymentEntry, ...] = ()


@dataclass(frozen=True)
class TargetLabel:
    company: NodeId
    t0: date
    y: int


def add_months(d: date, months: int) -> date:
    """Calendar-month arithmetic, clamping the day to the target month length."""
    idx = d.year * 12 + (d.month - 1) + months
    year, month0 = divmod(idx, 12)
    last = calendar.monthrange(year, month0 + 1)[1]
    return date(year, month0 + 1, min(d.day, last))


class GraphLoadError(ValueError):
    pass


class InvestmentGraph:
    """Immutable investor -> company network with per-node time indexes."""

    def __init__(
        self,
        companies: Iterable[CompanyRecord],
        investors: Iterable[InvestorRecord],
        edges: Iterable[InvestmentEdge],
    ):
        self._companies: dict[NodeId, CompanyRecord] = {c.node: c for c in companies}
        self._investors: dict[NodeId, InvestorRecord] = {i.node: i for i in investors}
        self._edges: tuple[InvestmentEdge, ...] = tuple(
            sorted(edges, key=lambda e: (e.timestamp, e.investor.id, e.company.id))
        )
        adj: dict[NodeId, list[tuple[int, str, InvestmentEdge]]] = {}
        for node in list(self._companies) + list(self._investors):
            adj[node] = []
        for e in self._edges:
            for node in (e.investor, e.company):
                if node not in adj:
                    raise GraphLoadError(f"edge endpoint {node} has no record")
            adj[e.investor].append((-e.timestamp.toordinal(), e.company.id, e))
            adj[e.company].append((-e.timestamp.toordinal(), e.investor.id, e))
        # Neighbor order: timestamp descending, then neighbor id.
        self._adj: dict[NodeId, tuple[InvestmentEdge, ...]] = {}
        self._adj_keys: dict[NodeId, list[int]] = {}
        for node, items in adj.items():
            items.sort(key=lambda t: (t[0], t[1]))
            self._adj[node] = tuple(t[2] for t in items)
            self._adj_keys[node] = [t[0] for t in items]

    # -- records -----------------------------------------------------------
    @property
    def num_nodes(self) -> int:
        return len(self._companies) + len(self._investors)

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    @property
    def edges(self) -> tuple[InvestmentEdge, ...]:
        return self._edges

    def companies(self) -> list[CompanyRecord]:
        return [self._companies[k] for k in sorted(self._companies)]

    def investors(self) -> list[InvestorRecord]:
        return [self._investors[k] for k in sorted(self._investors)]

    def company(self, node: NodeId | str) -> CompanyRecord:
        if isinstance(node, str):
            node = company(node)
        return self._companies[node]

    def investor(self, node: NodeId | str) -> InvestorRecord:
        if isinstance(node, str):
            node = investor(node)
        return self._investors[node]

    def __contains__(self, node: NodeId) -> bool:
        return node in self._companies or node in self._investors

    def name_of(self, node: NodeId) -> str:
        rec = self._companies.get(node) or self._investors.get(node)
        return rec.name if rec is not None else "[unknown entity]"

    def incident_edges(self, node: NodeId) -> tuple[InvestmentEdge, ...]:
        """All edges touching ``node`` in neighbor order (newest first)."""
        return self._adj.get(node, ())

    def _incident_before(self, node: NodeId, cutoff: Optional[date]) -> Sequence[InvestmentEdge]:
        edges = self._adj.get(node, ())
        if cutoff is None:
            return edges
        # keys are negated ordinals (ascending); t < cutoff  <=>  key > -cutoff
        start = bisect.bisect_right(self._adj_keys[node], -cutoff.toordinal())
        return edges[start:]

    def view(self, cutoff: Optional[date], extra_edges: Iterable[InvestmentEdge] = ()) -> "GraphView":
        return GraphView(self, cutoff, extra_edges)

    def summary(self) -> dict:
        return {
            "companies": len(self._companies),
            "investors": len(self._investors),
            "edges": len(self._edges),
        }


class GraphView:
    """Read-only window on a graph exposing only edges dated before ``cutoff``.

    ``extra_edges`` whitelists specific edges regardless of date; retrieval
    for a target uses it to expose the target's own first-round edges,
    which are the premise of the prediction rather than its outcome.
    """

    def __init__(
        self,
        graph: InvestmentGraph,
        cutoff: Optional[date],
        extra_edges: Iterable[InvestmentEdge] = (),
    ):
        self.graph = graph
        self.cutoff = cutoff
        self._extra: dict[NodeId, list[InvestmentEdge]] = {}
        for e in extra_edges:
            if cutoff is not None and e.timestamp < cutoff:
                continue
            self._extra.setdefault(e.investor, []).append(e)
            self._extra.setdefault(e.company, []).append(e)

    def visible(self, e: InvestmentEdge) -> bool:
        if self.cutoff is None or e.timestamp < self.cutoff:
            return True
        return e in self._extra.get(e.company, ())

    def incident_edges(self, node: NodeId) -> list[InvestmentEdge]:
        edges = list(self.graph._incident_before(node, self.cutoff))
        extra = self._extra.get(node)
        if extra:
            edges.extend(extra)
            edges.sort(key=lambda e: (-e.timestamp.toordinal(), e.other(node).id))
        return edges

    def neighbors(self, node: NodeId) -> list[tuple[NodeId, InvestmentEdge]]:
        """Adjacent nodes via visible edges, newest first, ties by neighbor id.

        A neighbor reachable through several edges appears once, with its
        most recent edge.
        """
        seen: set[NodeId] = set()
        out: list[tuple[NodeId, InvestmentEdge]] = []
        for e in self.incident_edges(node):
            other = e.other(node)
            if other in seen:
                continue
            seen.add(other)
            out.append((other, e))
        return out

    def edges(self) -> list[InvestmentEdge]:
        out = [e for e in self.graph.edges if self.cutoff is None or e.timestamp < self.cutoff]
        seen = set(out)
        for lst in self._extra.values():
            for e in lst:
                if e not in seen:
                    seen.add(e)
                    out.append(e)
        return out

    def companies(self) -> list[CompanyRecord]:
        """Company records founded before the cutoff."""
        return [c for c in self.graph.companies() if self.cutoff is None or c.founded < self.cutoff]

    def company(self, node: NodeId | str) -> CompanyRecord:
        return self.graph.company(node)

    def investor(self, node: NodeId | str) -> InvestorRecord:
        return self.graph.investor(node)

    def name_of(self, node: NodeId) -> str:
        return self.graph.name_of(node)

    def __contains__(self, node: NodeId) -> bool:
        return node in self.graph


def temporal_view(graph: InvestmentGraph, cutoff: date) -> GraphView:
    """View keeping only edges with ``timestamp < cutoff`` (strict)."""
    return graph.view(cutoff)


def neighbors(node: NodeId, view: GraphView | InvestmentGraph) -> list[tuple[NodeId, InvestmentEdge]]:
    if isinstance(view, InvestmentGraph):
        view = view.view(None)
    return view.neighbors(node)


# -- labels ----------------------------------------------------------------

def first_round_date(node: NodeId, graph: InvestmentGraph | GraphView) -> Optional[date]:
    dates = [e.timestamp for e in graph.incident_edges(node) if e.round.is_first_round]
    return min(dates) if dates else None


def first_round_edges(node: NodeId, graph: InvestmentGraph | GraphView) -> list[InvestmentEdge]:
    """Edges of the target's first disclosed round (all sharing the earliest date)."""
    t0 = first_round_date(node, graph)
    if t0 is None:
        return []
    return [e for e in graph.incident_edges(node) if e.round.is_first_round and e.timestamp == t0]


def label_window_end(t0: date) -> date:
    return add_months(t0, LABEL_WINDOW_MONTHS)


def compute_label(node: NodeId, graph: InvestmentGraph | GraphView) -> Optional[TargetLabel]:
    """Series A within (t0, t0 + 12 months] after the first seed/angel round."""
    if node not in graph:
        raise KeyError(f"unknown company {node}")
    t0 = first_round_date(node, graph)
    if t0 is None:
        return None
    end = label_window_end(t0)
    y = any(
        e.round is Round.SERIES_A and t0 < e.timestamp <= end
        for e in graph.incident_edges(node)
    )
    return TargetLabel(node, t0, int(y))


def known_outcome(node: NodeId, graph: InvestmentGraph, cutoff: date) -> Optional[TargetLabel]:
    """Label of ``node`` if its whole outcome window closed before ``cutoff``.

    Computed on the strict view so no event dated >= cutoff can influence it.
    """
    view = graph.view(cutoff)
    t0 = first_round_date(node, view)
    if t0 is None or not label_window_end(t0) < cutoff:
        return None
    return compute_label(node, view)


def target_view(graph: InvestmentGraph, label: TargetLabel) -> GraphView:
    """Strict view at the target's t0 plus the target's own first-round edges."""
    return graph.view(label.t0, first_round_edges(label.company, graph))


def all_targets(graph: InvestmentGraph) -> list[TargetLabel]:
    out = []
    for rec in graph.companies():
        lab = compute_label(rec.node, graph)
        if lab is not None:
            out.append(lab)
    return out


# -- loading ---------------------------------------------------------------

def _parse_date(value: Any, where: str) -> date:
    try:
        return date.fromisoformat(str(value)[:10])
    except ValueError:
        raise GraphLoadError(f"{where}: bad date {value!r}") from None


def _iter_json(lines: Iterable[str | Mapping], source: str) -> Iterator[tuple[int, Mapping]]:
    for lineno, line in enumerate(lines, start=1):
        if isinstance(line, Mapping):
            yield lineno, line
            continue
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise GraphLoadError(f"{source}:{lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise GraphLoadError(f"{source}:{lineno}: expected an object")
        yield lineno, obj


def _require(obj: Mapping, key: str, where: str) -> Any:
    if key not in obj or obj[key] is None:
        raise GraphLoadError(f"{where}: missing field {key!r}")
    return obj[key]


def load_graph(
    companies: Iterable[str | Mapping] = (),
    investors: Iterable[str | Mapping] = (),
    investments: Iterable[str | Mapping] = (),
) -> InvestmentGraph:
    """Build a graph from JSONL lines (or already-parsed dicts)."""
    comps = []
    for lineno, obj in _iter_json(companies, "companies.jsonl"):
        where = f"companies.jsonl:{lineno}"
        attrs = obj.get("attributes") or {}
        comps.append(
            CompanyRecord(
                node=company(str(_require(obj, "id", where))),
                name=str(obj.get("name") or obj["id"]),
                founded=_parse_date(_require(obj, "founded", where), where),
                description=str(obj.get("description") or ""),
                attributes={str(k): str(v) for k, v in attrs.items()},
                headquarters=str(obj.get("headquarters") or ""),
                employees=obj.get("employees"),
            )
        )
    invs = []
    for lineno, obj in _iter_json(investors, "investors.jsonl"):
        where = f"investors.jsonl:{lineno}"
        emp = tuple(
            EmploymentEntry(str(_require(h, "role", where)), _parse_date(_require(h, "date", where), where))
            for h in obj.get("employment") or ()
        )
        invs.append(
            InvestorRecord(
                node=investor(str(_require(obj, "id", where))),
                name=str(obj.get("name") or obj["id"]),
                description=str(obj.get("description") or ""),
                demographics={str(k): str(v) for k, v in (obj.get("demographics") or {}).items()},
                employment=emp,
            )
        )
    cids = {c.node for c in comps}
    iids = {i.node for i in invs}
    edges = []
    for lineno, obj in _iter_json(investments, "investments.jsonl"):
        where = f"investments.jsonl:{lineno}"
        inv = investor(str(_require(obj, "investor", where)))
        cmp_ = company(str(_require(obj, "company", where)))
        if inv not in iids:
            raise GraphLoadError(f"{where}: unknown investor id {inv.id!r}")
        if cmp_ not in cids:
            raise GraphLoadError(f"{where}: unknown company id {cmp_.id!r}")
        try:
            rnd = parse_round(_require(obj, "round", where))
        except ValueError as exc:
            raise GraphLoadError(f"{where}: {exc}") from None
        amount = obj.get("amount")
        if amount is not None:
            amount = float(amount)
            if amount < 0:
                raise GraphLoadError(f"{where}: negative amount")
        edges.append(InvestmentEdge(inv, cmp_, _parse_date(_require(obj, "date", where), where), rnd, amount))
    graph = InvestmentGraph(comps, invs, edges)
    logger.info("loaded graph: %s", graph.summary())
    return graph


def load_graph_dir(path: str | Path) -> InvestmentGraph:
    path = Path(path)

    def lines(name: str) -> list[str]:
        p = path / name
        return p.read_text(encoding="utf-8").splitlines() if p.exists() else []

    return load_graph(lines("companies.jsonl"), lines("investors.jsonl"), lines("investments.jsonl"))
