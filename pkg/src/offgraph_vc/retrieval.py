"""Peer companies and lead-investor résumé, both cut off at the target's t0."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date
from typing import Mapping, Optional

import numpy as np

from .encoders import TextEncoder
from .graph import (
    CompanyRecord,
    EmploymentEntry,
    GraphView,
    InvestmentEdge,
    InvestmentGraph,
    NodeId,
    NodeKind,
    TargetLabel,
    first_round_edges,
    known_outcome,
)
from .profiles import company_block, outcome_tag

logger = logging.getLogger(__name__)

DEFAULT_PEERS = 4
DEFAULT_HISTORY = 5


@dataclass(frozen=True)
class Peer:
    record: CompanyRecord
    similarity: float
    y: int


@dataclass
class PeerSet:
    target: NodeId
    peers: list[Peer] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.peers)


@dataclass(frozen=True)
class PortfolioEntry:
    company: NodeId
    edge: InvestmentEdge
    y: int


@dataclass
class LeadInvestorProfile:
    investor: NodeId
    cutoff: date
    demographics: Mapping[str, str] = field(default_factory=dict)
    employment: list[EmploymentEntry] = field(default_factory=list)
    investments: list[PortfolioEntry] = field(default_factory=list)


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.where(norms > 0, norms, 1.0)


def retrieve_peers(
    target: CompanyRecord,
    graph: InvestmentGraph,
    encoder: TextEncoder,
    cutoff: date,
    k: int = DEFAULT_PEERS,
) -> PeerSet:
    """Top-``k`` companies by description cosine similarity.

    Eligible peers were founded strictly before the target and have an
    outcome window that closed before ``cutoff`` (the target's t0).
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    if not target.description.strip():
        raise ValueError(f"{target.node} has no description")
    pool: list[tuple[CompanyRecord, int]] = []
    for rec in graph.companies():
        if rec.node == target.node or not rec.founded < target.founded or not rec.description.strip():
            continue
        lab = known_outcome(rec.node, graph, cutoff)
        if lab is not None:
            pool.append((rec, lab.y))
    out = PeerSet(target.node)
    if not pool or k == 0:
        return out
    q = encoder.encode(target.description)
    q = q / (np.linalg.norm(q) or 1.0)
    mat = _unit_rows(encoder.encode_many([rec.description for rec, _ in pool]))
    sims = np.clip(mat @ q, -1.0, 1.0)
    order = sorted(range(len(pool)), key=lambda i: (-sims[i], pool[i][0].node.id))
    out.peers = [Peer(pool[i][0], float(sims[i]), pool[i][1]) for i in order[:k]]
    return out


def _lead_key(e: InvestmentEdge) -> tuple:
    return (e.amount is None, -(e.amount or 0.0), e.timestamp, e.investor.id)


def select_lead_investor(target: NodeId, graph: InvestmentGraph | GraphView) -> Optional[NodeId]:
    """Largest committed amount in the first disclosed round.

    Unknown amounts sort last; ties go to the earliest edge, then lowest id.
    """
    edges = first_round_edges(target, graph)
    if not edges:
        return None
    return min(edges, key=_lead_key).investor


def build_investor_profile(
    investor: NodeId,
    t0: date,
    graph: InvestmentGraph,
    n: int = DEFAULT_HISTORY,
) -> LeadInvestorProfile:
    rec = graph.investor(investor)
    jobs = sorted((j for j in rec.employment if j.date < t0), key=lambda j: (j.date, j.role), reverse=True)
    view = graph.view(t0)
    entries: list[PortfolioEntry] = []
    seen: set[NodeId] = set()
    for e in view.incident_edges(investor):  # newest first
        if len(entries) >= n:
            break
        if e.company in seen:
            continue
        seen.add(e.company)
        lab = known_outcome(e.company, graph, t0)
        if lab is None:
            continue
        entries.append(PortfolioEntry(e.company, e, lab.y))
    return LeadInvestorProfile(investor, t0, dict(rec.demographics), jobs[:n], entries)


def _first_sentence(text: str) -> str:
    head = text.strip().split(". ")[0]
    return head if head.endswith(".") else head + "."


def investor_profile_block(profile: LeadInvestorProfile, graph: InvestmentGraph) -> str:
    rec = graph.investor(profile.investor)
    lines = ["### Lead-Investor Profile ###", f"Investor name: {rec.name}"]
    if rec.description:
        lines.append(f"Background   : {rec.description}")
    if profile.demographics:
        lines.append("Demographics : " + ", ".join(f"{k} {v}" for k, v in sorted(profile.demographics.items())))
    lines.append("")
    lines.append("Previous positions")
    if profile.employment:
        lines.extend(f"• {j.role} ({j.date:%Y})" for j in profile.employment)
    else:
        lines.append("• none on record")
    lines.append("")
    lines.append("Investment record")
    if profile.investments:
        for entry in profile.investments:
            c = graph.company(entry.company)
            rnd = entry.edge.round.value.replace("_", " ").title()
            lines.append(
                f"• {c.name} ({rnd}, {entry.edge.timestamp:%b-%Y}): {_first_sentence(c.description)} "
                f"{outcome_tag(entry.y)}"
            )
    else:
        lines.append("• none on record")
    return "\n".join(lines)


def peer_blocks(peers: PeerSet, graph: InvestmentGraph, cutoff: date) -> list[str]:
    view = graph.view(cutoff)
    return [company_block(p.record.node, view, show_outcome=True) for p in peers.peers]


def audit_retrieval(
    label: TargetLabel,
    graph: InvestmentGraph,
    peers: PeerSet,
    profile: Optional[LeadInvestorProfile],
) -> list[str]:
    """Describe every retrieved item that depends on an event dated >= t0."""
    t0 = label.t0
    issues = []
    target = graph.company(label.company)
    for p in peers.peers:
        if not p.record.founded < target.founded:
            issues.append(f"peer {p.record.node.id} founded {p.record.founded} not before target")
        lab = known_outcome(p.record.node, graph, t0)
        if lab is None or lab.y != p.y:
            issues.append(f"peer {p.record.node.id} label not fixed before {t0}")
    if profile is not None:
        for j in profile.employment:
            if not j.date < t0:
                issues.append(f"employment entry dated {j.date}")
        for entry in profile.investments:
            if not entry.edge.timestamp < t0:
                issues.append(f"investment edge dated {entry.edge.timestamp}")
            lab = known_outcome(entry.company, graph, t0)
            if lab is None or lab.y != entry.y:
                issues.append(f"portfolio {entry.company.id} label not fixed before {t0}")
    return issues


def is_company(node: NodeId) -> bool:
    return node.kind is NodeKind.COMPANY
