"""Cutoff-filtered text profiles for companies and investors."""

from __future__ import annotations

import logging

from .graph import GraphView, NodeId, NodeKind, known_outcome

logger = logging.getLogger(__name__)

UNKNOWN_ENTITY = "[unknown entity]"


def outcome_tag(y: int) -> str:
    return "(success)" if y else "(failure)"


def _money(amount: float) -> str:
    return f"USD {amount / 1e6:.2f} M"


def company_block(node: NodeId, view: GraphView, show_outcome: bool = True) -> str:
    try:
        rec = view.company(node)
    except KeyError:
        logger.warning("no record for %s", node)
        return f"### Company Profile ###\n{UNKNOWN_ENTITY}"
    edges = view.incident_edges(node)
    first = [e for e in edges if e.round.is_first_round]
    lines = [
        "### Company Profile ###",
        f"Company name    : {rec.name}",
        f"Founded year    : {rec.founded.year}",
    ]
    if rec.headquarters or rec.region:
        lines.append(f"Headquarters    : {rec.headquarters or rec.region}")
    if rec.industry:
        lines.append(f"Industry        : {rec.industry}")
    if rec.employees is not None:
        lines.append(f"Employees       : {rec.employees}")
    if edges:
        total = sum(e.amount for e in edges if e.amount is not None)
        last = edges[0]
        round_name = last.round.value.replace("_", " ").title()
        lines.append(f"Funding to date : {_money(total)} ({round_name} round, {last.timestamp:%b-%Y})")
    if first:
        t0 = min(e.timestamp for e in first)
        leads = sorted(
            (e for e in first if e.timestamp == t0),
            key=lambda e: (-(e.amount if e.amount is not None else -1.0), e.investor.id),
        )
        lines.append("Lead investors  : " + ", ".join(view.name_of(e.investor) for e in leads))
    if rec.description:
        lines.append(f"Company overview: {rec.description}")
    if show_outcome and view.cutoff is not None:
        lab = known_outcome(node, view.graph, view.cutoff)
        if lab is not None:
            verdict = "Series A within 12 months" if lab.y else "no Series A within 12 months"
            lines.append(f"Outcome         : {verdict} {outcome_tag(lab.y)}")
    return "\n".join(lines)


def investor_block(node: NodeId, view: GraphView) -> str:
    try:
        rec = view.investor(node)
    except KeyError:
        logger.warning("no record for %s", node)
        return f"### Investor Profile ###\n{UNKNOWN_ENTITY}"
    deals = view.incident_edges(node)
    lines = ["### Investor Profile ###", f"Investor name: {rec.name}"]
    if rec.description:
        lines.append(f"Background   : {rec.description}")
    lines.append(f"Deals on record: {len(deals)}")
    return "\n".join(lines)


def node_block(node: NodeId, view: GraphView, show_outcome: bool = True) -> str:
    if node.kind is NodeKind.COMPANY:
        return company_block(node, view, show_outcome)
    return investor_block(node, view)
