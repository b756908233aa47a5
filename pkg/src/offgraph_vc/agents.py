"""Specialist and manager prompts, verdict parsing, and the agent stage."""

from __future__ import annotations

import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .gains import PathState, chain_line
from .graph import GraphView, InvestmentGraph, NodeId, NodeKind
from .llm import MANAGER_MARKER, Gateway, GatewayError, GenerationResult, estimate_tokens, prompt_hash
from .profiles import company_block, investor_block
from .retrieval import LeadInvestorProfile, PeerSet, investor_profile_block, peer_blocks

logger = logging.getLogger(__name__)


class Agent(str, Enum):
    IC = "IC"  # investment-chain (path) analyst
    PC = "PC"  # peer-company analyst
    IP = "IP"  # investor-profile analyst
    MANAGER = "Manager"
    SINGLE = "Single"  # one agent reading all evidence (ablation)


# Canonical view order: the order the manager prompt lists the specialists.
VIEWS = (Agent.IC, Agent.PC, Agent.IP)

NO_PATH = "[no investment path retrieved]"
NO_PEERS = "[no comparable companies]"
NO_INVESTOR = "[no lead investor on record]"
VIEW_UNAVAILABLE = "view unavailable"
UNPARSEABLE = "unparseable output"

FORMAT_BLOCK = """Task:
  • Analyse the evidence and predict whether {name} will
    raise a Series-A round within 12 months.
  • Output **exactly** in the format:

      Prediction: True/False
      Analysis: <your step-by-step reasoning>

  • If evidence is insufficient, reason cautiously but still decide."""

STRICT_SUFFIX = "\n\nAnswer only in the format above: a first line 'Prediction: True' or 'Prediction: False', then 'Analysis: ...'."

PATH_TEMPLATE = """Role: You are a venture-capital analyst who reasons step by step over chains of
      co-investment linking a seed / angel-stage start-up to other companies and investors.

You are given four blocks of information:

(1) Investment paths retrieved for {name}:
{chains}

(2) Companies on the paths, each annotated with its known outcome (success = Series A
    within 12 months of its first round, failure = no such round):
{companies}

(3) Investors on the paths:
{investors}

(4) Target company profile:
{target}

""" + FORMAT_BLOCK

PEER_TEMPLATE = """Role: You are a venture-capital analyst who judges a seed / angel-stage start-up
      by the track record of comparable earlier companies.

You are given:

(1) Target company profile:
{target}

(2) Comparable companies, each annotated with its known outcome (success = Series A
    within 12 months of its first round, failure = no such round):
{peers}

""" + FORMAT_BLOCK

INVESTOR_TEMPLATE = """Role: You are a venture-capital analyst who evaluates the lead seed / angel investor
      of a start-up to judge its chance of raising a Series A.

You are given:

(1) Target company profile:
{target}

(2) Lead-investor résumé with prior roles and portfolio companies, each annotated
    success or failure:
{investor}

""" + FORMAT_BLOCK

COMBINED_TEMPLATE = """Role: You are a venture-capital analyst deciding whether a seed / angel-stage
      start-up will raise a Series A round within the next year.

You are given:

(1) Target company profile:
{target}

(2) Investment paths and the entities on them:
{paths}

(3) Comparable companies with known outcomes:
{peers}

(4) Lead-investor résumé:
{investor}

""" + FORMAT_BLOCK

MANAGER_TEMPLATE = """Role: You are a venture-capital analyst who synthesizes the verdicts of three
      specialist analysts into one final decision.

You are given:

(1) Path-analyst verdict
    • Prediction: {p_ic}
    • Analysis  : {a_ic}

(2) Similar-company analyst verdict
    • Prediction: {p_pc}
    • Analysis  : {a_pc}

(3) Lead-investor analyst verdict
    • Prediction: {p_ip}
    • Analysis  : {a_ip}

(4) """ + MANAGER_MARKER + """
    The historical importance of the three perspectives is
    {weights}

(5) Target company profile
{target}

""" + FORMAT_BLOCK

_PREDICTION_RE = re.compile(r"prediction\s*:\s*(true|false)", re.IGNORECASE)
_ANALYSIS_RE = re.compile(r"analysis\s*:[ \t]?", re.IGNORECASE)


class ParseError(ValueError):
    pass


def parse_verdict(text: str) -> tuple[bool, str]:
    """Prediction from the first ``Prediction:`` match; rationale after ``Analysis:``."""
    m = _PREDICTION_RE.search(text)
    if m is None:
        raise ParseError("no Prediction line")
    pred = m.group(1).lower() == "true"
    a = _ANALYSIS_RE.search(text, m.end())
    rationale = text[a.end():].strip() if a else ""
    return pred, rationale or text.strip()


@dataclass
class AgentVerdict:
    agent: Agent
    prediction: bool
    rationale: str
    raw: Optional[GenerationResult] = None
    status: str = "ok"  # ok | unparseable | failed | disabled
    prompt_hash: str = ""

    @property
    def available(self) -> bool:
        return self.status in ("ok", "unparseable")

    def to_json(self, target_id: str) -> dict:
        return {
            "target_id": target_id,
            "agent": self.agent.value,
            "prediction": self.prediction,
            "rationale": self.rationale,
            "prompt_hash": self.prompt_hash,
            "status": self.status,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AgentVerdict":
        return cls(
            Agent(obj["agent"]),
            bool(obj["prediction"]),
            obj["rationale"],
            status=obj.get("status", "ok"),
            prompt_hash=obj.get("prompt_hash", ""),
        )


@dataclass
class PromptBundle:
    target: NodeId
    path_prompt: str
    peer_prompt: str
    investor_prompt: str
    target_block: str
    evidence: dict = field(default_factory=dict)

    def prompt_for(self, agent: Agent) -> str:
        return {Agent.IC: self.path_prompt, Agent.PC: self.peer_prompt, Agent.IP: self.investor_prompt}[agent]


@dataclass
class AgentStats:
    unparseable: int = 0
    retried: int = 0
    failed: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def bump(self, name: str) -> None:
        with self._lock:
            setattr(self, name, getattr(self, name) + 1)


def path_evidence(
    paths: Sequence[PathState],
    view: GraphView,
    budget_chars: Optional[int] = None,
) -> tuple[str, str, str]:
    """Chain lines, company blocks and investor blocks for a set of paths.

    Each entity is rendered once. With ``budget_chars`` whole paths are
    dropped from the end until the evidence fits.
    """
    chains, comp, inv = [], [], []
    seen: set[NodeId] = set()
    used = 0
    for path in paths:
        new_c, new_i = [], []
        for node in path.nodes[1:]:
            if node in seen:
                continue
            if node.kind is NodeKind.COMPANY:
                new_c.append(company_block(node, view, show_outcome=True))
            else:
                new_i.append(investor_block(node, view))
        line = chain_line(path, view)
        size = len(line) + sum(len(b) + 2 for b in new_c + new_i)
        if budget_chars is not None and used + size > budget_chars:
            break
        used += size
        seen.update(path.nodes[1:])
        chains.append(f"{len(chains) + 1}. {line}")
        comp.extend(new_c)
        inv.extend(new_i)
    if not chains:
        return NO_PATH, NO_PATH, NO_PATH
    return "\n".join(chains), "\n\n".join(comp) or "[none]", "\n\n".join(inv) or "[none]"


def render_prompts(
    target: NodeId,
    view: GraphView,
    graph: InvestmentGraph,
    paths: Optional[Sequence[PathState]],
    peers: Optional[PeerSet],
    investor_profile: Optional[LeadInvestorProfile],
    budget_chars: Optional[int] = None,
    disabled: Iterable[Agent] = (),
) -> PromptBundle:
    """Fill the three specialist templates.

    Missing evidence renders the matching placeholder; a view listed in
    ``disabled`` renders as unavailable.
    """
    disabled = set(disabled)
    off = f"[{VIEW_UNAVAILABLE}]"
    name = view.name_of(target)
    target_block = company_block(target, view, show_outcome=False)
    if Agent.IC in disabled:
        chains = comp = inv = off
    else:
        chains, comp, inv = path_evidence(paths or [], view, budget_chars)
    path_prompt = PATH_TEMPLATE.format(name=name, chains=chains, companies=comp, investors=inv, target=target_block)
    if Agent.PC in disabled:
        peer_text = off
    elif peers is None or not peers.peers:
        peer_text = NO_PEERS
    else:
        peer_text = "\n\n".join(peer_blocks(peers, graph, view.cutoff))
    peer_prompt = PEER_TEMPLATE.format(name=name, target=target_block, peers=peer_text)
    if Agent.IP in disabled:
        inv_text = off
    elif investor_profile is None:
        inv_text = NO_INVESTOR
    else:
        inv_text = investor_profile_block(investor_profile, graph)
    investor_prompt = INVESTOR_TEMPLATE.format(name=name, target=target_block, investor=inv_text)
    evidence = {"paths": f"{chains}\n\n{comp}\n\n{inv}", "peers": peer_text, "investor": inv_text}
    return PromptBundle(target, path_prompt, peer_prompt, investor_prompt, target_block, evidence)


def combined_prompt(bundle: PromptBundle, name: str) -> str:
    """Everything in one prompt (single-agent ablation)."""
    ev = bundle.evidence
    return COMBINED_TEMPLATE.format(
        name=name, target=bundle.target_block, paths=ev["paths"], peers=ev["peers"], investor=ev["investor"]
    )


def ask(
    agent: Agent,
    prompt: str,
    gateway: Gateway,
    stats: Optional[AgentStats] = None,
) -> AgentVerdict:
    """One generation with a single stricter retry on unparseable output."""
    stats = stats or AgentStats()
    h = prompt_hash(prompt)
    try:
        res = gateway.generate(prompt)
        try:
            pred, why = parse_verdict(res.text)
            return AgentVerdict(agent, pred, why, res, "ok", h)
        except ParseError:
            stats.bump("retried")
            res = gateway.generate(prompt + STRICT_SUFFIX)
            try:
                pred, why = parse_verdict(res.text)
                return AgentVerdict(agent, pred, why, res, "ok", h)
            except ParseError:
                stats.bump("unparseable")
                logger.warning("%s: unparseable output after retry", agent.value)
                return AgentVerdict(agent, False, UNPARSEABLE, res, "unparseable", h)
    except GatewayError as exc:
        stats.bump("failed")
        logger.warning("%s: gateway failure: %s", agent.value, exc)
        return AgentVerdict(agent, False, VIEW_UNAVAILABLE, None, "failed", h)


def run_specialists(
    bundle: PromptBundle,
    gateway: Gateway,
    stats: Optional[AgentStats] = None,
    parallel: bool = True,
    disabled: Iterable[Agent] = (),
) -> list[AgentVerdict]:
    """Verdicts in canonical view order (IC, PC, IP); disabled views are not queried."""
    disabled = set(disabled)
    active = [a for a in VIEWS if a not in disabled]
    if parallel and len(active) > 1:
        with ThreadPoolExecutor(max_workers=len(active)) as pool:
            futs = {a: pool.submit(ask, a, bundle.prompt_for(a), gateway, stats) for a in active}
            done = {a: f.result() for a, f in futs.items()}
    else:
        done = {a: ask(a, bundle.prompt_for(a), gateway, stats) for a in active}
    return [done.get(a) or AgentVerdict(a, False, VIEW_UNAVAILABLE, status="disabled") for a in VIEWS]


def format_weights(weights: Sequence[float]) -> str:
    return ", ".join(f"{w:.3f}" for w in weights)


def manager_prompt(verdicts: Sequence[AgentVerdict], weights: Sequence[float], target_block: str, name: str) -> str:
    if len(verdicts) != 3 or len(weights) != 3:
        raise ValueError("manager needs three verdicts and three weights")
    if abs(sum(weights) - 1.0) > 1e-6:
        raise ValueError(f"weights must sum to 1, got {sum(weights)}")
    by_agent = {v.agent: v for v in verdicts}
    fields = {}
    for a in VIEWS:
        v = by_agent.get(a)
        key = a.value.lower()
        if v is None or not v.available:
            fields[f"p_{key}"] = "unavailable"
            fields[f"a_{key}"] = VIEW_UNAVAILABLE
        else:
            fields[f"p_{key}"] = str(v.prediction)
            fields[f"a_{key}"] = " ".join(v.rationale.split())
    return MANAGER_TEMPLATE.format(name=name, weights=format_weights(weights), target=target_block, **fields)


def run_manager(
    verdicts: Sequence[AgentVerdict],
    weights: Sequence[float],
    target_block: str,
    name: str,
    gateway: Gateway,
    stats: Optional[AgentStats] = None,
) -> AgentVerdict:
    return ask(Agent.MANAGER, manager_prompt(verdicts, weights, target_block, name), gateway, stats)


def prompt_tokens(bundle: PromptBundle) -> dict[str, int]:
    return {a.value: estimate_tokens(bundle.prompt_for(a)) for a in VIEWS}


def write_verdicts(path: str | Path, rows: Iterable[tuple[str, AgentVerdict]]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for target_id, v in rows:
            fh.write(json.dumps(v.to_json(target_id)) + "\n")
            n += 1
    return n


def read_verdicts(path: str | Path) -> dict[str, dict[Agent, AgentVerdict]]:
    out: dict[str, dict[Agent, AgentVerdict]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.setdefault(obj["target_id"], {})[Agent(obj["agent"])] = AgentVerdict.from_json(obj)
    return out
