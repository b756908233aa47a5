from __future__ import annotations

from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offgraph_vc.encoders import HashingEncoder
from offgraph_vc.graph import all_targets, company, compute_label, investor, load_graph
from offgraph_vc.retrieval import (
    audit_retrieval,
    build_investor_profile,
    investor_profile_block,
    peer_blocks,
    retrieve_peers,
    select_lead_investor,
)
from offgraph_vc.synth import GeneratorConfig, generate

from conftest import tiny_records

ENC = HashingEncoder(dim=128)


class TestPeers:
    def test_only_closed_outcomes_founded_earlier(self, tiny_graph):
        lab = compute_label(company("t"), tiny_graph)
        peers = retrieve_peers(tiny_graph.company("t"), tiny_graph, ENC, lab.t0, k=4)
        ids = [p.record.node.id for p in peers.peers]
        # c3's window is still open at 2021-06-15; t itself is excluded
        assert set(ids) == {"c1", "c2", "c4"}
        assert {p.record.node.id: p.y for p in peers.peers} == {"c1": 1, "c2": 0, "c4": 0}

    def test_most_similar_first(self, tiny_graph):
        lab = compute_label(company("t"), tiny_graph)
        peers = retrieve_peers(tiny_graph.company("t"), tiny_graph, ENC, lab.t0, k=1)
        assert [p.record.node.id for p in peers.peers] == ["c1"]
        sims = [p.similarity for p in retrieve_peers(tiny_graph.company("t"), tiny_graph, ENC, lab.t0, k=3).peers]
        assert sims == sorted(sims, reverse=True)

    def test_k_zero(self, tiny_graph):
        assert len(retrieve_peers(tiny_graph.company("t"), tiny_graph, ENC, date(2021, 6, 15), k=0)) == 0

    def test_empty_description_rejected(self):
        comps, invs, edges = tiny_records()
        comps[4]["description"] = ""
        g = load_graph(comps, invs, edges)
        comps_desc = g.company("t").description
        assert comps_desc == ""
        with pytest.raises(ValueError):
            retrieve_peers(g.company("t"), g, ENC, date(2021, 6, 15))

    def test_ties_break_by_id(self):
        comps, invs, edges = tiny_records()
        for cid in ("c1", "c2", "c4"):
            next(c for c in comps if c["id"] == cid)["description"] = "identical text"
        comps[4]["description"] = "identical text"
        g = load_graph(comps, invs, edges)
        peers = retrieve_peers(g.company("t"), g, ENC, date(2021, 6, 15), k=3)
        assert [p.record.node.id for p in peers.peers] == ["c1", "c2", "c4"]


class TestLeadInvestor:
    def test_largest_amount(self, tiny_graph):
        assert select_lead_investor(company("t"), tiny_graph) == investor("i2")

    def test_unknown_amount_sorts_last(self):
        comps, invs, edges = tiny_records()
        edges.append({"investor": "i3", "company": "c4", "date": "2019-01-01", "round": "seed", "amount": 0.1})
        g = load_graph(comps, invs, edges)
        assert select_lead_investor(company("c4"), g) == investor("i3")

    def test_no_first_round(self):
        comps, invs, edges = tiny_records()
        comps.append({"id": "z", "founded": "2019-01-01", "description": "z"})
        g = load_graph(comps, invs, edges)
        assert select_lead_investor(company("z"), g) is None


class TestInvestorProfile:
    def test_history_is_pre_cutoff_and_labeled(self, tiny_graph):
        prof = build_investor_profile(investor("i1"), date(2021, 6, 15), tiny_graph, n=5)
        assert [j.role for j in prof.employment] == ["Partner"]
        # c3 (2021-03) has no closed outcome yet; c1 does
        assert [(e.company.id, e.y) for e in prof.investments] == [("c1", 1)]

    def test_block_format(self, tiny_graph):
        prof = build_investor_profile(investor("i1"), date(2021, 6, 15), tiny_graph)
        text = investor_profile_block(prof, tiny_graph)
        assert text.startswith("### Lead-Investor Profile ###")
        assert "• Partner (2015)" in text
        assert "(success)" in text and "Analyst" not in text

    def test_history_cap(self):
        ds = generate(GeneratorConfig(seed=1, n_companies=200))
        g = ds.graph()
        busiest = max(g.investors(), key=lambda r: len(g.incident_edges(r.node)))
        prof = build_investor_profile(busiest.node, date(2022, 1, 1), g, n=2)
        assert len(prof.investments) <= 2 and len(prof.employment) <= 2

    def test_peer_blocks_show_outcomes(self, tiny_graph):
        lab = compute_label(company("t"), tiny_graph)
        peers = retrieve_peers(tiny_graph.company("t"), tiny_graph, ENC, lab.t0, k=2)
        blocks = peer_blocks(peers, tiny_graph, lab.t0)
        assert len(blocks) == 2 and all("Outcome" in b for b in blocks)


class TestAudit:
    def test_clean_retrieval_has_no_issues(self, tiny_graph):
        lab = compute_label(company("t"), tiny_graph)
        peers = retrieve_peers(tiny_graph.company("t"), tiny_graph, ENC, lab.t0)
        prof = build_investor_profile(investor("i1"), lab.t0, tiny_graph)
        assert audit_retrieval(lab, tiny_graph, peers, prof) == []

    def test_detects_future_label(self, tiny_graph):
        from offgraph_vc.retrieval import Peer, PeerSet

        lab = compute_label(company("t"), tiny_graph)
        bad = PeerSet(lab.company, [Peer(tiny_graph.company("c3"), 0.9, 1)])
        assert audit_retrieval(lab, tiny_graph, bad, None)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_random_synthetic_targets_are_clean(self, seed):
        g = generate(GeneratorConfig(seed=seed, n_companies=60)).graph()
        rng = np.random.default_rng(seed)
        targets = all_targets(g)
        for i in rng.choice(len(targets), size=min(5, len(targets)), replace=False):
            lab = targets[int(i)]
            peers = retrieve_peers(g.company(lab.company), g, ENC, lab.t0)
            lead = select_lead_investor(lab.company, g)
            prof = build_investor_profile(lead, lab.t0, g) if lead else None
            assert audit_retrieval(lab, g, peers, prof) == []
