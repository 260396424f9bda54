"""Synchronization rules, sessions, caches, and bridge GC."""

from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from ers.errors import NotConnected, RoleViolation
from ers.model import Value, mint_entity_id
from ers.store import ORIGIN_REPLICATED
from ers.sync import (
    ADDRESSED_TO_ME,
    ALL_NON_PRIVATE,
    BRIDGE_SHARE,
    CACHED_QUERY,
    PAIR_BB,
    PAIR_CB,
    PAIR_CC,
    PUBLIC_NEIGHBOR,
    REJECTED_CACHED,
    REJECTED_NOT_ADDRESSED,
    REJECTED_PRIVATE,
    Node,
    ROLE_BRIDGE,
    ROLE_CONTRIBUTOR,
    accepts,
    connect,
    gc_bridge,
    lookup_entity,
    publish_cached_query,
    sync_session,
)
from topology import (
    Topology,
    actual_holdings,
    expected_holdings,
    random_topology,
    run_to_fixed_point,
    seed_documents,
)

E1 = mint_entity_id("ers", "e1")


def contributor(name: str) -> Node:
    return Node(name, ROLE_CONTRIBUTOR)


def bridge(name: str) -> Node:
    return Node(name, ROLE_BRIDGE)


def authored(node: Node, local: str, private=False, to=None, text="x"):
    entity = mint_entity_id("ers", local)
    node.store.put_local(entity, "body", Value.literal(text))
    if private or to is not None:
        kwargs = {}
        if private:
            kwargs["private"] = True
        if to is not None:
            kwargs["addressed_to"] = to
        node.store.set_flags(entity, **kwargs)
    return node.store.own_document(entity)


# ---------------------------------------------------------------------------
# Acceptance rules


def test_private_rejected_by_bridge():
    xo1 = contributor("xo1")
    doc = authored(xo1, "d", private=True)
    decision = accepts(ROLE_BRIDGE, "b1", doc, PAIR_CB)
    assert (decision.accepted, decision.reason) == (False, REJECTED_PRIVATE)


def test_cached_rejected_bridge_to_bridge():
    xo1 = contributor("xo1")
    doc = publish_cached_query(xo1, E1, xo1.store.get_entity(E1))
    decision = accepts(ROLE_BRIDGE, "b2", doc, PAIR_BB)
    assert (decision.accepted, decision.reason) == (False, REJECTED_CACHED)


def test_addressed_accepted_by_target_contributor():
    xo1 = contributor("xo1")
    doc = authored(xo1, "d", to="xo2")
    decision = accepts(ROLE_CONTRIBUTOR, "xo2", doc, PAIR_CC)
    assert (decision.accepted, decision.reason, decision.persist) == (
        True,
        ADDRESSED_TO_ME,
        True,
    )


def test_addressed_rejected_by_other_contributor():
    xo1 = contributor("xo1")
    doc = authored(xo1, "d", to="xo2")
    decision = accepts(ROLE_CONTRIBUTOR, "xo3", doc, PAIR_CC)
    assert (decision.accepted, decision.reason) == (False, REJECTED_NOT_ADDRESSED)


def test_public_readable_but_not_persisted_between_contributors():
    xo1 = contributor("xo1")
    doc = authored(xo1, "d")
    decision = accepts(ROLE_CONTRIBUTOR, "xo2", doc, PAIR_CC)
    assert (decision.accepted, decision.reason, decision.persist) == (
        True,
        PUBLIC_NEIGHBOR,
        False,
    )


def test_bridge_accepts_cached_and_public():
    xo1 = contributor("xo1")
    cached = publish_cached_query(xo1, E1, xo1.store.get_entity(E1))
    assert accepts(ROLE_BRIDGE, "b1", cached, PAIR_CB).reason == ALL_NON_PRIVATE
    public = authored(xo1, "d")
    assert accepts(ROLE_BRIDGE, "b1", public, PAIR_CB).persist is True


def test_bridge_share_excludes_nothing_else():
    xo1 = contributor("xo1")
    doc = authored(xo1, "d", to="xo2")
    decision = accepts(ROLE_BRIDGE, "b2", doc, PAIR_BB)
    assert (decision.accepted, decision.reason) == (True, BRIDGE_SHARE)


# ---------------------------------------------------------------------------
# Sessions


def test_session_requires_connection():
    a, b = contributor("xo1"), bridge("b1")
    with pytest.raises(NotConnected):
        sync_session(a, b)


def test_session_contributor_to_bridge_counts():
    a, b = contributor("xo1"), bridge("b1")
    connect(a, b)
    authored(a, "d")
    report = sync_session(a, b)
    assert (report.sent_ab, report.accepted_ab) == (1, 1)
    repeat = sync_session(a, b)
    assert (repeat.sent_ab, repeat.sent_ba) == (0, 0)


def test_private_doc_never_transmitted():
    a, b = contributor("xo1"), bridge("b1")
    connect(a, b)
    authored(a, "d", private=True)
    report = sync_session(a, b)
    assert report.sent_ab == 0
    assert len(b.store) == 0


def test_chain_delivery_through_bridge():
    xo1, b1, xo2 = contributor("xo1"), bridge("b1"), contributor("xo2")
    connect(xo1, b1)
    connect(b1, xo2)
    doc = authored(xo1, "mail", to="xo2")
    sync_session(xo1, b1)
    sync_session(b1, xo2)
    assert xo2.store.get_document(doc.entity, "xo1") is not None


def test_budget_truncation_resumes():
    a, b = contributor("xo1"), bridge("b1")
    connect(a, b)
    for i in range(5):
        authored(a, f"d{i}")
    first = sync_session(a, b, budget=2)
    assert first.sent_ab == 2
    second = sync_session(a, b, budget=2)
    third = sync_session(a, b, budget=2)
    assert second.sent_ab == 2 and third.sent_ab == 1
    assert len(b.store) == 5


def test_interest_pull_fetches_old_docs():
    xo1, b1, xo2 = contributor("xo1"), bridge("b1"), contributor("xo2")
    connect(xo1, b1)
    connect(b1, xo2)
    doc = authored(xo1, "topic")
    sync_session(xo1, b1)
    # xo2 syncs once, consuming the feed; then asks about the entity.
    sync_session(b1, xo2)
    assert xo2.store.get_document(doc.entity, "xo1") is not None

    # A later-joining node with interest set pulls past the cursor.
    xo3 = contributor("xo3")
    connect(b1, xo3)
    sync_session(b1, xo3)  # feed drained
    xo3.store.get_entity(doc.entity)
    report = sync_session(b1, xo3)
    assert report.sent_ab >= 1
    assert xo3.store.get_document(doc.entity, "xo1") is not None


def test_lookup_entity_reads_neighbors_without_persisting():
    xo1, xo2 = contributor("xo1"), contributor("xo2")
    connect(xo1, xo2)
    doc = authored(xo2, "e1", text="theirs")
    view = lookup_entity(xo1, doc.entity, [xo2])
    assert view.doc_count == 1
    assert xo1.store.get_document(doc.entity, "xo2") is None


# ---------------------------------------------------------------------------
# Cached queries


def test_cached_query_of_empty_view():
    xo1 = contributor("xo1")
    doc = publish_cached_query(xo1, E1, xo1.store.get_entity(E1))
    assert doc.flags.cached_query is True
    assert doc.properties == {}


def test_cached_doc_flows_to_bridge_not_across_bridges():
    xo1, b1, b2 = contributor("xo1"), bridge("b1"), bridge("b2")
    connect(xo1, b1)
    connect(b1, b2)
    authored(xo1, "e1")
    view = xo1.store.get_entity(E1)
    cached = publish_cached_query(xo1, E1, view)
    sync_session(xo1, b1)
    sync_session(b1, b2)
    assert b1.store.get_document(E1, cached.graph.author) is not None
    assert b2.store.get_document(E1, cached.graph.author) is None


def test_cached_doc_never_overwrites_original():
    xo1 = contributor("xo1")
    original = authored(xo1, "e1", text="orig")
    cached = publish_cached_query(xo1, E1, xo1.store.get_entity(E1))
    assert cached.doc_id != original.doc_id
    assert xo1.store.own_document(E1).properties["body"] == (Value.literal("orig"),)
    assert cached.properties == {"xo1:body": (Value.literal("orig"),)}


def test_cache_republish_bumps_revision():
    xo1 = contributor("xo1")
    authored(xo1, "e1", text="v1")
    first = publish_cached_query(xo1, E1, xo1.store.get_entity(E1))
    second = publish_cached_query(xo1, E1, xo1.store.get_entity(E1))
    assert second.revision == first.revision + 1


# ---------------------------------------------------------------------------
# Bridge garbage collection


def _stocked_bridge() -> Node:
    b1 = bridge("b1")
    xo1 = contributor("xo1")
    connect(xo1, b1)
    for i in range(3):
        authored(xo1, f"d{i}")
    sync_session(xo1, b1)
    return b1


def test_gc_requires_bridge_role():
    with pytest.raises(RoleViolation):
        gc_bridge(contributor("xo1"), now=0.0)


def test_gc_ttl_zero_evicts_all_forwarded():
    b1 = _stocked_bridge()
    xo9 = contributor("xo9")
    connect(b1, xo9)
    sync_session(b1, xo9)  # marks entries forwarded
    evicted = gc_bridge(b1, now=b1.clock + 1, ttl=0)
    assert len(evicted) == 3
    assert len(b1.store) == 0


def test_gc_nothing_stale_under_capacity():
    b1 = _stocked_bridge()
    assert gc_bridge(b1, now=0.0, ttl=1000, capacity=100) == []


def test_gc_retains_recently_accessed():
    b1 = _stocked_bridge()
    xo9 = contributor("xo9")
    connect(b1, xo9)
    for entry in b1.store.entries():
        entry.last_access = 5.0
        entry.forwarded = True
    assert gc_bridge(b1, now=12.0, ttl=10.0) == []  # 12 - 5 < 10


def test_gc_never_evicts_unforwarded():
    b1 = _stocked_bridge()  # nothing forwarded yet
    evicted = gc_bridge(b1, now=10_000.0, ttl=0, capacity=1)
    assert evicted == []
    assert b1.gc_overflow is True


def test_gc_capacity_evicts_lru_first():
    b1 = _stocked_bridge()
    xo9 = contributor("xo9")
    connect(b1, xo9)
    sync_session(b1, xo9)
    entries = sorted(b1.store.entries(), key=lambda e: e.seq)
    for i, entry in enumerate(entries):
        entry.last_access = float(i)
    evicted = gc_bridge(b1, now=100.0, ttl=1e9, capacity=1)
    assert len(evicted) == 2
    survivor = b1.store.entries()[0]
    assert survivor.last_access == 2.0


# ---------------------------------------------------------------------------
# Convergence and privacy


def test_convergence_matches_oracle_on_random_topologies():
    for seed in range(25):
        topo = random_topology(seed)
        docs = seed_documents(topo, seed)
        run_to_fixed_point(topo)
        assert actual_holdings(topo) == expected_holdings(topo, docs), f"seed {seed}"


def test_session_idempotent_after_fixed_point():
    topo = random_topology(3)
    seed_documents(topo, 3)
    run_to_fixed_point(topo)
    for a, b in topo.edges:
        report = sync_session(topo.nodes[a], topo.nodes[b])
        assert report.sent_ab == report.sent_ba == 0


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    schedule=st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), max_size=25),
)
def test_privacy_under_random_schedules(seed, schedule):
    topo = random_topology(seed)
    seed_documents(topo, seed)
    names = sorted(topo.nodes)
    for i, j in schedule:
        a = topo.nodes[names[i % len(names)]]
        b = topo.nodes[names[j % len(names)]]
        if a is b or b.name not in a.connected:
            continue
        sync_session(a, b)
    for name, node in topo.nodes.items():
        for doc in node.store.documents():
            if doc.flags.private:
                assert doc.graph.author == name


def test_cursors_never_decrease():
    topo = random_topology(11)
    seed_documents(topo, 11)
    snapshots = []
    for _ in range(4):
        for a, b in topo.edges:
            sync_session(topo.nodes[a], topo.nodes[b])
        snapshots.append(
            {n: dict(node.sync_cursors) for n, node in topo.nodes.items()}
        )
    for earlier, later in zip(snapshots, snapshots[1:]):
        for node_name, cursors in earlier.items():
            for peer, cursor in cursors.items():
                assert later[node_name].get(peer, 0) >= cursor
