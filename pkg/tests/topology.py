"""Shared test helpers: random topologies and the independent
fixed-point oracle for replication convergence.

The oracle predicts, from the topology alone, exactly which store ends up
holding which document once repeated sync sessions quiesce. Delivery
follows relay paths whose intermediate hops are all bridges; contributors
do not relay.
"""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field

from ers.model import EntityId, Value, mint_entity_id
from ers.sync import (
    CACHE_GRAPH_SUFFIX,
    Node,
    ROLE_BRIDGE,
    ROLE_CONTRIBUTOR,
    connect,
    sync_session,
)


@dataclass
class Topology:
    nodes: dict[str, Node]
    edges: list[tuple[str, str]]
    adjacency: dict[str, set[str]] = field(default_factory=dict)

    def __post_init__(self):
        adj: dict[str, set[str]] = defaultdict(set)
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        self.adjacency = dict(adj)

    def contributors(self) -> list[Node]:
        return [n for n in self.nodes.values() if n.role == ROLE_CONTRIBUTOR]

    def bridges(self) -> list[Node]:
        return [n for n in self.nodes.values() if n.role == ROLE_BRIDGE]


def random_topology(seed: int, max_nodes: int = 6) -> Topology:
    rng = random.Random(seed)
    n = rng.randint(2, max_nodes)
    names = [f"n{i}" for i in range(n)]
    roles = {}
    for i, name in enumerate(names):
        roles[name] = ROLE_CONTRIBUTOR if i == 0 else rng.choice(
            [ROLE_CONTRIBUTOR, ROLE_CONTRIBUTOR, ROLE_BRIDGE]
        )
    nodes = {name: Node(name, roles[name]) for name in names}
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.45:
                edges.append((names[i], names[j]))
    topo = Topology(nodes, edges)
    for a, b in edges:
        connect(nodes[a], nodes[b])
    return topo


def _persists(receiver_role: str, receiver_name: str, doc, sender_role: str) -> bool:
    """Acceptance table transcribed independently of the implementation.

    Bridges keep all non-private data, except that a query cache never
    crosses a bridge-bridge hop. Contributors keep their own mail and
    whatever a bridge makes available; neighbor contributor data is
    read-only.
    """
    if doc.flags.private:
        return False
    if receiver_role == ROLE_BRIDGE:
        if sender_role == ROLE_BRIDGE and doc.flags.cached_query:
            return False
        return True
    if doc.flags.addressed_to is not None:
        return doc.flags.addressed_to == receiver_name
    return sender_role == ROLE_BRIDGE


def expected_holdings(topo: Topology, documents: list) -> dict[str, set[str]]:
    """Fixed-point oracle: node name -> set of doc_ids it should hold.

    Delivery is the closure of the acceptance table over edges: any node
    that persists a document relays it onward through its change feed.
    ``documents`` carries (author_node, doc) pairs.
    """
    holdings: dict[str, set[str]] = {name: set() for name in topo.nodes}
    for author, doc in documents:
        holding = {author}
        frontier = [author]
        while frontier:
            current = frontier.pop()
            for neighbor in sorted(topo.adjacency.get(current, ())):
                if neighbor in holding:
                    continue
                receiver = topo.nodes[neighbor]
                sender = topo.nodes[current]
                if _persists(receiver.role, receiver.name, doc, sender.role):
                    holding.add(neighbor)
                    frontier.append(neighbor)
        for name in holding:
            holdings[name].add(doc.doc_id)
    return holdings


def run_to_fixed_point(topo: Topology, max_rounds: int = 20) -> int:
    """Round-robin sync sessions until a full round moves nothing."""
    for round_no in range(max_rounds):
        sent = 0
        for a, b in sorted(topo.edges):
            report = sync_session(topo.nodes[a], topo.nodes[b])
            sent += report.sent_ab + report.sent_ba
        if sent == 0:
            return round_no
    raise AssertionError("no fixed point within round budget")


def seed_documents(topo: Topology, seed: int) -> list:
    """One public, one private, one addressed doc per contributor."""
    rng = random.Random(seed)
    contributors = topo.contributors()
    docs = []
    for node in contributors:
        base = f"{node.name}"
        public = mint_entity_id("ers", f"pub-{base}")
        node.store.put_local(public, "body", Value.literal(f"public from {base}"))
        docs.append((node.name, node.store.own_document(public)))

        secret = mint_entity_id("ers", f"sec-{base}")
        node.store.put_local(secret, "body", Value.literal(f"secret of {base}"))
        node.store.set_flags(secret, private=True)
        docs.append((node.name, node.store.own_document(secret)))

        if len(contributors) > 1:
            target = rng.choice([c for c in contributors if c is not node])
            mail = mint_entity_id("ers", f"mail-{base}")
            node.store.put_local(mail, "body", Value.literal(f"mail from {base}"))
            node.store.set_flags(mail, addressed_to=target.name)
            docs.append((node.name, node.store.own_document(mail)))
    return docs


def actual_holdings(topo: Topology) -> dict[str, set[str]]:
    return {
        name: {d.doc_id for d in node.store.documents()}
        for name, node in topo.nodes.items()
    }
