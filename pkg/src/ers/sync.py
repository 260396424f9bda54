"""Pairwise synchronization between contributor and bridge nodes.

Three session regimes exist, keyed by the endpoint roles:

* contributor-contributor: only documents addressed to the receiver are
  persisted; neighbor public data and published query caches are readable
  on demand but never stored.
* contributor-bridge: the bridge takes all non-private data (query caches
  included); the contributor takes public data and anything addressed to
  it.
* bridge-bridge: everything flows except query caches, which stay local
  to their neighborhood.

Private documents never leave their author's store; the sender filters
them out before anything crosses the link. Bridges hold replicated data
as soft state and garbage-collect it by idle time and capacity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import NotConnected, RoleViolation
from .model import Document, EntityId, Flags, GraphId, Value, parse_entity_id
from .store import DocumentStore, EntityView, ORIGIN_REPLICATED, StoreEntry, check_node_name

ROLE_CONTRIBUTOR = "contributor"
ROLE_BRIDGE = "bridge"
ROLE_GLOBAL = "global"

PAIR_CC = "ContributorContributor"
PAIR_CB = "ContributorBridge"
PAIR_BB = "BridgeBridge"

# Acceptance reasons. accepted=False implies a rejected_* reason.
OWN_DATA = "own_data"
PUBLIC_NEIGHBOR = "public_neighbor"
ADDRESSED_TO_ME = "addressed_to_me"
CACHED_QUERY = "cached_query"
ALL_NON_PRIVATE = "all_non_private"
BRIDGE_SHARE = "bridge_share"
REJECTED_PRIVATE = "rejected_private"
REJECTED_CACHED = "rejected_cached"
REJECTED_NOT_ADDRESSED = "rejected_not_addressed"

CACHE_GRAPH_SUFFIX = "+cache"

DEFAULT_SESSION_BUDGET = 500
DEFAULT_GC_TTL = 1000.0
DEFAULT_GC_CAPACITY = 10_000


@dataclass
class Node:
    """A named participant with a role and its document store."""

    name: str
    role: str
    store: DocumentStore = None  # type: ignore[assignment]
    connected: set[str] = field(default_factory=set)
    sync_cursors: dict[str, int] = field(default_factory=dict)
    gc_overflow: bool = False

    def __post_init__(self):
        check_node_name(self.name)
        if self.role not in (ROLE_CONTRIBUTOR, ROLE_BRIDGE, ROLE_GLOBAL):
            raise RoleViolation(f"unknown role {self.role!r}")
        if self.store is None:
            self.store = DocumentStore(self.name)

    @property
    def clock(self) -> float:
        return self.store.clock

    @clock.setter
    def clock(self, value: float) -> None:
        self.store.clock = value


def connect(a: Node, b: Node) -> None:
    a.connected.add(b.name)
    b.connected.add(a.name)


def disconnect(a: Node, b: Node) -> None:
    a.connected.discard(b.name)
    b.connected.discard(a.name)


def role_pair(role_a: str, role_b: str) -> str:
    roles = {role_a, role_b}
    if ROLE_GLOBAL in roles:
        raise RoleViolation("global servers harvest; they do not run sync sessions")
    if roles == {ROLE_CONTRIBUTOR}:
        return PAIR_CC
    if roles == {ROLE_BRIDGE}:
        return PAIR_BB
    return PAIR_CB


@dataclass(frozen=True)
class AcceptDecision:
    accepted: bool
    reason: str
    persist: bool


def accepts(receiver_role: str, receiver_name: str, doc: Document, pair: str) -> AcceptDecision:
    """Pure acceptance rule for one document arriving at a receiver.

    ``accepted`` means the receiver may see the document at all;
    ``persist`` means the receiver stores a replica. Contributor peers can
    read neighbor public data without persisting it.
    """
    flags = doc.flags
    if pair == PAIR_CC:
        if flags.private:
            return AcceptDecision(False, REJECTED_PRIVATE, False)
        if flags.addressed_to == receiver_name:
            return AcceptDecision(True, ADDRESSED_TO_ME, True)
        if flags.addressed_to is not None:
            return AcceptDecision(False, REJECTED_NOT_ADDRESSED, False)
        if flags.cached_query:
            return AcceptDecision(True, CACHED_QUERY, False)
        return AcceptDecision(True, PUBLIC_NEIGHBOR, False)
    if pair == PAIR_CB:
        if receiver_role == ROLE_BRIDGE:
            if flags.private:
                return AcceptDecision(False, REJECTED_PRIVATE, False)
            return AcceptDecision(True, ALL_NON_PRIVATE, True)
        # bridge -> contributor: public data plus the receiver's mail.
        if flags.private:
            return AcceptDecision(False, REJECTED_PRIVATE, False)
        if flags.addressed_to == receiver_name:
            return AcceptDecision(True, ADDRESSED_TO_ME, True)
        if flags.addressed_to is not None:
            return AcceptDecision(False, REJECTED_NOT_ADDRESSED, False)
        if flags.cached_query:
            return AcceptDecision(True, CACHED_QUERY, True)
        return AcceptDecision(True, PUBLIC_NEIGHBOR, True)
    if pair == PAIR_BB:
        if flags.private:
            return AcceptDecision(False, REJECTED_PRIVATE, False)
        if flags.cached_query:
            return AcceptDecision(False, REJECTED_CACHED, False)
        return AcceptDecision(True, BRIDGE_SHARE, True)
    raise RoleViolation(f"unknown role pair {pair!r}")


@dataclass
class SyncReport:
    time: float
    node_a: str
    node_b: str
    sent_ab: int = 0
    accepted_ab: int = 0
    rejected_ab: int = 0
    sent_ba: int = 0
    accepted_ba: int = 0
    rejected_ba: int = 0

    def csv_row(self) -> str:
        return (
            f"{self.time:.6f},{self.node_a},{self.node_b},"
            f"{self.sent_ab},{self.accepted_ab},{self.sent_ba},{self.accepted_ba}"
        )


def sync_session(a: Node, b: Node, budget: int = DEFAULT_SESSION_BUDGET,
                 now: float | None = None) -> SyncReport:
    """Run one bidirectional exchange between two connected nodes.

    Each direction drains the sender's change feed from the receiver's
    stored cursor, at most ``budget`` documents; the cursor only advances
    past what was actually offered, so truncated batches resume cleanly.
    """
    if b.name not in a.connected or a.name not in b.connected:
        raise NotConnected(f"{a.name} and {b.name} are not connected")
    pair = role_pair(a.role, b.role)
    if now is None:
        now = max(a.clock, b.clock)
    report = SyncReport(now, a.name, b.name)
    report.sent_ab, report.accepted_ab, report.rejected_ab = _transfer(a, b, pair, budget, now)
    report.sent_ba, report.accepted_ba, report.rejected_ba = _transfer(b, a, pair, budget, now)
    return report


def _transfer(src: Node, dst: Node, pair: str, budget: int, now: float) -> tuple[int, int, int]:
    cursor = dst.sync_cursors.get(src.name, 0)
    batch = src.store.change_entries(cursor, limit=budget)
    if batch:
        dst.sync_cursors[src.name] = batch[-1].seq

    # The receiver is authoritative for its own graphs; offering those
    # back would only echo replicas in a loop.
    skip_authors = {dst.name, cache_graph(dst.name).author}
    offered: list[StoreEntry] = []
    seen_ids: set[str] = set()
    for entry in batch:
        if entry.doc.flags.private:
            continue  # private data never leaves its author's store
        if entry.doc.graph.author in skip_authors:
            continue
        offered.append(entry)
        seen_ids.add(entry.doc.doc_id)

    # Interest pull: a contributor syncing with a bridge also asks for
    # everything known about the entities it has looked up, regardless of
    # the cursor position.
    if pair == PAIR_CB and src.role == ROLE_BRIDGE and dst.store.interest:
        for canonical in sorted(dst.store.interest):
            for entry in src.store.entries_about(parse_entity_id(canonical)):
                if entry.doc.flags.private or entry.doc.doc_id in seen_ids:
                    continue
                if entry.doc.graph.author in skip_authors:
                    continue
                offered.append(entry)
                seen_ids.add(entry.doc.doc_id)

    sent = accepted = rejected = 0
    for entry in offered:
        sent += 1
        entry.forwarded = True
        entry.last_access = now
        decision = accepts(dst.role, dst.name, entry.doc, pair)
        if decision.accepted and decision.persist:
            dst.store.apply_replica(entry.doc)
            accepted += 1
        else:
            rejected += 1
    return sent, accepted, rejected


def lookup_entity(node: Node, entity: EntityId, peers: list[Node] | None = None) -> EntityView:
    """Merged view over the node's store and its connected peers.

    Remote contributions are read without being persisted, matching the
    contributor-contributor access rules; bridge peers expose everything
    they hold. Contributions dedup by graph, local copy first.
    """
    view = node.store.get_entity(entity)
    contributions = dict(view.contributions)
    for peer in peers or []:
        if peer.name not in node.connected:
            continue
        pair = role_pair(node.role, peer.role)
        for entry in peer.store.entries_about(entity):
            doc = entry.doc
            if doc.graph in contributions:
                continue
            decision = accepts(node.role, node.name, doc, pair)
            if decision.accepted:
                entry.last_access = max(entry.last_access, node.clock)
                contributions[doc.graph] = dict(doc.properties)
    return EntityView(entity, contributions)


def cache_graph(node_name: str) -> GraphId:
    return GraphId(f"{node_name}{CACHE_GRAPH_SUFFIX}")


def publish_cached_query(node: Node, entity: EntityId, view: EntityView) -> Document:
    """Publish a query result as a cached-query document.

    The cache carries its own graph (derived from the node name) so it can
    never collide with an original contribution. Contributions inside the
    view are namespaced by their source graph; caches of caches are
    skipped to keep the payload first-order.
    """
    graph = cache_graph(node.name)
    previous = node.store.get_document(entity, graph.author)
    properties: dict[str, tuple[Value, ...]] = {}
    for source in sorted(view.contributions, key=lambda g: g.author):
        if source.author.endswith(CACHE_GRAPH_SUFFIX):
            continue
        for pred, values in sorted(view.contributions[source].items()):
            properties[f"{source.author}:{pred}"] = values
    revision = previous.revision + 1 if previous is not None else 1
    doc = Document(
        entity,
        graph,
        properties,
        Flags(cached_query=True),
        revision=revision,
    )
    node.store.install_document(doc)
    return doc


def gc_bridge(bridge: Node, now: float, ttl: float = DEFAULT_GC_TTL,
              capacity: int = DEFAULT_GC_CAPACITY) -> list[str]:
    """Evict stale soft state from a bridge store.

    Replicated entries idle longer than ``ttl`` go first; if the store is
    still over ``capacity``, least-recently-accessed entries follow. An
    entry that was never forwarded to any peer is not evictable; if that
    keeps the store over capacity, the overflow is flagged instead.
    """
    if bridge.role != ROLE_BRIDGE:
        raise RoleViolation(f"{bridge.name} is not a bridge")
    evicted: list[str] = []
    candidates = [
        e for e in bridge.store.entries() if e.origin == ORIGIN_REPLICATED and e.forwarded
    ]
    for entry in candidates:
        if now - entry.last_access > ttl:
            bridge.store.discard(entry.doc.entity, entry.doc.graph.author)
            evicted.append(entry.doc.doc_id)
    if len(bridge.store) > capacity:
        remaining = [
            e for e in bridge.store.entries()
            if e.origin == ORIGIN_REPLICATED and e.forwarded
        ]
        remaining.sort(key=lambda e: (e.last_access, e.doc.doc_id))
        for entry in remaining:
            if len(bridge.store) <= capacity:
                break
            bridge.store.discard(entry.doc.entity, entry.doc.graph.author)
            evicted.append(entry.doc.doc_id)
    bridge.gc_overflow = len(bridge.store) > capacity
    return evicted
