"""Per-node document store with a change feed for replication.

Each contributor or bridge owns exactly one store. A store holds at most
one Document per (entity, graph): the node's own contributions plus
replicated copies of other graphs. Same-graph conflicts resolve by
revision (last writer wins), with a content tie-break on equal revisions.

The store carries a virtual clock (``clock``) that callers advance; it
stamps entries for the bridge garbage collector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import CursorOutOfRange, InvalidUrn, ReservedPredicate
from .model import (
    Document,
    EntityId,
    Flags,
    GraphId,
    Value,
    decode_model1,
    encode_model1,
)

ORIGIN_LOCAL = "local"
ORIGIN_REPLICATED = "replicated"

_UNSET = object()


def check_node_name(name: str) -> str:
    """Node names are tokens; '+' is reserved for derived graph names."""
    if not name or any(c.isspace() for c in name) or ":" in name or "+" in name:
        raise InvalidUrn(f"bad node name: {name!r}")
    return name


@dataclass
class StoreEntry:
    doc: Document
    origin: str
    seq: int
    stored_at: float
    last_access: float
    forwarded: bool = False


@dataclass(frozen=True)
class EntityView:
    """Union of contributions about one entity, provenance preserved."""

    entity: EntityId
    contributions: dict[GraphId, dict[str, tuple[Value, ...]]]

    @property
    def doc_count(self) -> int:
        return len(self.contributions)


class DocumentStore:
    """Document storage owned by a single node."""

    def __init__(self, owner: str):
        self.owner = check_node_name(owner)
        self.graph = GraphId(owner)
        self.clock: float = 0.0
        self.interest: set[str] = set()
        self._docs: dict[tuple[str, str], StoreEntry] = {}
        self._seq = 0

    # -- write path --------------------------------------------------------

    def put_local(self, entity: EntityId, predicate: str, value: Value) -> Document:
        """Upsert a (predicate, value) pair into this node's own document.

        Set semantics: putting an existing pair changes nothing, not even
        the revision, so replication stays idempotent.
        """
        if predicate.startswith("@"):
            raise ReservedPredicate(f"{predicate!r} is a control predicate")
        entry = self._docs.get(self._own_key(entity))
        doc = entry.doc if entry else Document(entity, self.graph)
        updated = doc.with_value(predicate, value)
        if entry is not None and updated is doc:
            entry.last_access = self.clock
            return doc
        return self._install(updated, ORIGIN_LOCAL)

    def set_flags(
        self,
        entity: EntityId,
        private: bool | object = _UNSET,
        addressed_to: str | None | object = _UNSET,
    ) -> Document:
        """Update control flags on the node's own document, creating an
        empty one if needed. Revision bumps only on actual change."""
        entry = self._docs.get(self._own_key(entity))
        doc = entry.doc if entry else Document(entity, self.graph)
        flags = doc.flags
        if private is not _UNSET:
            flags = replace(flags, private=private)
        if addressed_to is not _UNSET:
            flags = replace(flags, addressed_to=addressed_to)
        if entry is not None and flags == doc.flags:
            return doc
        return self._install(doc.with_flags(flags) if flags != doc.flags else doc,
                             ORIGIN_LOCAL)

    def install_document(self, doc: Document) -> Document:
        """Install a locally produced document wholesale (cached-query
        publication); last-writer-wins against any existing copy."""
        self.apply_replica(doc)
        return doc

    def delete_entity_contribution(self, entity: EntityId) -> bool:
        """Remove this node's own document about an entity. Replicated
        copies of other graphs are untouched; no tombstone is produced."""
        return self._docs.pop(self._own_key(entity), None) is not None

    def discard(self, entity: EntityId, author: str) -> bool:
        """Drop one stored document without tombstoning (GC path)."""
        return self._docs.pop((entity.canonical, author), None) is not None

    def apply_replica(self, doc: Document) -> bool:
        """Install a document received from a peer; returns True when the
        store changed. Last-writer-wins by revision; ties break toward the
        lexicographically larger serialized body."""
        key = (doc.entity.canonical, doc.graph.author)
        existing = self._docs.get(key)
        if existing is not None:
            if doc.revision < existing.doc.revision:
                return False
            if doc.revision == existing.doc.revision:
                if snapshot_line(doc) <= snapshot_line(existing.doc):
                    existing.last_access = self.clock
                    return False
        origin = ORIGIN_LOCAL if doc.graph.author == self.owner else ORIGIN_REPLICATED
        self._seq += 1
        self._docs[key] = StoreEntry(
            doc, origin, self._seq, stored_at=self.clock, last_access=self.clock
        )
        return True

    # -- read path ----------------------------------------------------------

    def get_entity(self, entity: EntityId) -> EntityView:
        """Union view of every stored contribution about an entity. Marks
        touched entries as accessed and records interest for pull sync."""
        contributions: dict[GraphId, dict[str, tuple[Value, ...]]] = {}
        for entry in self._docs.values():
            if entry.doc.entity == entity:
                entry.last_access = self.clock
                contributions[entry.doc.graph] = dict(entry.doc.properties)
        self.interest.add(entity.canonical)
        return EntityView(entity, contributions)

    def get_document(self, entity: EntityId, author: str) -> Document | None:
        entry = self._docs.get((entity.canonical, author))
        return entry.doc if entry else None

    def own_document(self, entity: EntityId) -> Document | None:
        return self.get_document(entity, self.owner)

    def entries(self) -> list[StoreEntry]:
        return list(self._docs.values())

    def documents(self) -> list[Document]:
        return [e.doc for e in self._docs.values()]

    def entries_about(self, entity: EntityId) -> list[StoreEntry]:
        return [e for e in self._docs.values() if e.doc.entity == entity]

    def __len__(self) -> int:
        return len(self._docs)

    @property
    def sequence(self) -> int:
        return self._seq

    # -- change feed ---------------------------------------------------------

    def changes_since(self, cursor: int) -> tuple[list[Document], int]:
        """Documents whose store sequence exceeds the cursor, in sequence
        order, plus the new cursor."""
        entries = self.change_entries(cursor)
        return [e.doc for e in entries], self._seq

    def change_entries(self, cursor: int, limit: int | None = None) -> list[StoreEntry]:
        if cursor < 0 or cursor > self._seq:
            raise CursorOutOfRange(f"cursor {cursor} past sequence {self._seq}")
        entries = sorted(
            (e for e in self._docs.values() if e.seq > cursor), key=lambda e: e.seq
        )
        if limit is not None:
            entries = entries[:limit]
        return entries

    # -- persistence ---------------------------------------------------------

    def save_snapshot(self, path: str) -> None:
        lines = []
        for key in sorted(self._docs):
            lines.append(snapshot_line(self._docs[key].doc))
        with open(path, "w", encoding="utf-8") as fh:
            fh.writelines(line + "\n" for line in lines)

    def load_snapshot(self, path: str) -> int:
        """Replace store contents with a snapshot; soft state (access
        times, forwarding marks, interest) resets."""
        self._docs.clear()
        self._seq = 0
        self.interest.clear()
        count = 0
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                raw = raw.rstrip("\n")
                if not raw:
                    continue
                self.apply_replica(parse_snapshot_line(raw))
                count += 1
        return count

    # -- internals ------------------------------------------------------------

    def _own_key(self, entity: EntityId) -> tuple[str, str]:
        return (entity.canonical, self.owner)

    def _install(self, doc: Document, origin: str) -> Document:
        key = (doc.entity.canonical, doc.graph.author)
        self._seq += 1
        self._docs[key] = StoreEntry(
            doc, origin, self._seq, stored_at=self.clock, last_access=self.clock
        )
        return doc


def snapshot_line(doc: Document) -> str:
    """Snapshot row: model-1 body plus a flags sidecar and the revision."""
    flags = doc.flags
    return "\t".join(
        (
            encode_model1(doc).decode("utf-8"),
            "1" if flags.private else "0",
            flags.addressed_to if flags.addressed_to is not None else "-",
            "1" if flags.cached_query else "0",
            str(doc.revision),
        )
    )


def parse_snapshot_line(line: str) -> Document:
    columns = line.split("\t")
    if len(columns) != 5:
        raise InvalidUrn(f"snapshot row needs 5 columns, got {len(columns)}")
    body, private, to, cached, revision = columns
    doc = decode_model1(body.encode("utf-8"))
    flags = Flags(
        private=private == "1",
        addressed_to=None if to == "-" else to,
        cached_query=cached == "1",
    )
    return replace(doc, flags=flags, revision=int(revision))
