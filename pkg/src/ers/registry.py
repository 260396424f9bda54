"""The global registry: a transactional, read-mostly aggregation service.

Writes go through transactions built from nine atomic operations. Every
transaction computes its lock demand up front and acquires all locks or
none (which rules out deadlock), applies its operations with an undo log,
then releases. Lock contention aborts and retries with linear backoff, at
most ten retries; a failed operation precondition rolls the whole
transaction back without retry.

Two lock granularities exist: whole-entity locks and entity+predicate
locks. Two locks conflict only when they target the same entity and their
predicate scopes overlap; a whole-entity lock overlaps every predicate.
Locks may name entities that do not exist yet, so inserts serialize too.

The registry enforces a uniqueness constraint on (predicate, object)
pairs for property triples in ``strict`` mode; ``lax`` mode (used while
folding harvested field data and while deep-copying) only rejects exact
duplicate triples. Links are bidirectional: both halves are written and
removed together, and the mirror half carries an inverse marker.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

from .errors import (
    EntityExists,
    EntityNotFound,
    LinkExists,
    LinkNotFound,
    PropertyNotFound,
    RegistryOpError,
    ReservedPredicate,
    RoleViolation,
    SemanticFailure,
    UniquenessViolation,
)
from .model import (
    Document,
    EntityId,
    GraphId,
    Value,
    encode_nquads,
    parse_entity_id,
)

LINKS_TO = "linksTo"
SAME_AS = "sameAs"
LINK_PREDICATES = frozenset({LINKS_TO, SAME_AS})

ENTITY = "E"
ENTITY_PROPERTY = "E+P"

MODE_STRICT = "strict"
MODE_LAX = "lax"

MAX_RETRIES = 10


# ---------------------------------------------------------------------------
# Locks


@dataclass(frozen=True, slots=True)
class LockKey:
    level: str
    entity: str
    predicate: str | None = None

    def __post_init__(self):
        if self.level not in (ENTITY, ENTITY_PROPERTY):
            raise ValueError(f"unknown lock level {self.level!r}")
        if (self.predicate is None) != (self.level == ENTITY):
            raise ValueError("predicate present iff level is E+P")

    @classmethod
    def entity_lock(cls, entity: EntityId) -> "LockKey":
        return cls(ENTITY, entity.canonical)

    @classmethod
    def property_lock(cls, entity: EntityId, predicate: str) -> "LockKey":
        return cls(ENTITY_PROPERTY, entity.canonical, predicate)


def compatible(held: LockKey, requested: LockKey) -> bool:
    """Symmetric lock compatibility.

    Two property locks conflict only on the same entity and predicate; an
    entity lock conflicts with everything on the same entity.
    """
    if held.entity != requested.entity:
        return True
    if held.level == ENTITY or requested.level == ENTITY:
        return False
    return held.predicate != requested.predicate


class LockTable:
    """All-or-nothing lock grants; the single serialization point."""

    def __init__(self):
        self._held: dict[LockKey, int] = {}
        self._mutex = threading.Lock()

    def try_acquire(self, tx_id: int, keys: frozenset[LockKey]) -> bool:
        with self._mutex:
            for key in keys:
                for held_key, held_owner in self._held.items():
                    if held_owner != tx_id and not compatible(held_key, key):
                        return False
            for key in keys:
                self._held[key] = tx_id
            return True

    def release(self, tx_id: int) -> None:
        with self._mutex:
            for key in [k for k, owner in self._held.items() if owner == tx_id]:
                del self._held[key]

    def held_keys(self) -> dict[LockKey, int]:
        with self._mutex:
            return dict(self._held)

    def verify(self) -> None:
        """Assert pairwise compatibility across distinct transactions."""
        items = list(self.held_keys().items())
        for i, (key_a, owner_a) in enumerate(items):
            for key_b, owner_b in items[i + 1:]:
                if owner_a != owner_b and not compatible(key_a, key_b):
                    raise AssertionError(
                        f"incompatible locks held: {key_a} by {owner_a}, "
                        f"{key_b} by {owner_b}"
                    )


# ---------------------------------------------------------------------------
# Atomic operations

OP_IE = "IE"
OP_IP = "IP"
OP_UP = "UP"
OP_DP = "DP"
OP_DE = "DE"
OP_SC = "SC"
OP_DC = "DC"
OP_IL = "IL"
OP_DL = "DL"


@dataclass(frozen=True)
class AtomicOp:
    kind: str
    a: EntityId
    b: EntityId | None = None
    predicate: str | None = None
    value: Value | None = None
    new_value: Value | None = None

    @classmethod
    def insert_entity(cls, entity: EntityId) -> "AtomicOp":
        return cls(OP_IE, entity)

    @classmethod
    def delete_entity(cls, entity: EntityId) -> "AtomicOp":
        return cls(OP_DE, entity)

    @classmethod
    def insert_property(cls, entity: EntityId, predicate: str, value: Value) -> "AtomicOp":
        return cls(OP_IP, entity, predicate=predicate, value=value)

    @classmethod
    def update_property(
        cls, entity: EntityId, predicate: str, old: Value, new: Value
    ) -> "AtomicOp":
        return cls(OP_UP, entity, predicate=predicate, value=old, new_value=new)

    @classmethod
    def delete_property(cls, entity: EntityId, predicate: str, value: Value) -> "AtomicOp":
        return cls(OP_DP, entity, predicate=predicate, value=value)

    @classmethod
    def insert_link(cls, a: EntityId, b: EntityId, predicate: str = LINKS_TO) -> "AtomicOp":
        return cls(OP_IL, a, b=b, predicate=predicate)

    @classmethod
    def delete_link(cls, a: EntityId, b: EntityId, predicate: str = LINKS_TO) -> "AtomicOp":
        return cls(OP_DL, a, b=b, predicate=predicate)

    @classmethod
    def shallow_copy(cls, source: EntityId, target: EntityId) -> "AtomicOp":
        return cls(OP_SC, source, b=target)

    @classmethod
    def deep_copy(cls, source: EntityId, target: EntityId) -> "AtomicOp":
        return cls(OP_DC, source, b=target)

    def lock_demand(self) -> frozenset[LockKey]:
        """Pure function of (kind, args), per the operation/lock mapping."""
        if self.kind in (OP_IP, OP_UP, OP_DP):
            return frozenset({LockKey.property_lock(self.a, self.predicate)})
        if self.kind in (OP_IL, OP_DL):
            pred = self.predicate or LINKS_TO
            return frozenset(
                {
                    LockKey.property_lock(self.a, pred),
                    LockKey.property_lock(self.b, pred),
                }
            )
        if self.kind == OP_SC:
            return frozenset(
                {
                    LockKey.property_lock(self.a, SAME_AS),
                    LockKey.property_lock(self.b, SAME_AS),
                }
            )
        if self.kind in (OP_IE, OP_DE):
            return frozenset({LockKey.entity_lock(self.a)})
        if self.kind == OP_DC:
            return frozenset(
                {LockKey.entity_lock(self.a), LockKey.entity_lock(self.b)}
            )
        raise ValueError(f"unknown op kind {self.kind!r}")


def tx_lock_demands(ops: list[AtomicOp]) -> frozenset[LockKey]:
    demand: set[LockKey] = set()
    for op in ops:
        demand |= op.lock_demand()
    return frozenset(demand)


TX_PENDING = "pending"
TX_COMMITTED = "committed"
TX_ABORTED = "aborted"


@dataclass
class Transaction:
    tx_id: int
    ops: list[AtomicOp]
    retries_used: int = 0
    state: str = TX_PENDING


@dataclass(frozen=True)
class TxOutcome:
    committed: bool
    retries_used: int
    reason: str | None = None  # None | "contention" | "semantic"
    error: SemanticFailure | None = None
    mutations: int = 0


# ---------------------------------------------------------------------------
# Registry state


@dataclass
class _LinkHalf:
    origin: bool  # True on the side the link was created from
    other_gen: int  # counterpart's generation when the link was written
    self_inverse: bool = False
    graph: str = "global"


class _EntityRecord:
    __slots__ = ("gen", "properties", "links", "prop_graphs")

    def __init__(self, gen: int):
        self.gen = gen
        # predicate -> ordered list of Value
        self.properties: dict[str, list[Value]] = {}
        # (predicate, other entity canonical) -> _LinkHalf
        self.links: dict[tuple[str, str], _LinkHalf] = {}
        # (predicate, value text, value kind) -> contributing graph author
        self.prop_graphs: dict[tuple[str, str, str], str] = {}


@dataclass
class HarvestReport:
    bridge: str
    docs_seen: int = 0
    docs_folded: int = 0
    entities_created: int = 0
    properties_added: int = 0
    links_added: int = 0
    violations: list[str] = field(default_factory=list)


class Registry:
    """Registry state plus the transactional write path.

    External callers read; writes happen through ``execute`` (or the
    steppable driver used by benchmarks and the interleaving checker).
    """

    def __init__(self, mode: str = MODE_STRICT, graph_author: str = "global"):
        if mode not in (MODE_STRICT, MODE_LAX):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.graph_author = graph_author
        self.locks = LockTable()
        self._entities: dict[str, _EntityRecord] = {}
        # (predicate, value text, value kind) -> holders in insert order
        self._unique: dict[tuple[str, str, str], list[str]] = {}
        self._state_mutex = threading.RLock()
        self._tx_counter = 0
        self._tx_counter_mutex = threading.Lock()
        self._gen_counter = 0
        self.harvest_cursors: dict[str, int] = {}

    def _live(self, other_canonical: str, half: _LinkHalf) -> bool:
        # A link half is visible only while its counterpart still exists
        # at the generation the half was written against. Deleting an
        # entity therefore hides (rather than mutates) the halves other
        # records hold, and re-creating the entity cannot resurrect them.
        record = self._entities.get(other_canonical)
        return record is not None and record.gen == half.other_gen

    def _live_links(self, record: _EntityRecord) -> list[tuple[tuple[str, str], _LinkHalf]]:
        return [
            (key, half)
            for key, half in record.links.items()
            if self._live(key[1], half)
        ]

    # -- reads ---------------------------------------------------------------

    def entity_exists(self, entity: EntityId) -> bool:
        with self._state_mutex:
            return entity.canonical in self._entities

    def entity_count(self) -> int:
        with self._state_mutex:
            return len(self._entities)

    def entity_ids(self) -> list[str]:
        with self._state_mutex:
            return sorted(self._entities)

    def get_properties(self, entity: EntityId) -> dict[str, tuple[Value, ...]]:
        with self._state_mutex:
            record = self._entities.get(entity.canonical)
            if record is None:
                raise EntityNotFound(entity.canonical)
            return {p: tuple(vs) for p, vs in record.properties.items()}

    def get_links(self, entity: EntityId, predicate: str | None = None) -> list[tuple[str, str]]:
        """(predicate, other entity canonical) pairs, both halves visible."""
        with self._state_mutex:
            record = self._entities.get(entity.canonical)
            if record is None:
                raise EntityNotFound(entity.canonical)
            return sorted(
                (pred, other)
                for (pred, other), half in self._live_links(record)
                if predicate is None or pred == predicate
            )

    def has_link(self, a: EntityId, b: EntityId, predicate: str = LINKS_TO) -> bool:
        with self._state_mutex:
            record = self._entities.get(a.canonical)
            if record is None:
                return False
            half = record.links.get((predicate, b.canonical))
            return half is not None and self._live(b.canonical, half)

    def check_uniqueness(self, predicate: str, value: Value) -> EntityId | None:
        """Subject currently holding (predicate, value), if any."""
        with self._state_mutex:
            holders = self._unique.get((predicate, value.text, value.kind))
            if not holders:
                return None
            return parse_entity_id(holders[0])

    def uniqueness_index(self) -> dict[tuple[str, str, str], tuple[str, ...]]:
        with self._state_mutex:
            return {k: tuple(v) for k, v in self._unique.items() if v}

    def property_triples(self) -> list[tuple[str, str, Value]]:
        with self._state_mutex:
            out = []
            for canonical in sorted(self._entities):
                record = self._entities[canonical]
                for pred in sorted(record.properties):
                    for value in record.properties[pred]:
                        out.append((canonical, pred, value))
            return out

    def link_pairs(self) -> list[tuple[str, str, str]]:
        """Origin halves only: (subject, predicate, object)."""
        with self._state_mutex:
            out = []
            for canonical in sorted(self._entities):
                for (pred, other), half in self._live_links(self._entities[canonical]):
                    if half.origin:
                        out.append((canonical, pred, other))
            return sorted(out)

    def export_nquads(self) -> bytes:
        """Snapshot as N-Quads, graph column = contributing graph."""
        with self._state_mutex:
            docs: dict[tuple[str, str], Document] = {}

            def add(canonical: str, author: str, pred: str, value: Value) -> None:
                key = (canonical, author)
                doc = docs.get(key) or Document(parse_entity_id(canonical), GraphId(author))
                docs[key] = doc.with_value(pred, value)

            for canonical in sorted(self._entities):
                record = self._entities[canonical]
                for pred in sorted(record.properties):
                    for value in record.properties[pred]:
                        author = record.prop_graphs.get(
                            (pred, value.text, value.kind), self.graph_author
                        )
                        add(canonical, author, pred, value)
                for (pred, other), half in sorted(self._live_links(record)):
                    add(canonical, half.graph, pred,
                        Value.reference(parse_entity_id(other)))
            return encode_nquads(list(docs.values()))

    def fingerprint(self) -> bytes:
        return self.export_nquads()

    # -- transactional write path --------------------------------------------

    def next_tx_id(self) -> int:
        with self._tx_counter_mutex:
            self._tx_counter += 1
            return self._tx_counter

    def transaction(self, ops: list[AtomicOp]) -> Transaction:
        return Transaction(self.next_tx_id(), list(ops))

    def execute(
        self,
        tx: Transaction,
        mode: str | None = None,
        backoff_quantum: float = 0.0005,
    ) -> TxOutcome:
        """Run a transaction to completion, blocking between retries.

        Contention aborts and retries up to MAX_RETRIES times with a
        linearly growing backoff. A semantic failure (an operation
        precondition) rolls everything back and does not retry.
        """
        if not tx.ops:
            raise ValueError("transaction has no operations")
        demands = tx_lock_demands(tx.ops)
        while True:
            if self.locks.try_acquire(tx.tx_id, demands):
                try:
                    outcome = self.apply_granted(tx, mode)
                finally:
                    self.locks.release(tx.tx_id)
                return outcome
            if tx.retries_used >= MAX_RETRIES:
                tx.state = TX_ABORTED
                return TxOutcome(False, tx.retries_used, reason="contention")
            tx.retries_used += 1
            if backoff_quantum:
                time.sleep(backoff_quantum * tx.retries_used)

    def apply_granted(self, tx: Transaction, mode: str | None = None) -> TxOutcome:
        """Apply all operations of a transaction whose locks are already
        held. All-or-nothing: any semantic failure rolls back."""
        undo: list = []
        mutations = 0
        try:
            with self._state_mutex:
                for op in tx.ops:
                    mutations += self.apply_op(op, undo, mode=mode)
        except RegistryOpError as exc:
            with self._state_mutex:
                for action in reversed(undo):
                    action()
            tx.state = TX_ABORTED
            return TxOutcome(
                False, tx.retries_used, reason="semantic", error=SemanticFailure(exc)
            )
        tx.state = TX_COMMITTED
        return TxOutcome(True, tx.retries_used, mutations=mutations)

    # -- operation application -------------------------------------------------

    def apply_op(
        self,
        op: AtomicOp,
        undo: list,
        mode: str | None = None,
        graph: str | None = None,
    ) -> int:
        """Apply one operation, appending inverse actions to ``undo``.

        Returns the number of primitive state mutations performed (the
        benchmark's cost measure). Caller must hold the op's locks.
        """
        mode = mode or self.mode
        graph = graph or self.graph_author
        kind = op.kind
        if kind == OP_IE:
            return self._op_insert_entity(op.a, undo)
        if kind == OP_DE:
            return self._op_delete_entity(op.a, undo)
        if kind == OP_IP:
            return self._op_insert_property(op.a, op.predicate, op.value, undo, mode, graph)
        if kind == OP_UP:
            removed = self._op_delete_property(op.a, op.predicate, op.value, undo)
            added = self._op_insert_property(
                op.a, op.predicate, op.new_value, undo, mode, graph
            )
            return removed + added
        if kind == OP_DP:
            return self._op_delete_property(op.a, op.predicate, op.value, undo)
        if kind == OP_IL:
            return self._op_insert_link(op.a, op.b, op.predicate or LINKS_TO, undo, graph)
        if kind == OP_DL:
            return self._op_delete_link(op.a, op.b, op.predicate or LINKS_TO, undo)
        if kind == OP_SC:
            return self._op_shallow_copy(op.a, op.b, undo, graph)
        if kind == OP_DC:
            return self._op_deep_copy(op.a, op.b, undo, graph)
        raise ValueError(f"unknown op kind {kind!r}")

    # Individual operations. Each validates its preconditions, mutates,
    # and pushes exact inverse closures onto the undo list.

    def _record(self, entity: EntityId) -> _EntityRecord:
        record = self._entities.get(entity.canonical)
        if record is None:
            raise EntityNotFound(entity.canonical)
        return record

    def _op_insert_entity(self, entity: EntityId, undo: list) -> int:
        canonical = entity.canonical
        if canonical in self._entities:
            raise EntityExists(canonical)
        self._gen_counter += 1
        self._entities[canonical] = _EntityRecord(self._gen_counter)
        undo.append(lambda: self._entities.pop(canonical, None))
        return 1

    def _op_delete_entity(self, entity: EntityId, undo: list) -> int:
        """Remove the entity and its triples.

        Only this entity's record is touched: mirror halves held by other
        records go stale through the generation check, which removes them
        from every read without writing outside the lock scope.
        """
        canonical = entity.canonical
        record = self._record(entity)
        mutations = 1 + len(self._live_links(record))
        for pred, values in record.properties.items():
            for value in values:
                self._unindex(canonical, pred, value, undo)
                mutations += 1
        del self._entities[canonical]
        undo.append(lambda: self._entities.__setitem__(canonical, record))
        return mutations

    def _op_insert_property(
        self,
        entity: EntityId,
        predicate: str,
        value: Value,
        undo: list,
        mode: str,
        graph: str,
    ) -> int:
        if predicate in LINK_PREDICATES:
            raise ReservedPredicate(f"{predicate} is reserved for links")
        record = self._record(entity)
        canonical = entity.canonical
        key = (predicate, value.text, value.kind)
        holders = self._unique.get(key, [])
        if mode == MODE_STRICT and holders:
            raise UniquenessViolation(
                f"({predicate}, {value.text}) already held by {holders[0]}"
            )
        if canonical in holders:
            raise UniquenessViolation(
                f"({predicate}, {value.text}) duplicated on {canonical}"
            )
        record.properties.setdefault(predicate, []).append(value)
        self._unique.setdefault(key, []).append(canonical)
        record.prop_graphs[key] = graph

        def revert():
            values = record.properties.get(predicate, [])
            if value in values:
                values.remove(value)
                if not values:
                    record.properties.pop(predicate, None)
            if canonical in self._unique.get(key, []):
                self._unique[key].remove(canonical)
            record.prop_graphs.pop(key, None)

        undo.append(revert)
        return 1

    def _op_delete_property(
        self, entity: EntityId, predicate: str, value: Value, undo: list
    ) -> int:
        record = self._record(entity)
        canonical = entity.canonical
        values = record.properties.get(predicate, [])
        if value not in values:
            raise PropertyNotFound(f"({predicate}, {value.text}) on {canonical}")
        key = (predicate, value.text, value.kind)
        value_pos = values.index(value)
        values.pop(value_pos)
        if not values:
            record.properties.pop(predicate, None)
        holders = self._unique.get(key, [])
        holder_pos = holders.index(canonical) if canonical in holders else None
        if holder_pos is not None:
            holders.pop(holder_pos)
        graph = record.prop_graphs.pop(key, None)

        def revert():
            record.properties.setdefault(predicate, []).insert(value_pos, value)
            if holder_pos is not None:
                self._unique.setdefault(key, []).insert(holder_pos, canonical)
            if graph is not None:
                record.prop_graphs[key] = graph

        undo.append(revert)
        return 1

    def _set_half(self, record: _EntityRecord, key: tuple[str, str],
                  half: _LinkHalf, undo: list) -> None:
        # A stale half may occupy the key; the undo restores it exactly.
        previous = record.links.get(key)
        record.links[key] = half
        if previous is None:
            undo.append(lambda: record.links.pop(key, None))
        else:
            undo.append(lambda: record.links.__setitem__(key, previous))

    def _op_insert_link(
        self, a: EntityId, b: EntityId, predicate: str, undo: list, graph: str
    ) -> int:
        record_a = self._record(a)
        record_b = self._record(b)
        key_ab = (predicate, b.canonical)
        key_ba = (predicate, a.canonical)
        if self.has_link(a, b, predicate) or self.has_link(b, a, predicate):
            raise LinkExists(f"{a.canonical} {predicate} {b.canonical}")
        if a.canonical == b.canonical:
            self._set_half(
                record_a, key_ab,
                _LinkHalf(origin=True, other_gen=record_a.gen,
                          self_inverse=True, graph=graph),
                undo,
            )
            return 1
        self._set_half(
            record_a, key_ab,
            _LinkHalf(origin=True, other_gen=record_b.gen, graph=graph), undo,
        )
        self._set_half(
            record_b, key_ba,
            _LinkHalf(origin=False, other_gen=record_a.gen, graph=graph), undo,
        )
        return 2

    def _op_delete_link(self, a: EntityId, b: EntityId, predicate: str, undo: list) -> int:
        record_a = self._record(a)
        record_b = self._record(b)
        key_ab = (predicate, b.canonical)
        key_ba = (predicate, a.canonical)
        if not (self.has_link(a, b, predicate) and self.has_link(b, a, predicate)):
            raise LinkNotFound(f"{a.canonical} {predicate} {b.canonical}")
        half_ab = record_a.links.pop(key_ab)
        undo.append(lambda: record_a.links.__setitem__(key_ab, half_ab))
        if a.canonical == b.canonical:
            return 1
        half_ba = record_b.links.pop(key_ba)
        undo.append(lambda: record_b.links.__setitem__(key_ba, half_ba))
        return 2

    def _op_shallow_copy(self, source: EntityId, target: EntityId, undo: list, graph: str) -> int:
        if source.canonical not in self._entities:
            raise EntityNotFound(source.canonical)
        if target.canonical in self._entities:
            raise EntityExists(target.canonical)
        mutations = self._op_insert_entity(target, undo)
        mutations += self._op_insert_link(source, target, SAME_AS, undo, graph)
        return mutations

    def _op_deep_copy(self, source: EntityId, target: EntityId, undo: list, graph: str) -> int:
        record = self._entities.get(source.canonical)
        if record is None:
            raise EntityNotFound(source.canonical)
        if target.canonical in self._entities:
            raise EntityExists(target.canonical)
        mutations = self._op_insert_entity(target, undo)
        # Uniqueness is suspended while copying: the copy necessarily
        # duplicates (predicate, value) pairs of the source.
        for pred in list(record.properties):
            for value in list(record.properties[pred]):
                mutations += self._op_insert_property(
                    target, pred, value, undo, MODE_LAX, graph
                )
        target_record = self._entities[target.canonical]
        for (pred, other), _half in self._live_links(record):
            counterpart = target if other == source.canonical else parse_entity_id(other)
            if (pred, counterpart.canonical) in target_record.links:
                continue
            mutations += self._op_insert_link(target, counterpart, pred, undo, graph)
        return mutations

    def _unindex(self, canonical: str, predicate: str, value: Value, undo: list) -> None:
        key = (predicate, value.text, value.kind)
        holders = self._unique.get(key, [])
        if canonical in holders:
            pos = holders.index(canonical)
            holders.pop(pos)
            undo.append(lambda: self._unique.setdefault(key, []).insert(pos, canonical))

    # -- harvest -----------------------------------------------------------------

    def harvest(self, bridge) -> HarvestReport:
        """Pull all non-private documents from a bridge's change feed and
        fold them in. Problems are recorded, never fatal, so dirty field
        data cannot wedge the harvester."""
        if getattr(bridge, "role", None) != "bridge":
            raise RoleViolation(f"harvest source {bridge!r} is not a bridge")
        report = HarvestReport(bridge.name)
        cursor = self.harvest_cursors.get(bridge.name, 0)
        entries = bridge.store.change_entries(cursor)
        if entries:
            self.harvest_cursors[bridge.name] = entries[-1].seq
        for entry in entries:
            report.docs_seen += 1
            doc = entry.doc
            if doc.flags.private:
                report.violations.append(f"private document skipped: {doc.doc_id}")
                continue
            entry.forwarded = True
            self._fold_document(doc, report)
            report.docs_folded += 1
        return report

    def _fold_document(self, doc: Document, report: HarvestReport) -> None:
        author = doc.graph.author
        if self._fold_op(
            AtomicOp.insert_entity(doc.entity), report, author, suppress=(EntityExists,)
        ):
            report.entities_created += 1
        for pred, value in doc.data_pairs():
            if pred in LINK_PREDICATES and value.is_reference:
                other = parse_entity_id(value.text)
                if self._fold_op(
                    AtomicOp.insert_entity(other), report, author, suppress=(EntityExists,)
                ):
                    report.entities_created += 1
                # Duplicate links are idempotent refolds, skipped quietly.
                if self._fold_op(
                    AtomicOp.insert_link(doc.entity, other, pred),
                    report,
                    author,
                    suppress=(LinkExists,),
                ):
                    report.links_added += 1
            elif pred in LINK_PREDICATES:
                report.violations.append(
                    f"literal under link predicate {pred} on {doc.doc_id}"
                )
            else:
                # Lax mode: only exact duplicates violate, and a duplicate
                # is an idempotent refold.
                if self._fold_op(
                    AtomicOp.insert_property(doc.entity, pred, value),
                    report,
                    author,
                    suppress=(UniquenessViolation,),
                ):
                    report.properties_added += 1

    def _fold_op(
        self,
        op: AtomicOp,
        report: HarvestReport,
        graph: str,
        suppress: tuple = (),
    ) -> bool:
        """One internally generated mini-transaction per folded op."""
        tx = self.transaction([op])
        demands = tx_lock_demands(tx.ops)
        while not self.locks.try_acquire(tx.tx_id, demands):
            if tx.retries_used >= MAX_RETRIES:
                report.violations.append(f"contention folding {op.kind}")
                return False
            tx.retries_used += 1
            time.sleep(0.0001 * tx.retries_used)
        undo: list = []
        try:
            with self._state_mutex:
                self.apply_op(op, undo, mode=MODE_LAX, graph=graph)
        except RegistryOpError as exc:
            with self._state_mutex:
                for action in reversed(undo):
                    action()
            if not isinstance(exc, suppress):
                report.violations.append(f"{op.kind}: {exc}")
            return False
        finally:
            self.locks.release(tx.tx_id)
        return True


# ---------------------------------------------------------------------------
# Steppable execution


DRIVER_WAITING = "waiting"
DRIVER_HOLDING = "holding"
DRIVER_DONE = "done"

STEP_GRANTED = "granted"
STEP_CONTENTION = "contention"
STEP_APPLIED = "applied"
STEP_COMMITTED = "committed"
STEP_ABORTED_CONTENTION = "aborted_contention"
STEP_ABORTED_SEMANTIC = "aborted_semantic"


class TxDriver:
    """One transaction advanced one scheduler step at a time.

    Steps: a failed acquisition (one retry), a successful acquisition,
    one operation application, and the final commit-and-release. The
    interleaving checker and the virtual-time benchmark both drive
    transactions through this surface, so what they explore is exactly
    what the blocking executor does.
    """

    def __init__(self, registry: Registry, tx: Transaction, mode: str | None = None):
        self.registry = registry
        self.tx = tx
        self.mode = mode
        self.demands = tx_lock_demands(tx.ops)
        self.phase = DRIVER_WAITING
        self.op_index = 0
        self.undo: list = []
        self.mutations = 0
        self.outcome: TxOutcome | None = None

    @property
    def done(self) -> bool:
        return self.phase == DRIVER_DONE

    def step(self) -> str:
        if self.phase == DRIVER_WAITING:
            if self.registry.locks.try_acquire(self.tx.tx_id, self.demands):
                self.phase = DRIVER_HOLDING
                return STEP_GRANTED
            if self.tx.retries_used >= MAX_RETRIES:
                self.tx.state = TX_ABORTED
                self.outcome = TxOutcome(
                    False, self.tx.retries_used, reason="contention"
                )
                self.phase = DRIVER_DONE
                return STEP_ABORTED_CONTENTION
            self.tx.retries_used += 1
            return STEP_CONTENTION
        if self.phase == DRIVER_HOLDING:
            if self.op_index < len(self.tx.ops):
                op = self.tx.ops[self.op_index]
                try:
                    self.mutations += self.registry.apply_op(
                        op, self.undo, mode=self.mode
                    )
                except RegistryOpError as exc:
                    for action in reversed(self.undo):
                        action()
                    self.registry.locks.release(self.tx.tx_id)
                    self.tx.state = TX_ABORTED
                    self.outcome = TxOutcome(
                        False,
                        self.tx.retries_used,
                        reason="semantic",
                        error=SemanticFailure(exc),
                    )
                    self.phase = DRIVER_DONE
                    return STEP_ABORTED_SEMANTIC
                self.op_index += 1
                return STEP_APPLIED
            self.registry.locks.release(self.tx.tx_id)
            self.tx.state = TX_COMMITTED
            self.outcome = TxOutcome(
                True, self.tx.retries_used, mutations=self.mutations
            )
            self.phase = DRIVER_DONE
            return STEP_COMMITTED
        raise RuntimeError("stepping a finished transaction")
