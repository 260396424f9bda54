"""Deterministic virtual-time benchmark for the registry write path.

Logical clients run transactions back to back against one registry.
Time is virtual: a granted transaction occupies its lock scope for a
service time proportional to the work done (a fixed charge per operation
plus a charge per primitive mutation), and a contending client retries
after a linearly growing backoff, up to the retry bound. A discrete-event
loop orders everything, so a (config, seed) pair always produces the same
numbers, bit for bit.

Clients build each transaction against the current registry state at
attempt time (optimistic reads): updates target values that exist, link
inserts look for absent pairs and flip to deletes when the space is
saturated, so semantic aborts stay rare and contention dominates, which
is the effect the benchmark measures.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field

from .model import EntityId, Value, parse_entity_id
from .registry import (
    AtomicOp,
    MAX_RETRIES,
    MODE_LAX,
    Registry,
    tx_lock_demands,
)

MIX_KINDS = ("ip", "up", "dp", "il", "dl", "sc", "dc")
DEFAULT_MIX = {"up": 1.0, "il": 1.0, "dl": 1.0}
# The conflict experiments drive link traffic only: every transaction
# then contends on the link predicate of the pool entities, so a pool of
# one entity fully serializes.
LINK_MIX = {"il": 1.0, "dl": 1.0}

OP_COST = 25.0
MUTATION_COST = 5.0
BACKOFF_QUANTUM = 1.0

_EV_RELEASE = 0
_EV_ATTEMPT = 1


@dataclass
class BenchConfig:
    clients: int
    count: int
    pool: int
    mix: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_MIX))
    seed: int = 0
    op_cost: float = OP_COST
    mutation_cost: float = MUTATION_COST
    quantum: float = BACKOFF_QUANTUM

    def __post_init__(self):
        if self.clients < 1 or self.count < 1 or self.pool < 1:
            raise ValueError("clients, count and pool must be >= 1")
        weights = {k: w for k, w in self.mix.items() if w > 0}
        if not weights or any(k not in MIX_KINDS for k in weights):
            raise ValueError(f"mix must weight kinds from {MIX_KINDS}")
        self.mix = weights


@dataclass
class BenchResult:
    clients: int
    pool_size: int
    committed: int
    aborted_contention: int
    aborted_semantic: int
    total_retries: int
    elapsed: float
    throughput: float
    mean_retries_per_commit: float

    CSV_HEADER = (
        "clients,pool_size,committed,aborted_contention,aborted_semantic,"
        "total_retries,elapsed,throughput_tx_per_unit,mean_retries_per_commit"
    )

    def csv_row(self) -> str:
        return (
            f"{self.clients},{self.pool_size},{self.committed},"
            f"{self.aborted_contention},{self.aborted_semantic},"
            f"{self.total_retries},{self.elapsed:.6f},{self.throughput:.6f},"
            f"{self.mean_retries_per_commit:.6f}"
        )


def parse_mix(text: str) -> dict[str, float]:
    """Parse ``ip:up:dp:il:dl:sc:dc`` weight strings, e.g. ``0:1:0:1:1:0:0``."""
    parts = text.split(":")
    if len(parts) != len(MIX_KINDS):
        raise ValueError(f"mix needs {len(MIX_KINDS)} weights, got {len(parts)}")
    try:
        weights = [float(p) for p in parts]
    except ValueError as exc:
        raise ValueError(f"bad mix weight in {text!r}") from exc
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ValueError("mix weights must be non-negative and sum > 0")
    return {k: w for k, w in zip(MIX_KINDS, weights) if w > 0}


def seed_pool(registry: Registry, pool: int, seed: int) -> list[EntityId]:
    """Create the entity pool: 8-12 properties per entity, unique values."""
    rng = random.Random(f"pool:{seed}")
    entities = []
    for i in range(pool):
        entity = EntityId("bench", f"e{i}")
        undo: list = []
        registry.apply_op(AtomicOp.insert_entity(entity), undo)
        for j in range(rng.randint(8, 12)):
            registry.apply_op(
                AtomicOp.insert_property(
                    entity, f"p{j}", Value.literal(f"seed-{i}-{j}")
                ),
                undo,
                mode=MODE_LAX,
            )
        entities.append(entity)
    return entities


class _Client:
    def __init__(self, client_id: int, remaining: int, seed: int):
        self.client_id = client_id
        self.remaining = remaining
        self.rng = random.Random(f"client:{seed}:{client_id}")
        self.kind: str | None = None
        self.retries = 0
        self.tx_start = 0.0
        self.serial = 0

    def fresh_value(self) -> Value:
        self.serial += 1
        return Value.literal(f"w{self.client_id}-{self.serial}")

    def fresh_entity(self) -> EntityId:
        self.serial += 1
        return EntityId("bench", f"c{self.client_id}-{self.serial}")


def _build_ops(
    client: _Client, kind: str, registry: Registry, pool: list[EntityId]
) -> list[AtomicOp]:
    rng = client.rng
    entity = pool[rng.randrange(len(pool))]
    if kind == "ip":
        return [AtomicOp.insert_property(entity, "note", client.fresh_value())]
    if kind in ("up", "dp"):
        props = registry.get_properties(entity) if registry.entity_exists(entity) else {}
        pairs = [(p, v) for p in sorted(props) for v in props[p]]
        if not pairs:
            return [AtomicOp.insert_property(entity, "note", client.fresh_value())]
        pred, value = pairs[rng.randrange(len(pairs))]
        if kind == "up":
            return [AtomicOp.update_property(entity, pred, value, client.fresh_value())]
        return [AtomicOp.delete_property(entity, pred, value)]
    if kind == "il":
        for _ in range(6):
            a = pool[rng.randrange(len(pool))]
            b = pool[rng.randrange(len(pool))]
            if not registry.has_link(a, b):
                return [AtomicOp.insert_link(a, b)]
        return [AtomicOp.delete_link(a, b)]  # space saturated: flip to delete
    if kind == "dl":
        links = registry.link_pairs()
        if not links:
            a = pool[rng.randrange(len(pool))]
            b = pool[rng.randrange(len(pool))]
            return [AtomicOp.insert_link(a, b)]  # nothing to delete: flip
        subject, pred, other = links[rng.randrange(len(links))]
        return [AtomicOp.delete_link(parse_entity_id(subject), parse_entity_id(other), pred)]
    if kind == "sc":
        return [AtomicOp.shallow_copy(entity, client.fresh_entity())]
    if kind == "dc":
        return [AtomicOp.deep_copy(entity, client.fresh_entity())]
    raise ValueError(f"unknown mix kind {kind!r}")


def run_bench(config: BenchConfig) -> BenchResult:
    """Run one benchmark configuration to completion in virtual time."""
    registry = Registry()
    pool = seed_pool(registry, config.pool, config.seed)
    kinds = sorted(config.mix)
    weights = [config.mix[k] for k in kinds]

    clients = [
        _Client(i, config.count, config.seed) for i in range(config.clients)
    ]

    committed = aborted_contention = aborted_semantic = 0
    total_retries = 0
    commit_retries = 0
    clock = 0.0
    seq = 0
    heap: list[tuple] = []

    def schedule(time_: float, rank: int, client: _Client, payload=None):
        nonlocal seq
        seq += 1
        heapq.heappush(
            heap, (time_, rank, client.tx_start, client.client_id, seq, client, payload)
        )

    for client in clients:
        schedule(0.0, _EV_ATTEMPT, client)

    def finish_tx(client: _Client, time_: float, delay: float = 0.0) -> None:
        client.kind = None
        client.retries = 0
        client.remaining -= 1
        if client.remaining > 0:
            client.tx_start = time_ + delay
            schedule(time_ + delay, _EV_ATTEMPT, client)

    while heap:
        time_, rank, _, _, _, client, payload = heapq.heappop(heap)
        clock = max(clock, time_)
        if rank == _EV_RELEASE:
            tx = payload
            registry.locks.release(tx.tx_id)
            committed += 1
            commit_retries += tx.retries_used
            total_retries += tx.retries_used
            finish_tx(client, time_)
            continue

        # Attempt: ops are rebuilt fresh against current state, so the
        # transaction that wins its locks sees exactly what it read.
        if client.kind is None:
            client.kind = client.rng.choices(kinds, weights)[0]
        ops = _build_ops(client, client.kind, registry, pool)
        tx = registry.transaction(ops)
        tx.retries_used = client.retries
        if registry.locks.try_acquire(tx.tx_id, tx_lock_demands(tx.ops)):
            outcome = registry.apply_granted(tx)
            if outcome.committed:
                cost = (
                    config.op_cost * len(tx.ops)
                    + config.mutation_cost * outcome.mutations
                )
                schedule(time_ + cost, _EV_RELEASE, client, tx)
            else:
                registry.locks.release(tx.tx_id)
                aborted_semantic += 1
                total_retries += tx.retries_used
                finish_tx(client, time_, delay=config.op_cost)
        else:
            if client.retries >= MAX_RETRIES:
                aborted_contention += 1
                total_retries += client.retries
                finish_tx(client, time_)
            else:
                client.retries += 1
                schedule(time_ + config.quantum * client.retries, _EV_ATTEMPT, client)

    elapsed = clock if clock > 0 else 1.0
    return BenchResult(
        clients=config.clients,
        pool_size=config.pool,
        committed=committed,
        aborted_contention=aborted_contention,
        aborted_semantic=aborted_semantic,
        total_retries=total_retries,
        elapsed=elapsed,
        throughput=committed / elapsed,
        mean_retries_per_commit=commit_retries / committed if committed else 0.0,
    )


def run_pool_sweep(
    clients: int, count: int, pools: list[int], mix: dict[str, float], seed: int
) -> list[BenchResult]:
    results = []
    for pool in pools:
        config = BenchConfig(clients=clients, count=count, pool=pool, mix=dict(mix), seed=seed)
        results.append(run_bench(config))
    return results


def results_csv(results: list[BenchResult]) -> str:
    lines = [BenchResult.CSV_HEADER]
    lines.extend(r.csv_row() for r in results)
    return "\n".join(lines) + "\n"
