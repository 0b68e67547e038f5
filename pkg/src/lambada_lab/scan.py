"""Object-store scan operator: stats pruning plus a leveled download planner.

Concurrency is spent in priority order: file metadata on its own logical
connection (level 4), pipelining across row groups (level 3), parallel column
chunks within a group (level 2), and splitting single chunks into ranged
requests (level 1) only when the higher levels leave connections idle, since
splitting inflates the request bill.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from fractions import Fraction

from . import lcf
from .billing import READ, format_usd
from .clock import Future

MIN_CHUNK_SIZE = 64 * 1024


@dataclass(frozen=True)
class ScanConfig:
    chunk_size_bytes: int = 1024 * 1024
    max_connections: int = 4
    row_group_prefetch: int = 2
    metadata_prefetch: bool = True
    decompress_threads: int = 1

    def __post_init__(self):
        if self.chunk_size_bytes < MIN_CHUNK_SIZE:
            raise ValueError("chunk size below 64 KiB floor")
        if self.max_connections < 1:
            raise ValueError("need at least one connection")
        if self.row_group_prefetch < 1:
            raise ValueError("need at least one row group in flight")
        if self.decompress_threads not in (1, 2):
            raise ValueError("decompress_threads must be 1 or 2")


@dataclass(frozen=True)
class PredicateSet:
    """Conjunction of closed per-column intervals plus a projection."""

    intervals: tuple[tuple[str, int | float, int | float], ...]
    projection: tuple[str, ...]

    def __post_init__(self):
        if not self.projection:
            raise ValueError("projection must name at least one column")
        for name, lo, hi in self.intervals:
            if lo > hi:
                raise ValueError(f"empty interval on {name}: [{lo}, {hi}]")

    def matches_row(self, row: dict) -> bool:
        return all(lo <= row[name] <= hi for name, lo, hi in self.intervals)


def prune_row_groups(footer: lcf.FileFooter, predicates: PredicateSet) -> list[int]:
    """Indices of row groups whose stats intersect every predicate interval."""
    col_idx = {name: footer.schema.index_of(name) for name, _, _ in predicates.intervals}
    surviving = []
    for g, rg in enumerate(footer.row_groups):
        keep = True
        for name, lo, hi in predicates.intervals:
            stats = rg.chunks[col_idx[name]].stats
            if stats.max_value < lo or stats.min_value > hi:
                keep = False
                break
        if keep:
            surviving.append(g)
    return surviving


@dataclass(frozen=True)
class PlanItem:
    level: int
    group: int
    column: str
    start: int
    length: int
    slot: int


def plan_downloads(
    footer: lcf.FileFooter,
    surviving: list[int],
    columns: tuple[str, ...],
    config: ScanConfig,
) -> list[PlanItem]:
    """Static data-request plan for one file's surviving groups."""
    if not surviving:
        raise ValueError("plan needs at least one surviving group")
    col_idx = [footer.schema.index_of(c) for c in columns]
    level = 2 if len(surviving) == 1 else 3
    in_flight_groups = 1 if level == 2 else min(config.row_group_prefetch, len(surviving))
    budget = len(columns) * in_flight_groups
    allow_split = budget < config.max_connections
    items: list[PlanItem] = []
    slot = 0
    for g in surviving:
        rg = footer.row_groups[g]
        for name, ci in zip(columns, col_idx):
            chunk = rg.chunks[ci]
            if allow_split and chunk.compressed_len > config.chunk_size_bytes:
                for off in range(0, chunk.compressed_len, config.chunk_size_bytes):
                    length = min(config.chunk_size_bytes, chunk.compressed_len - off)
                    items.append(PlanItem(1, g, name, chunk.offset + off, length,
                                          slot % config.max_connections))
                    slot += 1
            else:
                items.append(PlanItem(level, g, name, chunk.offset,
                                      chunk.compressed_len,
                                      slot % config.max_connections))
                slot += 1
    return items


def plan_dump(items: list[PlanItem]) -> str:
    return json.dumps(
        [
            {"level": it.level, "group": it.group, "column": it.column,
             "start": it.start, "length": it.length, "slot": it.slot}
            for it in items
        ],
        indent=2,
    )


@dataclass
class ScanReport:
    requests: int = 0
    bytes: int = 0
    rows: int = 0
    groups_read: int = 0
    groups_pruned: int = 0
    duration_us: int = 0
    request_usd: Fraction = Fraction(0)
    worker_usd: Fraction = Fraction(0)

    CSV_HEADER = "requests,bytes,rows,groups_read,groups_pruned,duration_us,request_usd,worker_usd"

    def to_csv_row(self) -> str:
        return (
            f"{self.requests},{self.bytes},{self.rows},{self.groups_read},"
            f"{self.groups_pruned},{self.duration_us},"
            f"{format_usd(self.request_usd)},{format_usd(self.worker_usd)}"
        )


class _Gate:
    """Counting semaphore for a worker's logical connections."""

    def __init__(self, slots: int):
        self.free = slots
        self.waiters: deque[Future] = deque()

    def acquire(self):
        if self.free > 0:
            self.free -= 1
            return
        fut = Future()
        self.waiters.append(fut)
        yield fut

    def release(self) -> None:
        if self.waiters:
            self.waiters.popleft().set_result(None)
        else:
            self.free += 1


def execute_scan(
    sim,
    ctx,
    bucket: str,
    paths: list[str],
    predicates: PredicateSet,
    config: ScanConfig | None = None,
    prune: bool = True,
):
    """Scan LCF files, yielding (batches, report).

    Batches are column-major tables in projection order, one per surviving
    row group, already filtered at row granularity.
    """
    config = config or ScanConfig()
    report = ScanReport()
    start_us = sim.loop.now
    start_counts = {
        b: sim.ledger.count(READ, b) for b in {bucket}
    }
    gate = _Gate(config.max_connections)

    # level 4: footers travel on their own logical connection
    def fetch_footer(path):
        footer, _size, requests = yield from lcf.read_footer_ranged(sim, ctx, bucket, path)
        return footer, requests

    footer_tasks = {}
    if config.metadata_prefetch:
        for path in paths:
            footer_tasks[path] = sim.loop.spawn(fetch_footer(path))

    fetch_cols = list(predicates.projection)
    for name, _, _ in predicates.intervals:
        if name not in fetch_cols:
            fetch_cols.append(name)
    fetch_cols = tuple(fetch_cols)

    def fetch_item(path, item):
        yield from gate.acquire()
        try:
            data, _ = yield from sim.store.get_object(
                ctx, bucket, path, (item.start, item.start + item.length)
            )
            return bytes(data)
        finally:
            gate.release()

    batches = []
    for path in paths:
        if path in footer_tasks:
            footer, footer_requests = yield footer_tasks[path]
        else:
            footer, footer_requests = yield from fetch_footer(path)
        report.requests += footer_requests
        surviving = prune_row_groups(footer, predicates) if prune else list(
            range(len(footer.row_groups))
        )
        report.groups_pruned += len(footer.row_groups) - len(surviving)
        report.groups_read += len(surviving)
        if not surviving:
            continue
        plan = plan_downloads(footer, surviving, fetch_cols, config)
        by_group: dict[int, list[PlanItem]] = {}
        for item in plan:
            by_group.setdefault(item.group, []).append(item)

        pending: deque[tuple[int, list]] = deque()
        group_iter = iter(surviving)

        def launch_next_group():
            g = next(group_iter, None)
            if g is None:
                return False
            tasks = [sim.loop.spawn(fetch_item(path, it)) for it in by_group[g]]
            pending.append((g, tasks))
            return True

        window = 1 if len(surviving) == 1 else config.row_group_prefetch
        for _ in range(window):
            if not launch_next_group():
                break
        while pending:
            g, tasks = pending.popleft()
            parts = []
            for task in tasks:
                parts.append((yield task))
            launch_next_group()
            rg = footer.row_groups[g]
            # reassemble per column (level-1 splits arrive in offset order)
            col_bytes: dict[str, list[bytes]] = {c: [] for c in fetch_cols}
            for item, raw in zip(by_group[g], parts):
                col_bytes[item.column].append(raw)
                report.requests += 1
                report.bytes += len(raw)
            decoded = {}
            total_encoded = 0
            for name in fetch_cols:
                ci = footer.schema.index_of(name)
                chunk = rg.chunks[ci]
                raw = b"".join(col_bytes[name])
                total_encoded += len(raw)
                decoded[name] = lcf.decode_chunk(
                    chunk, raw, footer.schema.columns[ci][1], rg.row_count
                )
            cycles = sim.cfg.decode_cycles_per_byte * total_encoded
            if cycles:
                yield from ctx.compute(cycles, threads=config.decompress_threads)
            if predicates.intervals:
                keep = [
                    i
                    for i in range(rg.row_count)
                    if all(
                        lo <= decoded[name][i] <= hi
                        for name, lo, hi in predicates.intervals
                    )
                ]
            else:
                keep = range(rg.row_count)
            batch = [[decoded[c][i] for i in keep] for c in predicates.projection]
            report.rows += len(batch[0])
            batches.append(batch)

    report.duration_us = sim.loop.now - start_us
    read_delta = sim.ledger.count(READ, bucket) - start_counts[bucket]
    report.request_usd = read_delta * sim.prices.request_price(READ)
    if ctx.spec is not None:
        report.worker_usd = (
            sim.prices.worker_rate(ctx.spec.memory_mib)
            * Fraction(report.duration_us, 1_000_000)
        )
    return batches, report
