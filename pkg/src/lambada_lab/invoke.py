"""Worker invocation strategies: direct fan-out and a two-level tree.

A driver can only issue calls at a bounded aggregate rate, so starting P
workers one by one costs P/rate seconds.  The two-level plan has the driver
start about sqrt(P) first-generation workers, each of which starts its own
list of second-generation workers before running its fragment.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .clock import AllOf, Sleep
from .substrate import FunctionSpec

DIRECT = "direct"
TWO_LEVEL = "two_level"


@dataclass(frozen=True)
class InvocationPlan:
    strategy: str
    P: int
    first_gen: tuple[int, ...]
    # first-gen worker id -> ids it must invoke
    assignment: dict[int, tuple[int, ...]] = field(default_factory=dict)

    @property
    def g(self) -> int:
        return len(self.first_gen)


def build_plan(P: int, strategy: str = DIRECT) -> InvocationPlan:
    """Assign every id in [0, P) to exactly one inviter."""
    if P < 1:
        raise ValueError("P must be >= 1")
    if strategy not in (DIRECT, TWO_LEVEL):
        raise ValueError(f"unknown strategy {strategy}")
    if strategy == DIRECT or P == 1:
        return InvocationPlan(DIRECT, P, tuple(range(P)))
    g = math.isqrt(P)
    if g * g < P:
        g += 1
    rest = list(range(g, P))
    assignment = {}
    base, extra = divmod(len(rest), g)
    pos = 0
    for i in range(g):
        take = base + (1 if i < extra else 0)
        assignment[i] = tuple(rest[pos : pos + take])
        pos += take
    return InvocationPlan(TWO_LEVEL, P, tuple(range(g)), assignment)


@dataclass
class WorkerTiming:
    worker: int
    generation: int
    parent: int  # -1 for driver-invoked
    initiated_us: int
    started_us: int


@dataclass
class InvocationReport:
    plan: InvocationPlan
    timings: list[WorkerTiming]
    makespan_us: int
    last_initiated_us: int

    CSV_HEADER = "worker,generation,parent,initiated_us,started_us"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for t in sorted(self.timings, key=lambda t: t.worker):
            lines.append(
                f"{t.worker},{t.generation},{t.parent},{t.initiated_us},{t.started_us}"
            )
        return "\n".join(lines) + "\n"

    def phase_breakdown(self) -> list[tuple[int, int, int, int]]:
        """(first-gen worker, driver delay, call latency, child fan-out span)."""
        children_last = {}
        for t in self.timings:
            if t.generation == 2:
                children_last[t.parent] = max(
                    children_last.get(t.parent, 0), t.initiated_us
                )
        rows = []
        for t in self.timings:
            if t.generation != 1:
                continue
            span = max(0, children_last.get(t.worker, t.started_us) - t.started_us)
            rows.append((t.worker, t.initiated_us, t.started_us - t.initiated_us, span))
        return rows


def _noop_fragment(ctx, payload):
    yield Sleep(0)


def run_plan(
    sim,
    plan: InvocationPlan,
    spec: FunctionSpec | None = None,
    fragment=None,
    payload_extra=None,
):
    """Execute an invocation plan; returns a task for sim.loop.run_task.

    `fragment(ctx, payload)` runs in every worker after it has finished its
    own invocations (default: nothing).  `payload_extra(wid)` supplies
    JSON-serializable per-worker input shipped inside the call payload;
    first-generation payloads carry their children's inputs too.
    """
    spec = spec or FunctionSpec()
    fragment = fragment or _noop_fragment
    timings: dict[int, WorkerTiming] = {}
    child_handles: list = []

    def extra(wid: int):
        return payload_extra(wid) if payload_extra else None

    def leaf_payload(wid: int) -> bytes:
        return json.dumps({"id": wid, "data": extra(wid)}).encode()

    def leaf_handler(ctx, payload):
        yield from fragment(ctx, payload)

    def first_gen_handler(ctx, payload):
        info = json.loads(payload)
        for cid, data in info["children"]:
            handle = yield from sim.faas.invoke(
                ctx,
                spec,
                json.dumps({"id": cid, "data": data}).encode(),
                leaf_handler,
                worker_name=f"w{cid}",
            )
            child_handles.append((cid, info["id"], handle))
        yield from fragment(ctx, payload)

    def main():
        ctx = sim.driver()
        first = []
        for wid in plan.first_gen:
            if plan.strategy == DIRECT:
                handle = yield from sim.faas.invoke(
                    ctx, spec, leaf_payload(wid), leaf_handler, worker_name=f"w{wid}"
                )
            else:
                payload = json.dumps(
                    {
                        "id": wid,
                        "data": extra(wid),
                        "children": [
                            [cid, extra(cid)] for cid in plan.assignment.get(wid, ())
                        ],
                    }
                ).encode()
                handle = yield from sim.faas.invoke(
                    ctx, spec, payload, first_gen_handler, worker_name=f"w{wid}"
                )
            first.append((wid, handle))
        yield AllOf([handle.worker for _, handle in first])
        yield AllOf([handle.started for _, _, handle in child_handles])
        for wid, handle in first:
            timings[wid] = WorkerTiming(
                wid, 1, -1, handle.initiated_at_us, handle.started_at_us
            )
        for cid, parent, handle in child_handles:
            timings[cid] = WorkerTiming(
                cid, 2, parent, handle.initiated_at_us, handle.started_at_us
            )
        rows = list(timings.values())
        return InvocationReport(
            plan,
            rows,
            makespan_us=max(t.started_us for t in rows),
            last_initiated_us=max(t.initiated_us for t in rows),
        )

    return main()
