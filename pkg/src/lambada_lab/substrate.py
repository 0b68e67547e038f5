"""In-process simulation of the serverless cloud substrate.

Object store, FaaS service and message queues move real bytes; time and money
are virtual.  All operations are generators meant to be driven with
``yield from`` inside tasks running on the :class:`~lambada_lab.clock.SimLoop`.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Generator

from . import errors
from .billing import BillingLedger, PriceSheet, LIST, READ, WRITE
from .clock import AllOf, Future, SimLoop, Sleep, Task, US_PER_MS, US_PER_S
from .config import MIB, SimConfig

VCPU_BASELINE_MIB = 1792
MEMORY_MIB_MIN = 128
MEMORY_MIB_MAX = 3008


def cpu_throughput(memory_mib: int, threads: int) -> Fraction:
    """Relative compute throughput (1 = one vCPU at 1792 MiB)."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return min(Fraction(threads), Fraction(memory_mib, VCPU_BASELINE_MIB))


@dataclass(frozen=True)
class FunctionSpec:
    memory_mib: int = 2048
    timeout_s: int = 900
    cold_start_penalty_factor: Fraction = Fraction("1.2")

    def __post_init__(self):
        if not MEMORY_MIB_MIN <= self.memory_mib <= MEMORY_MIB_MAX:
            raise ValueError(
                f"memory_mib must be in [{MEMORY_MIB_MIN}, {MEMORY_MIB_MAX}]"
            )

    @property
    def cpu_share(self) -> Fraction:
        return Fraction(self.memory_mib, VCPU_BASELINE_MIB)


class ZeroBlob:
    """Bytes-like placeholder carrying only a length.

    Large-scale benchmarks shuffle terabytes of virtual data; a ZeroBlob lets
    the substrate account for transfer time and billing without allocating
    the payload.
    """

    __slots__ = ("size",)

    def __init__(self, size: int):
        if size < 0:
            raise ValueError("size must be >= 0")
        self.size = size

    def __len__(self) -> int:
        return self.size

    def __getitem__(self, item: slice) -> "ZeroBlob":
        start, stop, step = item.indices(self.size)
        if step != 1:
            raise ValueError("ZeroBlob slices must be contiguous")
        return ZeroBlob(max(0, stop - start))

    def __repr__(self) -> str:
        return f"ZeroBlob({self.size})"


class Nic:
    """Traffic shaper for one direction of one host.

    Concurrent transfers are serialized FIFO; each data phase drains at
    ``min(per_connection, burst-while-credit, ...)``.  With the default
    configuration (per-connection rate equal to the steady rate) the
    aggregate ingress never exceeds the steady limit, which is what the
    latency model assumes for sustained scans.
    """

    def __init__(self, cfg: SimConfig):
        to_bytes_per_us = Fraction(MIB, US_PER_S)
        self.steady = cfg.steady_mib_per_s * to_bytes_per_us
        self.burst = cfg.burst_cap_mib_per_s * to_bytes_per_us
        self.per_conn = cfg.per_connection_mib_per_s * to_bytes_per_us
        self.credit_cap = cfg.burst_credit_mib * MIB
        self.tokens: Fraction = Fraction(self.credit_cap)
        self.free_at: int = 0
        self._last_update: int = 0
        self.total_bytes = 0

    def reserve(self, nbytes: int, ready_us: int) -> int:
        """Reserve the pipe for `nbytes`; returns the virtual finish time."""
        start = max(ready_us, self.free_at)
        self.tokens = min(
            Fraction(self.credit_cap),
            self.tokens + self.steady * (start - self._last_update),
        )
        remaining = Fraction(nbytes)
        t = Fraction(start)
        while remaining > 0:
            cap = self.burst if self.tokens > 0 else self.steady
            rate = min(self.per_conn, cap)
            if rate > self.steady and self.tokens > 0:
                seg = min(self.tokens / (rate - self.steady), remaining / rate)
            else:
                seg = remaining / rate
            sent = rate * seg
            self.tokens = min(
                Fraction(self.credit_cap), self.tokens + self.steady * seg - sent
            )
            remaining -= sent
            t += seg
        finish = math.ceil(t)
        self.free_at = finish
        self._last_update = finish
        self.total_bytes += nbytes
        return finish


class HostContext:
    """A network endpoint in the simulation: the driver or one worker."""

    def __init__(
        self,
        sim: "CloudSim",
        name: str,
        spec: FunctionSpec | None = None,
        invoke_rate_per_s: Fraction | None = None,
        perf_factor: Fraction = Fraction(1),
    ):
        self.sim = sim
        self.name = name
        self.spec = spec
        cfg = sim.cfg
        self.ingress = Nic(cfg)
        self.egress = Nic(cfg)
        self.first_byte_latency_us = round(cfg.first_byte_latency_ms * US_PER_MS)
        self.invoke_rate_per_s = (
            invoke_rate_per_s
            if invoke_rate_per_s is not None
            else cfg.driver_invoke_rate_per_s
        )
        self.perf_factor = perf_factor
        self._next_invoke_slot = 0

    @property
    def memory_mib(self) -> int:
        return self.spec.memory_mib if self.spec else 0

    def compute(self, cycles: int | Fraction, threads: int = 1):
        """Burn virtual CPU time for `cycles` cycles at this host's share."""
        if cycles <= 0:
            return
        if self.spec is None:
            throughput = Fraction(1)
        else:
            throughput = cpu_throughput(self.spec.memory_mib, threads)
        seconds = Fraction(cycles) / (self.sim.cfg.vcpu_hz * throughput)
        yield Sleep(math.ceil(seconds * self.perf_factor * US_PER_S))


@dataclass
class Receipt:
    duration_us: int
    category: str
    bucket: str
    nbytes: int = 0
    attempts: int = 1


class RateLimiter:
    """Sliding one-second window: admitted requests per window <= limit."""

    def __init__(self, limit_per_second: int):
        self.limit_per_second = limit_per_second
        self._window: deque[int] = deque()
        self.admissions: list[int] = []

    def try_admit(self, now_us: int) -> bool:
        cutoff = now_us - US_PER_S
        while self._window and self._window[0] <= cutoff:
            self._window.popleft()
        if len(self._window) >= self.limit_per_second:
            return False
        self._window.append(now_us)
        self.admissions.append(now_us)
        return True

    def max_window_admissions(self) -> int:
        """Largest number of admissions in any 1-second window (for checks)."""
        best = 0
        times = self.admissions
        lo = 0
        for hi in range(len(times)):
            while times[hi] - times[lo] >= US_PER_S:
                lo += 1
            best = max(best, hi - lo + 1)
        return best


class Bucket:
    def __init__(self, name: str, cfg: SimConfig):
        self.name = name
        self.objects: dict[str, Any] = {}
        self.read_limiter = RateLimiter(cfg.bucket_read_limit_per_s)
        self.write_limiter = RateLimiter(cfg.bucket_write_limit_per_s)
        self._waiters: dict[str, list[Future]] = {}

    def notify_put(self, key: str) -> None:
        for fut in self._waiters.pop(key, []):
            fut.set_result(None)

    def waiter(self, key: str) -> Future:
        fut = Future()
        self._waiters.setdefault(key, []).append(fut)
        return fut


class ObjectStore:
    def __init__(self, sim: "CloudSim"):
        self.sim = sim
        self.buckets: dict[str, Bucket] = {}

    def create_bucket(self, name: str) -> Bucket:
        if name not in self.buckets:
            self.buckets[name] = Bucket(name, self.sim.cfg)
        return self.buckets[name]

    def bucket(self, name: str) -> Bucket:
        try:
            return self.buckets[name]
        except KeyError:
            raise errors.NoSuchBucket(name)

    def seed_object(self, bucket: str, key: str, data) -> None:
        """Install an object without spending virtual time or money.

        Models data that was uploaded before the measured run.
        """
        b = self.create_bucket(bucket)
        self._check_key(key)
        b.objects[key] = data
        b.notify_put(key)

    def _check_key(self, key: str) -> None:
        if len(key.encode("utf-8")) > self.sim.cfg.max_key_bytes:
            raise errors.KeyTooLong(f"key is {len(key)} bytes, limit is {self.sim.cfg.max_key_bytes}")

    def _admit(self, limiter: RateLimiter):
        cfg = self.sim.cfg
        attempts = 1
        while not limiter.try_admit(self.sim.loop.now):
            self.sim.ledger.record_throttle()
            if attempts > cfg.throttle_max_retries:
                raise errors.Throttled(
                    f"request still throttled after {cfg.throttle_max_retries} retries"
                )
            attempts += 1
            yield Sleep(cfg.throttle_retry_delay_ms * US_PER_MS)
        return attempts

    def put_object(self, ctx: HostContext, bucket: str, key: str, data) -> Generator:
        """Write an object; returns a Receipt. Overwrites atomically."""
        b = self.bucket(bucket)
        self._check_key(key)
        start = self.sim.loop.now
        attempts = yield from self._admit(b.write_limiter)
        self.sim.ledger.charge_request(WRITE, bucket)
        yield Sleep(ctx.first_byte_latency_us)
        nbytes = len(data)
        finish = ctx.egress.reserve(nbytes, self.sim.loop.now)
        if finish > self.sim.loop.now:
            yield Sleep(finish - self.sim.loop.now)
        b.objects[key] = data
        b.notify_put(key)
        return Receipt(self.sim.loop.now - start, WRITE, bucket, nbytes, attempts)

    def get_object(
        self,
        ctx: HostContext,
        bucket: str,
        key: str,
        byte_range: tuple[int, int | None] | None = None,
    ) -> Generator:
        """Read an object or a byte range of it; returns (data, Receipt).

        A range with a negative start addresses the object's tail (suffix
        read), mirroring HTTP suffix ranges.  Requests for missing keys are
        billed like any other and raise NotFound.
        """
        b = self.bucket(bucket)
        start = self.sim.loop.now
        attempts = yield from self._admit(b.read_limiter)
        self.sim.ledger.charge_request(READ, bucket)
        yield Sleep(ctx.first_byte_latency_us)
        if key not in b.objects:
            raise errors.NotFound(f"{bucket}/{key}")
        obj = b.objects[key]
        size = len(obj)
        if byte_range is None:
            lo, hi = 0, size
        else:
            lo, hi = byte_range
            if lo < 0:
                lo, hi = max(0, size + lo), size
            else:
                hi = size if hi is None else min(hi, size)
            if lo > size or hi < lo:
                raise errors.InvalidRange(f"range [{lo}, {hi}) of object of size {size}")
        data = obj[lo:hi]
        finish = ctx.ingress.reserve(hi - lo, self.sim.loop.now)
        if finish > self.sim.loop.now:
            yield Sleep(finish - self.sim.loop.now)
        return data, Receipt(self.sim.loop.now - start, READ, bucket, hi - lo, attempts)

    def list_objects(self, ctx: HostContext, bucket: str, prefix: str = "") -> Generator:
        """List keys with `prefix`, lexicographically sorted. Billed as a write."""
        b = self.bucket(bucket)
        start = self.sim.loop.now
        yield from self._admit(b.read_limiter)
        self.sim.ledger.charge_request(LIST, bucket)
        yield Sleep(ctx.first_byte_latency_us)
        keys = sorted(k for k in b.objects if k.startswith(prefix))
        return keys, Receipt(self.sim.loop.now - start, LIST, bucket)

    def wait_for_object(self, bucket: str, key: str) -> Generator:
        """Suspend until `key` exists.  Free: models a well-tuned existence poll."""
        b = self.bucket(bucket)
        if key in b.objects:
            return
        yield b.waiter(key)

    def get_object_when_ready(
        self,
        ctx: HostContext,
        bucket: str,
        key: str,
        byte_range: tuple[int, int | None] | None = None,
        poll: bool = False,
    ) -> Generator:
        """Read an object that a slower peer may not have written yet.

        With ``poll=True`` every failed probe is a billed NotFound GET with
        backoff, up to the configured budget.  The default waits on the
        simulation's existence notification and issues exactly one GET,
        keeping request counts equal to the analytic cost models.
        """
        if not poll:
            yield from self.wait_for_object(bucket, key)
            result = yield from self.get_object(ctx, bucket, key, byte_range)
            return result
        cfg = self.sim.cfg
        for attempt in range(cfg.notfound_poll_budget):
            try:
                result = yield from self.get_object(ctx, bucket, key, byte_range)
                return result
            except errors.NotFound:
                yield Sleep(cfg.notfound_poll_backoff_ms * US_PER_MS)
        raise errors.NotFound(
            f"{bucket}/{key} still missing after {cfg.notfound_poll_budget} polls"
        )


class MessageQueue:
    """FIFO queue with virtual poll latency (result-queue style)."""

    def __init__(self, sim: "CloudSim", name: str):
        self.sim = sim
        self.name = name
        self._messages: deque = deque()
        self._waiters: deque[Future] = deque()

    def send(self, ctx: HostContext, message) -> Generator:
        yield Sleep(self.sim.cfg.queue_poll_latency_ms * US_PER_MS)
        if self._waiters:
            self._waiters.popleft().set_result(message)
        else:
            self._messages.append(message)

    def poll(self, ctx: HostContext, timeout_us: int | None = None) -> Generator:
        latency = self.sim.cfg.queue_poll_latency_ms * US_PER_MS
        if self._messages:
            yield Sleep(latency)
            return self._messages.popleft()
        fut = Future()
        self._waiters.append(fut)
        if timeout_us is not None:
            deadline = self.sim.loop.now + timeout_us

            def expire():
                if not fut.done:
                    try:
                        self._waiters.remove(fut)
                    except ValueError:
                        pass
                    fut.set_error(errors.Timeout(f"queue {self.name}: no message within timeout"))

            self.sim.loop.call_at(deadline, expire)
        message = yield fut
        yield Sleep(latency)
        return message


@dataclass
class InvocationHandle:
    initiated_at_us: int
    worker: Task
    started: Future

    @property
    def started_at_us(self) -> int:
        return self.started.result()


class FaaSService:
    """Simulated FaaS: paced invocations, concurrency limit, cold starts."""

    def __init__(self, sim: "CloudSim"):
        self.sim = sim
        self.running = 0
        self._pending: deque[Callable[[], None]] = deque()
        self._warm: set[str] = set()
        self.peak_concurrency = 0

    def invoke(
        self,
        ctx: HostContext,
        spec: FunctionSpec,
        payload: bytes,
        handler: Callable[[HostContext, bytes], Generator],
        function_name: str = "worker",
        worker_name: str = "",
    ) -> Generator:
        """Issue one invocation from `ctx`; returns an InvocationHandle.

        The issuing task is paced at its context's aggregate invocation rate;
        the per-call network latency is pipelined and does not block it.
        """
        cfg = self.sim.cfg
        if len(payload) > cfg.max_payload_bytes:
            raise errors.PayloadTooLarge(
                f"payload of {len(payload)} bytes exceeds {cfg.max_payload_bytes}"
            )
        if cfg.reject_over_concurrency and self.running >= cfg.concurrency_limit:
            raise errors.ConcurrencyLimitExceeded(
                f"{self.running} concurrent executions at limit {cfg.concurrency_limit}"
            )
        now = self.sim.loop.now
        slot = max(now, ctx._next_invoke_slot)
        ctx._next_invoke_slot = slot + math.ceil(Fraction(US_PER_S) / ctx.invoke_rate_per_s)
        if slot > now:
            yield Sleep(slot - now)
        initiated_at = self.sim.loop.now

        cold = function_name not in self._warm
        self._warm.add(function_name)
        perf = spec.cold_start_penalty_factor if cold else Fraction(1)
        worker_ctx = HostContext(
            self.sim,
            worker_name or f"{function_name}-{initiated_at}",
            spec=spec,
            invoke_rate_per_s=cfg.worker_invoke_rate_per_s,
            perf_factor=perf,
        )

        started = Future()
        worker = Task(self._run_worker(worker_ctx, spec, payload, handler, started))
        latency_us = round(cfg.invoke_latency_ms * US_PER_MS)
        self.sim.loop.call_at(initiated_at + latency_us, lambda: self._admit(worker))
        return InvocationHandle(initiated_at, worker, started)

    def _admit(self, worker: Task) -> None:
        if self.running < self.sim.cfg.concurrency_limit:
            self._start(worker)
        else:
            self._pending.append(lambda: self._start(worker))

    def _start(self, worker: Task) -> None:
        self.running += 1
        self.peak_concurrency = max(self.peak_concurrency, self.running)
        self.sim.loop._step(worker, None, None)

    def _run_worker(self, ctx, spec, payload, handler, started) -> Generator:
        start_us = None
        try:
            yield Sleep(0)  # first resume happens via _start
            start_us = self.sim.loop.now
            started.set_result(start_us)
            result = yield from handler(ctx, payload)
            return result
        finally:
            if start_us is not None:
                self.running -= 1
                self.sim.ledger.charge_worker(spec.memory_mib, self.sim.loop.now - start_us)
                if self._pending:
                    self._pending.popleft()()


class CloudSim:
    """Bundle of loop, config, billing and services for one simulation run."""

    def __init__(self, cfg: SimConfig | None = None):
        self.cfg = cfg or SimConfig()
        self.loop = SimLoop()
        self.prices = PriceSheet.from_config(self.cfg)
        self.ledger = BillingLedger(self.prices)
        self.store = ObjectStore(self)
        self.faas = FaaSService(self)
        self._queues: dict[str, MessageQueue] = {}

    def queue(self, name: str) -> MessageQueue:
        if name not in self._queues:
            self._queues[name] = MessageQueue(self, name)
        return self._queues[name]

    def driver(self, name: str = "driver") -> HostContext:
        return HostContext(self, name, invoke_rate_per_s=self.cfg.driver_invoke_rate_per_s)
