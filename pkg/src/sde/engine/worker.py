"""Worker threads: single writers of the shard states they own.

Each worker has one bounded mailbox per shard for data (the blue path) and
one unbounded control lane (the red path). Control messages always win: they
are taken before any mailbox item and are also serviced between the chunks
of a long data batch, so a slow synopsis cannot starve queries on the other
shards sharing its worker. A query drains only its own shard's mailbox
before it runs, which makes it observe every record that was enqueued
before it without waiting for unrelated backlog.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from concurrent.futures import Future
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable

# Target wall time of one data chunk between control checks.
_CHUNK_BUDGET_S = 0.004
_MAX_CHUNK = 4096


class Gone:
    """Returned to a query whose shard was dropped (its synopsis was stopped)."""


GONE = Gone()


@dataclass
class Ctrl:
    kind: str                      # "call" | "query" | "barrier"
    key: Hashable | None
    fn: Callable[[Any], Any] | None
    future: Future = field(default_factory=Future)


def _size(item: Any) -> int:
    return len(item) if isinstance(item, list) else 1


class Worker(threading.Thread):
    def __init__(self, index: int, capacity: int) -> None:
        super().__init__(name=f"sde-worker-{index}", daemon=True)
        self.index = index
        self.capacity = capacity
        self.cond = threading.Condition()
        self.boxes: dict[Hashable, deque] = {}
        self.pending: dict[Hashable, int] = {}
        self.ready: deque = deque()
        self.ctrl: deque[Ctrl] = deque()
        self.shards: dict[Hashable, Any] = {}
        self.running = True
        self.discarded = 0
        self.busy_s = 0.0
        self._chunk = 256

    # -- producer side ------------------------------------------------------

    def enqueue(self, key: Hashable, item: Any) -> bool:
        """Queue ``item`` (a list of records or a marker); blocks while the mailbox is full.

        Returns False when the shard does not exist (stopped synopsis).
        """
        n = _size(item)
        with self.cond:
            while self.running and key in self.shards and 0 < self.pending.get(key, 0) and \
                    self.pending[key] + n > self.capacity:
                self.cond.wait()
            if not self.running or key not in self.shards:
                self.discarded += n
                return False
            box = self.boxes.get(key)
            if box is None:
                box = self.boxes[key] = deque()
            if not box:
                self.ready.append(key)
            box.append(item)
            self.pending[key] = self.pending.get(key, 0) + n
            self.cond.notify_all()
        return True

    def post(self, msg: Ctrl) -> Future:
        with self.cond:
            self.ctrl.append(msg)
            self.cond.notify_all()
        return msg.future

    def call(self, fn: Callable[["Worker"], Any]) -> Future:
        return self.post(Ctrl("call", None, fn))

    def query(self, key: Hashable, fn: Callable[[Any], Any]) -> Future:
        return self.post(Ctrl("query", key, fn))

    def barrier(self) -> Future:
        return self.post(Ctrl("barrier", None, None))

    def queued(self) -> int:
        with self.cond:
            return sum(self.pending.values())

    def shutdown(self) -> None:
        with self.cond:
            self.running = False
            self.cond.notify_all()

    # -- worker side --------------------------------------------------------

    def run(self) -> None:
        while True:
            msg = None
            with self.cond:
                while self.running and not self.ctrl and not self.ready:
                    self.cond.wait()
                if not self.running:
                    for m in self.ctrl:
                        m.future.set_exception(RuntimeError("engine stopped"))
                    self.ctrl.clear()
                    return
                if self.ctrl:
                    msg = self.ctrl.popleft()
                else:
                    key = self.ready.popleft()
                    item = self._pop(key)
            if msg is not None:
                self._handle(msg)
            else:
                self._apply(key, item)

    def _pop(self, key: Hashable) -> Any:
        # Caller holds the condition.
        box = self.boxes[key]
        item = box.popleft()
        self.pending[key] -= _size(item)
        if box:
            self.ready.append(key)
        self.cond.notify_all()
        return item

    def _take_all(self, key: Hashable) -> list:
        with self.cond:
            box = self.boxes.get(key)
            if not box:
                return []
            items = list(box)
            box.clear()
            self.pending[key] = 0
            try:
                self.ready.remove(key)
            except ValueError:
                pass
            self.cond.notify_all()
        return items

    def _drain(self, key: Hashable) -> None:
        for item in self._take_all(key):
            self._apply(key, item, interruptible=False)

    def _drain_all(self) -> None:
        while True:
            with self.cond:
                if not self.ready:
                    return
                key = self.ready.popleft()
                item = self._pop(key)
            self._apply(key, item, interruptible=False)

    def _handle(self, msg: Ctrl) -> None:
        try:
            if msg.kind == "call":
                result = msg.fn(self)
            elif msg.kind == "query":
                self._drain(msg.key)
                shard = self.shards.get(msg.key)
                result = GONE if shard is None else msg.fn(shard)
            else:
                self._drain_all()
                result = None
        except BaseException as exc:  # delivered to the waiting requester
            msg.future.set_exception(exc)
        else:
            msg.future.set_result(result)

    def _apply(self, key: Hashable, item: Any, interruptible: bool = True) -> None:
        shard = self.shards.get(key)
        if shard is None:
            self.discarded += _size(item)
            return
        if not isinstance(item, list):
            shard.apply_marker(item)
            return
        t_start = time.perf_counter()
        i, n = 0, len(item)
        while i < n:
            chunk = item[i:i + self._chunk]
            t0 = time.perf_counter()
            shard.apply(chunk)
            took = time.perf_counter() - t0
            i += len(chunk)
            if took > 0:
                self._chunk = max(1, min(_MAX_CHUNK, int(self._chunk * _CHUNK_BUDGET_S / took) or 1))
            if interruptible and i < n and self.ctrl:
                self._service_between_chunks(key)
        self.busy_s += time.perf_counter() - t_start

    def _service_between_chunks(self, key: Hashable) -> None:
        with self.cond:
            msgs = list(self.ctrl)
            self.ctrl.clear()
        deferred = []
        for m in msgs:
            # Anything touching the shard mid-batch, or needing all data applied, waits.
            if m.kind == "barrier" or m.key == key or m.kind == "call":
                deferred.append(m)
            else:
                self._handle(m)
        if deferred:
            with self.cond:
                self.ctrl.extendleft(reversed(deferred))
