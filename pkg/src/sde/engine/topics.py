"""In-process publish/subscribe channels carrying NDJSON lines.

An engine owns exactly four topics, fixed at start-up: ``data``, ``request``,
``output`` and ``union``. Each subscriber gets its own queue; a bounded queue
makes ``publish`` block once that subscriber falls behind, which is how
backpressure reaches the producer. Socket and file adapters in
:mod:`sde.engine.server` bridge topics to the outside world.
"""

from __future__ import annotations

import queue
import threading
from typing import Iterator

TOPIC_NAMES = ("data", "request", "output", "union")

_CLOSED = object()


class Subscription:
    def __init__(self, topic: "Topic", maxsize: int) -> None:
        self.topic = topic
        self._q: queue.Queue = queue.Queue(maxsize)
        self.closed = False

    def put(self, line: str, timeout: float | None = None) -> None:
        self._q.put(line, timeout=timeout)

    def get(self, timeout: float | None = None) -> str | None:
        """Next line, or ``None`` on timeout or once the subscription is closed."""
        try:
            item = self._q.get(timeout=timeout)
        except queue.Empty:
            return None
        if item is _CLOSED:
            self.closed = True
            return None
        return item

    def drain(self) -> list[str]:
        out = []
        while True:
            try:
                item = self._q.get_nowait()
            except queue.Empty:
                return out
            if item is _CLOSED:
                self.closed = True
                return out
            out.append(item)

    def __iter__(self) -> Iterator[str]:
        while not self.closed:
            line = self.get()
            if line is None:
                if self.closed:
                    return
                continue
            yield line

    def close(self) -> None:
        self.topic.unsubscribe(self)
        try:
            self._q.put_nowait(_CLOSED)
        except queue.Full:
            pass


class Topic:
    """A named channel; ``publish`` fans a line out to every current subscriber."""

    def __init__(self, name: str) -> None:
        self.name = name
        self._subs: tuple[Subscription, ...] = ()
        self._lock = threading.Lock()
        self.published = 0
        self.bytes = 0

    @property
    def subscribers(self) -> int:
        return len(self._subs)

    def subscribe(self, maxsize: int = 0) -> Subscription:
        sub = Subscription(self, maxsize)
        with self._lock:
            self._subs = self._subs + (sub,)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            self._subs = tuple(s for s in self._subs if s is not sub)

    def publish(self, line: str) -> None:
        with self._lock:
            self.published += 1
            self.bytes += len(line.encode("utf-8")) + 1
            subs = self._subs
        for sub in subs:
            sub.put(line)

    def close(self) -> None:
        for sub in self._subs:
            sub.close()


def make_topics() -> dict[str, Topic]:
    return {name: Topic(name) for name in TOPIC_NAMES}
