"""Workflow stages shared by the benchmark strategies.

Split routes records by level, Filter drops malformed bids, Count tallies bids
per stock and tick, and Join attaches the tick's bid count and volume to the
stock's last trade price. Each closed tick yields one joined tuple per stock
that has traded so far (the price is carried forward across silent ticks).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

from ..core import StreamRecord


@dataclass(frozen=True, slots=True)
class Joined:
    symbol: str
    tick: int
    price: float
    volume: int
    bids: int


class JoinStage:
    def __init__(self, tick_ms: int, start_ms: int = 0) -> None:
        self.tick_ms = tick_ms
        self.start_ms = start_ms
        self.tick = 0
        self.last_price: dict[str, float] = {}
        self.volume: dict[str, int] = {}
        self.bids: dict[str, int] = {}
        self.filtered = 0

    def _close(self) -> list[Joined]:
        out = [Joined(s, self.tick, p, self.volume.get(s, 0), self.bids.get(s, 0))
               for s, p in self.last_price.items()]
        self.volume.clear()
        self.bids.clear()
        self.tick += 1
        return out

    def push(self, rec: StreamRecord) -> list[Joined]:
        """Feed one record; returns the joined tuples of every tick it closes."""
        out: list[Joined] = []
        tick = (rec.event_time - self.start_ms) // self.tick_ms
        while tick > self.tick:
            out.extend(self._close())
        values = rec.values
        if len(values) < 4:
            self.filtered += 1
            return out
        sym, level, price = values[0], values[1], values[2]
        if level == "L2":
            if isinstance(price, (int, float)) and price > 0:
                self.bids[sym] = self.bids.get(sym, 0) + 1
            else:
                self.filtered += 1
        elif level == "L1":
            self.last_price[sym] = float(price)
            self.volume[sym] = self.volume.get(sym, 0) + int(values[3])
        else:
            self.filtered += 1
        return out

    def finish(self) -> list[Joined]:
        return self._close()


def joined_ticks(records: Iterable[StreamRecord], tick_ms: int, start_ms: int = 0) -> Iterator[list[Joined]]:
    """Group the joined output by tick: one list per closed tick."""
    stage = JoinStage(tick_ms, start_ms)
    pending: list[Joined] = []
    for rec in records:
        for j in stage.push(rec):
            if pending and j.tick != pending[0].tick:
                yield pending
                pending = []
            pending.append(j)
    for j in stage.finish():
        if pending and j.tick != pending[0].tick:
            yield pending
            pending = []
        pending.append(j)
    if pending:
        yield pending
