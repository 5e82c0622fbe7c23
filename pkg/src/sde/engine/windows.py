"""Per-synopsis sliding windows for the counting kinds.

Count-Min, HyperLogLog and the other counting sketches cannot delete items,
so a sliding window is kept as panes: one sub-sketch per ``slide``-wide
slice of the window's axis (event time for time windows, the synopsis-wide
arrival sequence number for count windows). A tuple lands in exactly one
pane; a pane that has slid out of every window a future query could ask for
is evicted whole. The window ending at position ``ref`` is the merge of the
``length / slide`` panes up to and including the one holding ``ref``.
"""

from __future__ import annotations

from typing import Sequence

from ..core import ParameterError, WindowMode, WindowSpec
from ..synopses import Synopsis


def check_paned_window(window: WindowSpec) -> None:
    if window.length % window.slide:
        raise ParameterError("window.slide", "must divide the window length for paned windows")


class PanedState:
    """A synopsis over a sliding window, held as mergeable panes."""

    def __init__(self, template: Synopsis, window: WindowSpec) -> None:
        check_paned_window(window)
        self.template = template
        self.slide = window.slide
        self.panes_per_window = window.length // window.slide
        self.panes: dict[int, Synopsis] = {}
        self.newest = -1
        self.evicted = 0
        self.too_old = 0

    # The paned state presents the same record plumbing as a plain synopsis.
    def extract(self, record, key_field, value_fields) -> tuple:
        return self.template.extract(record, key_field, value_fields)

    def pane_of(self, position: int) -> int:
        return position // self.slide

    def add_args(self, args_by_position: Sequence[tuple[int, tuple]]) -> int:
        """Add pre-extracted argument tuples tagged with their window position.

        Returns how many were dropped because their pane had already been evicted.
        """
        groups: dict[int, list[tuple]] = {}
        low = self.newest - self.panes_per_window + 1
        dropped = 0
        for pos, args in args_by_position:
            p = pos // self.slide
            if p < low:
                dropped += 1
                continue
            groups.setdefault(p, []).append(args)
        for p, arg_list in groups.items():
            pane = self.panes.get(p)
            if pane is None:
                pane = self.panes[p] = self.template.empty_like()
            pane.add_many(arg_list)
            if p > self.newest:
                self.newest = p
        self._evict()
        self.too_old += dropped
        return dropped

    def _evict(self) -> None:
        low = self.newest - self.panes_per_window + 1
        for p in [p for p in self.panes if p < low]:
            del self.panes[p]
            self.evicted += 1

    def snapshot(self, ref: int | None = None) -> Synopsis:
        """Merged state of the window ending at position ``ref`` (default: newest pane)."""
        top = self.newest if ref is None else ref // self.slide
        low = top - self.panes_per_window + 1
        out = self.template.empty_like()
        for p in sorted(self.panes):
            if low <= p <= top:
                out = out.merge(self.panes[p])
        return out

    @property
    def items_seen(self) -> int:
        return sum(p.items_seen for p in self.panes.values())


def window_position(mode: WindowMode, event_time: int, seq: int) -> int:
    return event_time if mode is WindowMode.TIME_SLIDING else seq

