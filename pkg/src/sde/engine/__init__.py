"""The service core: workers, topics, windows and the engine itself."""

from __future__ import annotations

from .engine import Engine, Entry, Merger, Route, splitter_route
from .topics import TOPIC_NAMES, Subscription, Topic, make_topics
from .windows import PanedState

__all__ = [
    "Engine",
    "Entry",
    "Merger",
    "Route",
    "splitter_route",
    "TOPIC_NAMES",
    "Subscription",
    "Topic",
    "make_topics",
    "PanedState",
]
