"""A synopses data engine: many mergeable stream summaries behind one service."""

from __future__ import annotations

__version__ = "0.1.0"
