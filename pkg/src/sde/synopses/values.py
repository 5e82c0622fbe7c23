"""Structured estimate values returned by the synopses.

Plain numbers, booleans and lists are returned as themselves; the kinds whose
answers carry more shape use these small immutable types. The protocol layer
knows how to encode each of them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np


@dataclass(frozen=True)
class DFTEstimate:
    """Normalized coefficients ``X'_1 .. X'_c`` of one stream and its grid cell."""

    stream: Any
    coefficients: tuple[complex, ...]
    bucket: tuple[int, ...]


@dataclass(frozen=True)
class RHPEstimate:
    """Random-hyperplane signature of one stream (bit ``i`` at index ``i``) and its bucket."""

    stream: Any
    signature: tuple[int, ...]
    bucket: int

    def hex(self) -> str:
        return np.packbits(np.array(self.signature, dtype=np.uint8)).tobytes().hex()


@dataclass(frozen=True)
class WeightedPoints:
    """A weighted point set: ``points`` is ``(m, d)``, ``weights`` is ``(m,)``."""

    points: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WeightedPoints):
            return NotImplemented
        return (self.points.shape == other.points.shape
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.weights, other.weights))

    __hash__ = None  # type: ignore[assignment]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class ItemCount:
    item: Any
    count: int
