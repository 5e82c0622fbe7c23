"""Random hyperplane projection (sign LSH) over sliding-window time series.

``b`` Gaussian hyperplanes in R^n are drawn from the seed. The signature of
a window is the sign pattern of its projections after mean removal, so two
windows at angle ``theta`` disagree on each bit with probability
``theta / pi``. Centring makes the cosine of the angle the Pearson
correlation; the estimate is ``cos(pi * hamming / b)``.

Buckets take the first ``ceil(log2 B)`` signature bits as an integer,
reduced modulo ``B``. Signatures are computed at query time from the
window; a projection costs O(b n), cheaper than maintaining them per slide.
"""

from __future__ import annotations

import math

import numpy as np

from ..core import Degenerate
from .base import Synopsis, _tuplify, require
from .series import FeatureQueries, Ring, SeriesSynopsis, window_param
from .values import RHPEstimate


def hyperplanes(seed: int, bits: int, n: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((bits, n))


def rhp_signature(window, planes: np.ndarray) -> np.ndarray | Degenerate:
    """Bit vector (uint8) of ``sign(plane . (window - mean))``; flat windows are degenerate."""
    x = np.asarray(window, dtype=np.float64)
    centred = x - x.mean()
    if float(np.linalg.norm(centred)) <= 1e-12 * max(1.0, float(np.abs(x).max())) * math.sqrt(len(x)):
        return Degenerate("zero variance")
    return (planes @ centred >= 0.0).astype(np.uint8)


def rhp_similarity(sig_a, sig_b) -> float:
    a = np.asarray(sig_a, dtype=np.uint8)
    b = np.asarray(sig_b, dtype=np.uint8)
    hamming = int(np.count_nonzero(a != b))
    return math.cos(math.pi * hamming / len(a))


def rhp_bucket(sig, buckets: int) -> int:
    if buckets <= 1:
        return 0
    width = min(math.ceil(math.log2(buckets)), len(sig))
    value = 0
    for bit in sig[:width]:
        value = (value << 1) | int(bit)
    return value % buckets


class _RHPParams:
    params: dict

    @classmethod
    def validate_params(cls, params):
        params["bits"] = require(params, "bits", int, low=1, low_open=False)
        params["threshold"] = require(params, "threshold", low=-1, high=1, high_open=False)
        params["buckets"] = require(params, "buckets", int, low=1, low_open=False, default=1)
        params["window"] = window_param(params)
        return params

    def similarity(self, fa: RHPEstimate, fb: RHPEstimate) -> float:
        return rhp_similarity(fa.signature, fb.signature)

    def embedding(self, f: RHPEstimate) -> np.ndarray:
        return np.asarray(f.signature, dtype=np.float64)

    def similarity_from_d2(self, d2: np.ndarray) -> np.ndarray:
        # On 0/1 vectors the squared distance is the Hamming distance.
        return np.cos(np.pi * d2 / self.params["bits"])

    def cell(self, f: RHPEstimate) -> tuple[int, ...]:
        # One-dimensional cells; only identical buckets count as neighbours.
        return (2 * f.bucket,)

    def _estimate_from(self, stream, sig) -> RHPEstimate:
        return RHPEstimate(stream, tuple(int(v) for v in sig), rhp_bucket(sig, self.params["buckets"]))


class _Series:
    __slots__ = ("ring",)

    def __init__(self, ring: Ring) -> None:
        self.ring = ring


class RHP(_RHPParams, SeriesSynopsis):
    kind = "RHP"

    def __init__(self, params, seeds) -> None:
        super().__init__(params, seeds)
        self.planes = hyperplanes(self.seeds[0], self.params["bits"], self.n)

    def new_series(self) -> _Series:
        return _Series(Ring(self.n))

    def copy_series(self, s: _Series) -> _Series:
        return _Series(s.ring.copy())

    def push(self, s: _Series, x: float) -> None:
        s.ring.push(x)

    def signature(self, stream) -> np.ndarray | Degenerate:
        s = self.series[stream]
        if not s.ring.full:
            return Degenerate("warming")
        return rhp_signature(s.ring.ordered(), self.planes)

    def feature(self, stream):
        sig = self.signature(stream)
        if isinstance(sig, Degenerate):
            return sig
        return self._estimate_from(stream, sig)

    def digest(self) -> "RHPDigest":
        d = RHPDigest(self.params, self.seeds)
        for k in self.series:
            d.features[k] = self.feature(k)
        d.items_seen = self.items_seen
        return d

    def _state(self):
        streams = list(self.series.values())
        bufs = np.array([s.ring.buf for s in streams], dtype=np.float64).reshape(len(streams), self.n)
        ints = np.array([[s.ring.head, s.ring.count] for s in streams], dtype=np.int64).reshape(-1, 2)
        return {"streams": self._stream_meta()}, [bufs, ints]

    def _load_state(self, meta, arrays) -> None:
        bufs, ints = arrays
        self.series = {}
        for i, key in enumerate(self._stream_keys(meta["streams"])):
            ring = Ring(self.n)
            ring.buf = bufs[i].copy()
            ring.head, ring.count = int(ints[i, 0]), int(ints[i, 1])
            self.series[key] = _Series(ring)


class RHPDigest(_RHPParams, FeatureQueries, Synopsis):
    """Per-stream signatures of an RHP synopsis; merges by union."""

    kind = "RHPDigest"
    per_stream = True

    def __init__(self, params, seeds) -> None:
        super().__init__(params, seeds)
        self.features: dict = {}

    def add(self, *args) -> None:
        raise TypeError("digests are read-only summaries")

    def stream_ids(self):
        return list(self.features)

    def feature(self, stream):
        return self.features[stream]

    def _merge_into(self, out, other) -> None:
        out.features.update(other.features)

    def _state(self):
        keys = list(self.features)
        bits = np.zeros((len(keys), self.params["bits"]), dtype=np.uint8)
        reasons = []
        for i, k in enumerate(keys):
            f = self.features[k]
            if isinstance(f, Degenerate):
                reasons.append(f.reason)
            else:
                reasons.append(None)
                bits[i] = f.signature
        streams = [list(k) if isinstance(k, tuple) else k for k in keys]
        return {"streams": streams, "degenerate": reasons}, [np.packbits(bits, axis=1)]

    def _load_state(self, meta, arrays) -> None:
        bits = np.unpackbits(arrays[0], axis=1)[:, : self.params["bits"]]
        self.features = {}
        for i, (k, reason) in enumerate(zip(meta["streams"], meta["degenerate"])):
            key = _tuplify(k)
            self.features[key] = Degenerate(reason) if reason is not None else self._estimate_from(key, bits[i])
