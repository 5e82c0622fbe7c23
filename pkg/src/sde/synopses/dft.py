"""DFT synopsis: correlation-aware hashing of sliding-window time series.

Each stream's window ``x_0 .. x_{n-1}`` (oldest first) is normalized to zero
mean and unit L2 norm, ``x' = (x - mean) / ||x - mean||``, and transformed
with the unitary DFT

    X'_F = n^{-1/2} * sum_k x'_k * exp(-2 pi i k F / n).

With this scaling the transform preserves distances, so for two normalized
windows ``Corr(x, y) = 1 - d(X', Y')^2 / 2``; a correlation of at least
``T`` forces ``d(X', Y') <= eps`` with ``eps = sqrt(1 - T)``. Every
coefficient with ``1 <= F < n/2`` has modulus at most ``sqrt(2)/2``, so the
first few coefficients live in a bounded cube that is cut into cells of
width ``eps`` per axis. Streams correlated above ``T`` land in the same or
adjacent cells; the rest never need comparing.

The synopsis keeps, per stream, the raw window and the unnormalized sums
``S_F = sum_k x_k w^{kF}`` for ``F = 1..c``. Mean removal only touches
``F = 0``, so ``X'_F = S_F / (sqrt(n) * ||x - mean||)``. A slide that drops
``x_0`` and appends ``v`` updates ``S_F <- exp(2 pi i F / n) (S_F - x_0 + v)``
in O(c); the sums are recomputed from the window every ``n`` slides to stop
rounding drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import Degenerate, ParameterError
from .base import Synopsis, _tuplify, require
from .series import FeatureQueries, Ring, SeriesSynopsis, window_param
from .values import DFTEstimate

HALF_SQRT2 = math.sqrt(2.0) / 2.0


def dft_epsilon(threshold: float) -> float:
    return math.sqrt(1.0 - threshold)


def dft_coefficients(window, c: int) -> np.ndarray | Degenerate:
    """First ``c`` coefficients ``X'_0 .. X'_{c-1}`` of the normalized window.

    ``X'_0`` is always zero after mean removal. A flat window has no
    normalized form and yields :class:`Degenerate`.
    """
    x = np.asarray(window, dtype=np.float64)
    n = len(x)
    if n < 2:
        raise ParameterError("window", "needs at least 2 values")
    if not 1 <= c <= n:
        raise ParameterError("coefficients", f"must be in [1, {n}], got {c}")
    centred = x - x.mean()
    norm = float(np.linalg.norm(centred))
    if norm <= 1e-12 * max(1.0, float(np.abs(x).max())) * math.sqrt(n):
        return Degenerate("zero variance")
    return np.fft.fft(centred / norm)[:c] / math.sqrt(n)


def cells_per_axis(eps: float) -> int:
    return 2 * math.ceil(HALF_SQRT2 / eps)


def dft_bucketize(coeffs, eps: float, grid_coeffs: int) -> tuple[int, ...]:
    """Grid cell of the first ``grid_coeffs`` coefficients, two axes (re, im) each.

    Axis values in ``[-sqrt(2)/2, sqrt(2)/2]`` are cut into cells of width
    ``eps``; cell ``0`` starts at ``-ceil(sqrt(2)/(2 eps)) * eps``.
    """
    if not 0.0 < eps < math.sqrt(2.0):
        raise ParameterError("epsilon", f"must be in (0, sqrt 2), got {eps}")
    coeffs = list(coeffs)
    if grid_coeffs > len(coeffs):
        raise ParameterError("grid_coefficients", f"only {len(coeffs)} coefficients available")
    half = math.ceil(HALF_SQRT2 / eps)
    out = []
    for z in coeffs[:grid_coeffs]:
        for v in (z.real, z.imag):
            assert abs(v) <= HALF_SQRT2 + 1e-9, f"coefficient component {v} outside the bounded cube"
            out.append(min(max(math.floor(v / eps) + half, 0), 2 * half - 1))
    return tuple(out)


def bucketize_rows(coeffs: np.ndarray, eps: float, grid_coeffs: int) -> np.ndarray:
    """Row-wise :func:`dft_bucketize` of an ``(m, c)`` coefficient matrix."""
    half = math.ceil(HALF_SQRT2 / eps)
    z = coeffs[:, :grid_coeffs]
    axes = np.stack([z.real, z.imag], axis=2).reshape(len(coeffs), 2 * grid_coeffs)
    return np.clip(np.floor(axes / eps).astype(np.int64) + half, 0, 2 * half - 1)


def approx_correlation(a, b) -> float:
    """``1 - d^2`` over the kept coefficients ``F = 1..c``.

    Each kept coefficient has a conjugate twin at ``n - F``, so the distance
    over the pair is twice the distance over one of them.
    """
    d2 = float(np.sum(np.abs(np.asarray(a) - np.asarray(b)) ** 2))
    return 1.0 - d2


class _DFTParams:
    """Parameter handling shared by the synopsis and its digest."""

    params: dict

    @classmethod
    def validate_params(cls, params):
        params["threshold"] = require(params, "threshold", low=0, high=1)
        params["coefficients"] = require(params, "coefficients", int, low=1, low_open=False, default=8)
        params["window"] = window_param(params)
        c = params["coefficients"]
        if c > (params["window"] - 1) // 2:
            raise ParameterError("coefficients", f"at most (window - 1) // 2 = {(params['window'] - 1) // 2}")
        params["grid_coefficients"] = require(params, "grid_coefficients", int, low=1, high=c,
                                              low_open=False, high_open=False, default=min(2, c))
        return params

    @property
    def epsilon(self) -> float:
        return dft_epsilon(self.params["threshold"])

    def similarity(self, fa: DFTEstimate, fb: DFTEstimate) -> float:
        return approx_correlation(fa.coefficients, fb.coefficients)

    def embedding(self, f: DFTEstimate) -> np.ndarray:
        z = np.asarray(f.coefficients, dtype=np.complex128)
        return np.concatenate([z.real, z.imag])

    def similarity_from_d2(self, d2: np.ndarray) -> np.ndarray:
        return 1.0 - d2

    def cell(self, f: DFTEstimate) -> tuple[int, ...]:
        return f.bucket


@dataclass
class _Series:
    ring: Ring
    sums: np.ndarray      # S_F for F = 1..c
    ref: float = 0.0      # shift applied to the running moments
    s1: float = 0.0       # sum(x - ref)
    s2: float = 0.0       # sum((x - ref)^2)
    slides: int = 0


class DFT(_DFTParams, SeriesSynopsis):
    kind = "DFT"

    def __init__(self, params, seeds) -> None:
        super().__init__(params, seeds)
        n, c = self.n, self.params["coefficients"]
        f = np.arange(1, c + 1)
        self._twiddle = np.exp(-2j * np.pi * np.outer(np.arange(n), f) / n)   # (n, c)
        self._rotate = np.exp(2j * np.pi * f / n)

    def new_series(self) -> _Series:
        return _Series(Ring(self.n), np.zeros(self.params["coefficients"], dtype=np.complex128))

    def copy_series(self, s: _Series) -> _Series:
        return _Series(s.ring.copy(), s.sums.copy(), s.ref, s.s1, s.s2, s.slides)

    def push(self, s: _Series, x: float) -> None:
        if s.ring.count == 0:
            s.ref = x
        k = s.ring.count
        old = s.ring.push(x)
        if old is None:
            s.sums += x * self._twiddle[k]
        else:
            s.sums = self._rotate * (s.sums - old + x)
            s.s1 -= old - s.ref
            s.s2 -= (old - s.ref) ** 2
            s.slides += 1
        s.s1 += x - s.ref
        s.s2 += (x - s.ref) ** 2
        if s.slides >= self.n:
            self._recompute(s)

    def _recompute(self, s: _Series) -> None:
        w = s.ring.ordered()
        s.sums = w @ self._twiddle
        s.ref = float(w.mean())
        d = w - s.ref
        s.s1 = float(d.sum())
        s.s2 = float(d @ d)
        s.slides = 0

    def feature(self, stream) -> DFTEstimate | Degenerate:
        s = self.series[stream]
        if not s.ring.full:
            return Degenerate("warming")
        centred_sq = s.s2 - s.s1 * s.s1 / self.n
        if centred_sq <= 1e-9 * s.s2:
            return Degenerate("zero variance")
        coeffs = s.sums / (math.sqrt(self.n) * math.sqrt(centred_sq))
        bucket = dft_bucketize(coeffs, self.epsilon, self.params["grid_coefficients"])
        return DFTEstimate(stream, tuple(complex(z) for z in coeffs), bucket)

    def feature_table(self):
        keys = list(self.series)
        c = self.params["coefficients"]
        if not keys:
            return [], np.zeros((0, 2 * c)), np.zeros((0, 2 * self.params["grid_coefficients"]), np.int64)
        streams = [self.series[k] for k in keys]
        full = np.array([s.ring.full for s in streams])
        moments = np.array([(s.s1, s.s2) for s in streams], dtype=np.float64)
        centred_sq = moments[:, 1] - moments[:, 0] ** 2 / self.n
        ok = full & (centred_sq > 1e-9 * moments[:, 1])
        rows = np.flatnonzero(ok)
        sums = np.array([streams[i].sums for i in rows], dtype=np.complex128).reshape(len(rows), c)
        coeffs = sums / (math.sqrt(self.n) * np.sqrt(centred_sq[rows]))[:, None]
        cells = bucketize_rows(coeffs, self.epsilon, self.params["grid_coefficients"])
        return [keys[i] for i in rows], np.concatenate([coeffs.real, coeffs.imag], axis=1), cells

    def digest(self) -> "DFTDigest":
        """Coefficients and cells only, for shipping to another site."""
        d = DFTDigest(self.params, self.seeds)
        for k in self.series:
            d.features[k] = self.feature(k)
        d.items_seen = self.items_seen
        return d

    def _state(self):
        streams = list(self.series.values())
        c = self.params["coefficients"]
        bufs = np.array([s.ring.buf for s in streams], dtype=np.float64).reshape(len(streams), self.n)
        ints = np.array([[s.ring.head, s.ring.count, s.slides] for s in streams], dtype=np.int64).reshape(-1, 3)
        moments = np.array([[s.ref, s.s1, s.s2] for s in streams], dtype=np.float64).reshape(-1, 3)
        sums = np.array([s.sums for s in streams], dtype=np.complex128).reshape(len(streams), c)
        return {"streams": self._stream_meta()}, [bufs, ints, moments, sums]

    def _load_state(self, meta, arrays) -> None:
        bufs, ints, moments, sums = arrays
        self.series = {}
        for i, key in enumerate(self._stream_keys(meta["streams"])):
            ring = Ring(self.n)
            ring.buf = bufs[i].copy()
            ring.head, ring.count = int(ints[i, 0]), int(ints[i, 1])
            self.series[key] = _Series(ring, sums[i].copy(), float(moments[i, 0]),
                                       float(moments[i, 1]), float(moments[i, 2]), int(ints[i, 2]))


class DFTDigest(_DFTParams, FeatureQueries, Synopsis):
    """Per-stream coefficients and cells of a DFT synopsis, without the windows.

    Digests from different sites merge by union and answer the same queries
    as the synopsis they came from.
    """

    kind = "DFTDigest"
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
        c = self.params["coefficients"]
        coeffs = np.zeros((len(keys), c), dtype=np.complex128)
        reasons = []
        for i, k in enumerate(keys):
            f = self.features[k]
            if isinstance(f, Degenerate):
                reasons.append(f.reason)
            else:
                reasons.append(None)
                coeffs[i] = f.coefficients
        streams = [list(k) if isinstance(k, tuple) else k for k in keys]
        return {"streams": streams, "degenerate": reasons}, [coeffs]

    def _load_state(self, meta, arrays) -> None:
        (coeffs,) = arrays
        self.features = {}
        for i, (k, reason) in enumerate(zip(meta["streams"], meta["degenerate"])):
            key = _tuplify(k)
            if reason is not None:
                self.features[key] = Degenerate(reason)
            else:
                z = coeffs[i]
                bucket = dft_bucketize(z, self.epsilon, self.params["grid_coefficients"])
                self.features[key] = DFTEstimate(key, tuple(complex(v) for v in z), bucket)
