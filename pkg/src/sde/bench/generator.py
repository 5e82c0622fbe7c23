"""Seeded synthetic market feed: Level 1 trades and Level 2 bids per stock.

Record layout (``values``): ``[symbol, level, price, volume]`` where level is
``"L1"`` for a trade and ``"L2"`` for a bid. The stream id is the symbol.

Prices follow latent factor random walks (one per ``cluster_size`` stocks) plus idiosyncratic noise, so
stocks loading on the same factor are strongly correlated and the
correlation workflow has real pairs to find. Stocks also belong to one of
``n_groups`` regimes with distinct volume and bid profiles, which gives the
clustering workflow real structure.

Per-stream trade counts are fixed by the rate profile (no Poisson noise), so
``skew=0`` yields exactly uniform counts and two runs with the same seed are
identical byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..core import ParameterError, StreamRecord


@dataclass(frozen=True)
class GeneratorConfig:
    n_streams: int = 50
    duration_ms: int = 300_000
    tick_ms: int = 5_000
    level1_rate: float = 1.0        # mean trades per stream per tick
    bids_per_trade: float = 2.0     # mean Level 2 bids per trade
    skew: float = 0.0               # Zipf-like exponent of per-stream trade rates
    cluster_size: int = 10          # stocks per latent price factor
    noise: float = 0.15
    n_groups: int = 4
    seed: int = 0
    dataset: str = "stocks"
    start_ms: int = 0
    clone: int = 1                  # ingestion-rate multiplier: every record is emitted this many times

    def __post_init__(self) -> None:
        if self.n_streams < 1:
            raise ParameterError("n_streams", "must be >= 1")
        if self.duration_ms <= 0 or self.tick_ms <= 0:
            raise ParameterError("duration_ms", "duration and tick must be positive")
        if self.level1_rate <= 0:
            raise ParameterError("level1_rate", "must be positive")
        if self.bids_per_trade < 0 or self.skew < 0 or self.noise < 0:
            raise ParameterError("skew", "bids_per_trade, skew and noise must be non-negative")
        if self.clone < 1:
            raise ParameterError("clone", "must be >= 1")
        if self.cluster_size < 1 or self.n_groups < 1:
            raise ParameterError("cluster_size", "cluster_size and n_groups must be >= 1")

    @property
    def n_factors(self) -> int:
        return -(-self.n_streams // self.cluster_size)

    @property
    def n_ticks(self) -> int:
        return self.duration_ms // self.tick_ms


def symbols(n: int) -> list[str]:
    width = len(str(max(n - 1, 0)))
    return [f"S{i:0{width}d}" for i in range(n)]


def trade_counts(config: GeneratorConfig) -> np.ndarray:
    """Trades per stream over the whole run; mean ``level1_rate`` per tick."""
    w = np.arange(1, config.n_streams + 1, dtype=np.float64) ** -config.skew
    w *= config.n_streams / w.sum()
    return np.maximum(1, np.rint(w * config.level1_rate * config.n_ticks)).astype(np.int64)


def stream_groups(config: GeneratorConfig) -> np.ndarray:
    return np.random.default_rng([config.seed, 3]).integers(0, config.n_groups, config.n_streams)


def price_paths(config: GeneratorConfig) -> np.ndarray:
    """Price of every stream at every tick, shape (n_streams, n_ticks)."""
    rng = np.random.default_rng([config.seed, 1])
    t = config.n_ticks
    factors = np.cumsum(rng.standard_normal((config.n_factors, t)), axis=1)
    assign = rng.integers(0, config.n_factors, config.n_streams)
    loading = rng.uniform(0.6, 1.4, config.n_streams) * rng.choice([-1.0, 1.0], config.n_streams)
    idio = np.cumsum(rng.standard_normal((config.n_streams, t)), axis=1) * config.noise
    base = rng.uniform(20.0, 200.0, config.n_streams)
    return np.round(base[:, None] + loading[:, None] * factors[assign] + idio, 4)


def generate(config: GeneratorConfig) -> Iterator[StreamRecord]:
    """Interleaved L1/L2 records in event-time order, each repeated ``clone`` times."""
    if config.clone == 1:
        yield from _generate(config)
        return
    for rec in _generate(config):
        for _ in range(config.clone):
            yield rec


def _generate(config: GeneratorConfig) -> Iterator[StreamRecord]:
    rng = np.random.default_rng([config.seed, 2])
    syms = symbols(config.n_streams)
    prices = price_paths(config)
    groups = stream_groups(config)
    counts = trade_counts(config)
    vol_scale = 100.0 * (1 + groups)
    bid_mean = config.bids_per_trade * (0.5 + groups / max(1, config.n_groups - 1))
    span = config.n_ticks * config.tick_ms
    events: list[tuple[int, int, int]] = []   # (time, stream, n_bids)
    for s in range(config.n_streams):
        k = int(counts[s])
        # Evenly spaced trades with jitter inside each slot.
        slot = span / k
        times = (np.arange(k) * slot + rng.uniform(0, slot, k)).astype(np.int64)
        bids = rng.poisson(bid_mean[s], k)
        events.extend(zip(times.tolist(), [s] * k, bids.tolist()))
    events.sort()
    ds = config.dataset
    for t, s, n_bids in events:
        tick = min(t // config.tick_ms, config.n_ticks - 1)
        price = float(prices[s, tick])
        ts = config.start_ms + t
        for _ in range(n_bids):
            bid = round(price - abs(rng.normal(0, 0.05)) - 0.01, 4)
            yield StreamRecord(ds, syms[s], ts, (syms[s], "L2", bid, int(rng.integers(1, 50))))
        volume = int(rng.gamma(2.0, vol_scale[s]))
        yield StreamRecord(ds, syms[s], ts, (syms[s], "L1", price, volume))


def generate_lines(config: GeneratorConfig) -> Iterator[str]:
    for r in generate(config):
        yield r.to_line()
