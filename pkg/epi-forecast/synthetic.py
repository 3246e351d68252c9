"""Deterministic synthetic mobility graphs and case panels for desk-scale runs.

All randomness comes from numpy's PCG64 bit generator seeded with
SynthSpec.seed, so fixtures are identical across runs and platforms.
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from errors import ConfigurationError
from mobility_graph import MobilityGraph, propagation_matrix
from panel_series import PER_INHABITANTS, PanelSeries, PopulationTable

log = logging.getLogger(__name__)

GRAPH_STYLES = ("ring", "community", "random")
SERIES_STYLES = ("seasonal", "linear", "separable-two-class")
DEFAULT_NOISE = {"seasonal": 0.02, "linear": 0.0, "separable-two-class": 0.02}


@dataclass
class SynthSpec:
    nodes: int = 20
    days: int = 400
    seed: int = 0
    graph_style: str = "community"
    series_style: str = "seasonal"
    noise: float = None
    period: int = 28
    communities: int = 4

    def __post_init__(self):
        if self.nodes < 1 or self.days < 1:
            raise ConfigurationError(f"nodes and days must be >= 1, got {self.nodes}, {self.days}")
        if self.graph_style not in GRAPH_STYLES:
            raise ConfigurationError(f"graph style must be one of {GRAPH_STYLES}, got {self.graph_style!r}")
        if self.series_style not in SERIES_STYLES:
            raise ConfigurationError(f"series style must be one of {SERIES_STYLES}, got {self.series_style!r}")
        if self.period < 2:
            raise ConfigurationError(f"period must be >= 2, got {self.period}")
        if self.communities < 1:
            raise ConfigurationError(f"communities must be >= 1, got {self.communities}")
        if self.noise is None:
            self.noise = DEFAULT_NOISE[self.series_style]
        if self.noise < 0:
            raise ConfigurationError(f"noise must be >= 0, got {self.noise}")

    def to_dict(self):
        return asdict(self)


def _node_ids(n):
    width = max(3, len(str(n - 1)))
    return [f"n{i:0{width}d}" for i in range(n)]


def _community_of(n, communities):
    return np.arange(n) * min(communities, n) // n


def _graph(spec, rng):
    n = spec.nodes
    pairs = {}
    if spec.graph_style == "ring":
        for i in range(n):
            for step in (1, 2):
                for j in ((i + step) % n, (i - step) % n):
                    if j != i and (i, j) not in pairs:
                        pairs[(i, j)] = rng.uniform(1.0, 2.0)
    elif spec.graph_style == "community":
        community = _community_of(n, spec.communities)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                if community[i] == community[j]:
                    if rng.random() < 0.9:
                        pairs[(i, j)] = rng.uniform(1.0, 2.0)
                elif rng.random() < 0.5:
                    pairs[(i, j)] = rng.uniform(0.2, 0.6)
    else:
        p = min(1.0, 4.0 / max(n - 1, 1))
        for i in range(n):
            for j in range(n):
                if i != j and rng.random() < p:
                    pairs[(i, j)] = rng.lognormal(0.0, 1.0)
    edges = [(i, j, w) for (i, j), w in pairs.items()]
    return MobilityGraph(_node_ids(n), edges)


def _phases(spec, graph, rng):
    """Per-node phase in radians, correlated along the graph."""
    n = spec.nodes
    if spec.graph_style == "community":
        community = _community_of(n, spec.communities)
        base = 2 * np.pi * community / min(spec.communities, n)
        return base + rng.normal(0.0, 0.1, n)
    if spec.graph_style == "ring":
        return 2 * np.pi * np.arange(n) / n + rng.normal(0.0, 0.05, n)
    raw = rng.uniform(0.0, 2 * np.pi, n)
    # circular mean over each closed neighbourhood
    mixed = propagation_matrix(graph) @ np.exp(1j * raw)
    return np.angle(mixed)


class PanelSimulator:
    """Steps a synthetic outbreak one day at a time."""

    def __init__(self, spec, graph, rng):
        self.spec = spec
        self.rng = rng
        self.day = 0
        n = spec.nodes

        self.phase = _phases(spec, graph, rng)
        self.population = np.round(rng.uniform(2e4, 5e5, n))
        self.base = rng.uniform(50.0, 150.0, n)
        self.amplitude = self.base * rng.uniform(0.3, 0.6, n)
        self.intercept = rng.uniform(0.0, 10.0, n)
        self.slope = rng.uniform(0.5, 2.0, n)

        # triangle cycles of daily cases per 100k; every cycle draws its own
        # rise and fall lengths and peak, so distant turning points stay unknown
        self.low = 2.0
        self.peak_range = (30.0, 90.0)
        ramp = max(1, spec.period // 2)
        self.ramp_range = (max(1, spec.period // 4), max(1, 3 * spec.period // 4))
        self.rise = np.full(n, ramp, dtype=np.int64)
        self.fall = np.full(n, ramp, dtype=np.int64)
        self.peak = np.full(n, 60.0)
        self.position = np.round(self.phase / (2 * np.pi) * 2 * ramp).astype(np.int64) % (2 * ramp)

    def _new_cycles(self, done):
        count = int(done.sum())
        lo, hi = self.ramp_range
        self.position[done] = 0
        self.rise[done] = self.rng.integers(lo, hi + 1, count)
        self.fall[done] = self.rng.integers(lo, hi + 1, count)
        self.peak[done] = self.rng.uniform(*self.peak_range, count)

    def _triangle(self):
        rising = self.position < self.rise
        frac = np.where(rising, self.position / self.rise, 1.0 - (self.position - self.rise) / self.fall)
        value = self.low + (self.peak - self.low) * frac
        self.position += 1
        done = self.position >= self.rise + self.fall
        if done.any():
            self._new_cycles(done)
        return value

    def update(self):
        """Cases of the current day for every node, then advance one day."""
        style = self.spec.series_style
        noise = self.spec.noise
        n = self.spec.nodes
        if style == "seasonal":
            angle = 2 * math.pi * self.day / self.spec.period + self.phase
            cases = self.base + self.amplitude * np.sin(angle)
            if noise:
                cases = cases + noise * self.amplitude * self.rng.standard_normal(n)
        elif style == "linear":
            cases = self.intercept + self.slope * self.day
            if noise:
                cases = cases + noise * self.rng.standard_normal(n)
        else:
            per_100k = self._triangle()
            if noise:
                per_100k = per_100k * (1.0 + noise * self.rng.standard_normal(n))
            cases = per_100k * self.population / PER_INHABITANTS
        self.day += 1
        return np.maximum(cases, 0.0)

    def run(self, days):
        return np.stack([self.update() for _ in range(days)], axis=1)


def generate_synthetic(spec):
    """(graph, panel, populations) for a SynthSpec, pure in the spec."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    graph = _graph(spec, rng)
    simulator = PanelSimulator(spec, graph, rng)
    values = simulator.run(spec.days)
    panel = PanelSeries(values, graph.node_ids)
    populations = PopulationTable(dict(zip(graph.node_ids, simulator.population)))
    log.info(
        "synthetic %s/%s fixture: %s, %d days, seed %d",
        spec.graph_style, spec.series_style, graph, spec.days, spec.seed,
    )
    return graph, panel, populations
