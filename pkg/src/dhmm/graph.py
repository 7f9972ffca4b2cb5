"""Random geometric graphs on the unit square.

Sensors are dropped uniformly in [0, 1]^2 and two sensors talk to each other
when their Euclidean distance is at most ``r`` (ties count as connected).
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError, TopologyError
from .seeding import stream

DEFAULT_MAX_RETRIES = 1000


@dataclass(frozen=True)
class GraphTopology:
    S: int
    r: float
    positions: np.ndarray
    adjacency: np.ndarray
    seed: int | None = None
    neighborhoods: tuple[frozenset[int], ...] = field(init=False, repr=False)

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        pos = np.asarray(self.positions, dtype=float)
        if adj.shape != (self.S, self.S):
            raise ParameterError(f"adjacency must be {self.S}x{self.S}, got {adj.shape}")
        if pos.shape != (self.S, 2):
            raise ParameterError(f"positions must be {self.S}x2, got {pos.shape}")
        if not np.array_equal(adj, adj.T):
            raise ParameterError("adjacency must be symmetric")
        if adj.diagonal().any():
            raise ParameterError("adjacency diagonal must be false")
        adj.setflags(write=False)
        pos.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "positions", pos)
        hoods = tuple(frozenset([k, *np.flatnonzero(adj[k]).tolist()]) for k in range(self.S))
        object.__setattr__(self, "neighborhoods", hoods)

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))

    def to_dict(self) -> dict:
        return {
            "S": self.S,
            "r": self.r,
            "seed": self.seed,
            "positions": self.positions.tolist(),
            "edges": [list(e) for e in self.edges],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> GraphTopology:
        S = int(doc["S"])
        adj = np.zeros((S, S), dtype=bool)
        for i, j in doc.get("edges", []):
            if i == j:
                raise ParameterError(f"self-loop edge ({i}, {j})")
            adj[i, j] = adj[j, i] = True
        return cls(S=S, r=float(doc["r"]), positions=np.asarray(doc["positions"], dtype=float),
                   adjacency=adj, seed=doc.get("seed"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> GraphTopology:
        return cls.from_dict(json.loads(Path(path).read_text()))


def adjacency_from_positions(positions: np.ndarray, r: float) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    adj = dist <= r
    np.fill_diagonal(adj, False)
    return adj


def _check_params(S: int, r: float) -> None:
    if int(S) != S or S < 1:
        raise ParameterError(f"sensor count must be an integer >= 1, got {S!r}")
    if not (0.0 < r <= math.sqrt(2.0)):
        raise ParameterError(f"connectivity radius must lie in (0, sqrt(2)], got {r!r}")


def sample_rgg(S: int, r: float, seed: int) -> GraphTopology:
    """Draw ``S`` uniform positions in the unit square and connect pairs within ``r``."""
    _check_params(S, r)
    rng = stream(seed, "topology")
    positions = rng.random((int(S), 2))
    return GraphTopology(S=int(S), r=float(r), positions=positions,
                         adjacency=adjacency_from_positions(positions, r), seed=int(seed))


def is_connected(g: GraphTopology) -> bool:
    if g.S == 0:
        return False
    seen = np.zeros(g.S, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        k = queue.popleft()
        for l in np.flatnonzero(g.adjacency[k] & ~seen):
            seen[l] = True
            queue.append(l)
    return bool(seen.all())


def sample_connected_rgg(S: int, r: float, seed: int,
                         max_retries: int = DEFAULT_MAX_RETRIES) -> GraphTopology:
    """Resample with seed, seed+1, ... until the graph is connected.

    The returned topology records the seed that actually produced it.
    """
    _check_params(S, r)
    for attempt in range(max_retries + 1):
        g = sample_rgg(S, r, seed + attempt)
        if is_connected(g):
            return g
    raise TopologyError(
        f"no connected RGG with S={S}, r={r} after {max_retries} retries from seed {seed}")


def _batch_connected(adj: np.ndarray) -> np.ndarray:
    """Connectivity of a stack of (B, S, S) adjacency matrices by repeated squaring."""
    S = adj.shape[-1]
    reach = adj | np.eye(S, dtype=bool)
    steps = 1
    while steps < S - 1:
        r = reach.astype(np.float32)
        reach = np.matmul(r, r) > 0
        steps *= 2
    return reach[:, 0, :].all(axis=1)


def sample_connected_rgg_rng(S: int, r: float, rng: np.random.Generator, max_draws: int = 10_000_000,
                             batch: int = 2048) -> GraphTopology:
    """Rejection-sample a connected RGG from one generator, screening candidates in batches.

    Suited to sparse regimes where connectivity is rare; the result is the
    first connected candidate in draw order.
    """
    _check_params(S, r)
    S = int(S)
    drawn = 0
    while drawn < max_draws:
        b = min(batch, max_draws - drawn)
        pos = rng.random((b, S, 2))
        diff = pos[:, :, None, :] - pos[:, None, :, :]
        adj = (diff ** 2).sum(axis=-1) <= r * r
        idx = np.eye(S, dtype=bool)
        adj[:, idx] = False
        ok = np.flatnonzero(_batch_connected(adj))
        if len(ok):
            positions = pos[ok[0]]
            return GraphTopology(S=S, r=float(r), positions=positions,
                                 adjacency=adjacency_from_positions(positions, r))
        drawn += b
    raise TopologyError(f"no connected RGG with S={S}, r={r} in {max_draws} draws")
