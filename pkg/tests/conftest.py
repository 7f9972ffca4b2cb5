import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dhmm import graph, mixing

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def path_graph(S: int) -> graph.GraphTopology:
    adj = np.zeros((S, S), dtype=bool)
    for i in range(S - 1):
        adj[i, i + 1] = adj[i + 1, i] = True
    pos = np.column_stack([np.linspace(0, 1, S), np.zeros(S)])
    return graph.GraphTopology(S=S, r=1.0 / max(S - 1, 1), positions=pos, adjacency=adj)


def complete_graph(S: int) -> graph.GraphTopology:
    adj = ~np.eye(S, dtype=bool)
    return graph.GraphTopology(S=S, r=math.sqrt(2.0), positions=np.full((S, 2), 0.5), adjacency=adj)


def random_mixing(rng: np.random.Generator, S_max: int = 40, construction: str = "max-degree",
                  seed_base: int = 0) -> mixing.MixingMatrix:
    S = int(rng.integers(2, S_max + 1))
    r = min(math.sqrt(2.0), 2.0 * math.sqrt(math.log(S) / S) + 0.05)
    g = graph.sample_connected_rgg(S, r, seed_base + int(rng.integers(0, 2 ** 31)))
    return mixing.build_mixing(g, construction)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for num in sorted(results):
            terminalreporter.write_line(results[num])
