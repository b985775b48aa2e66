"""Shared fixtures and small dataset builders for the test suite."""

import itertools
from datetime import date, timedelta

import numpy as np
import pytest

from arealrt import (
    SpatioTemporalPoissonModel,
    SurveillanceDataset,
    lattice_graph,
)


def make_dataset(counts, populations=None, start=date(2020, 3, 6)):
    """SurveillanceDataset from a counts matrix, ids A01, A02, ..."""
    counts = np.asarray(counts, dtype=np.int64)
    I, J = counts.shape
    if populations is None:
        populations = np.full(I, 1000.0)
    return SurveillanceDataset(
        area_ids=tuple(f"A{i:02d}" for i in range(1, I + 1)),
        dates=tuple(start + timedelta(days=j) for j in range(J)),
        counts=counts,
        populations=np.asarray(populations, dtype=float),
    )


def poisson_dataset(I, J, rate=5.0, populations=None, seed=0):
    rng = np.random.default_rng(seed)
    return make_dataset(rng.poisson(rate, size=(I, J)),
                        populations=populations)


def connected_graphs(n):
    """Edge lists of every connected labeled graph on n nodes."""
    all_edges = list(itertools.combinations(range(n), 2))
    graphs = []
    for mask in range(1 << len(all_edges)):
        edges = [e for b, e in enumerate(all_edges) if mask >> b & 1]
        adj = {i: set() for i in range(n)}
        for a, b in edges:
            adj[a].add(b)
            adj[b].add(a)
        seen, stack = {0}, [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) == n:
            graphs.append(edges)
    return graphs


@pytest.fixture(scope="session")
def small_fit():
    """One quick real fit shared across test modules.

    3x3 lattice, 35 days, biweekly knots (K=3); 2 chains x 100 kept draws.
    """
    rng = np.random.default_rng(42)
    graph = lattice_graph(3, 3)
    I, J = 9, 35
    trend = 0.8 * np.sin(np.linspace(0, 2.5, J))
    lam = 1000.0 * np.exp(
        trend[None, :] + 0.3 * rng.standard_normal((I, 1))
    ) * 0.01
    dataset = make_dataset(rng.poisson(lam), populations=np.full(I, 1000.0))
    model = SpatioTemporalPoissonModel(
        chains=2, iterations=500, burn_in=300, thin=2, seed=7,
    ).fit(dataset, graph)
    return model, dataset, graph
