"""Road graph, derived lane graph, and symmetric adjacency normalization.

Lanes are indexed road-major: lane j of road i gets the flat index
``offset[i] + j``. Lateral edges connect neighboring lanes on the same
road; longitudinal edges connect lane j of two adjacent roads when both
roads have a lane j. Ragged lane counts are kept native, never padded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidLaneCount, ShapeError, ZeroDegree


@dataclass(frozen=True)
class RoadNetwork:
    """Undirected road graph with per-road lane counts."""

    road_count: int
    adjacency: np.ndarray      # [I, I] binary, symmetric, zero diagonal
    lane_counts: np.ndarray    # [I] positive ints

    @property
    def total_lanes(self) -> int:
        return int(self.lane_counts.sum())


@dataclass(frozen=True)
class LaneNetwork:
    """Lane graph derived from a road graph."""

    lane_count: int
    adjacency: np.ndarray      # [N, N] binary, symmetric
    parent_road: np.ndarray    # [N] road index per lane
    lane_offsets: np.ndarray   # [I] flat index of lane 0 per road
    lane_counts: np.ndarray    # [I] copy of the road lane counts

    def pair_to_flat(self, road: int, lane: int) -> int:
        if not (0 <= road < len(self.lane_offsets)):
            raise IndexError(f"road index {road} out of range")
        if not (0 <= lane < self.lane_counts[road]):
            raise IndexError(f"lane index {lane} out of range for road {road}")
        return int(self.lane_offsets[road] + lane)

    def flat_to_pair(self, flat: int) -> tuple[int, int]:
        if not (0 <= flat < self.lane_count):
            raise IndexError(f"flat lane index {flat} out of range")
        road = int(self.parent_road[flat])
        return road, int(flat - self.lane_offsets[road])


@dataclass(frozen=True)
class NormalizedAdjacency:
    """D^{-1/2} (A + s I) D^{-1/2} with s the self-loop flag."""

    matrix: np.ndarray
    self_loops: bool
    # boolean neighborhood mask used by attention; always includes self
    neighborhood: np.ndarray = field(repr=False, default=None)


def build_road_network(edge_list, lane_counts) -> RoadNetwork:
    """Validate and assemble the road graph from an edge list."""
    counts = np.asarray(lane_counts, dtype=np.int64)
    if counts.ndim != 1 or counts.size == 0:
        raise InvalidLaneCount("lane_counts must be a non-empty 1-D array")
    if (counts < 1).any():
        raise InvalidLaneCount(f"every road needs at least one lane, got {counts.tolist()}")
    n = counts.size
    adj = np.zeros((n, n))
    for a, b in edge_list:
        a, b = int(a), int(b)
        if not (0 <= a < n and 0 <= b < n):
            raise IndexError(f"edge ({a}, {b}) out of range for {n} roads")
        if a == b:
            raise ShapeError(f"self-edge on road {a} is not allowed")
        adj[a, b] = 1.0
        adj[b, a] = 1.0
    return RoadNetwork(road_count=n, adjacency=adj, lane_counts=counts)


def build_lane_network(road: RoadNetwork) -> LaneNetwork:
    """Derive the lane graph with lateral and longitudinal edges."""
    counts = road.lane_counts
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    n_lanes = int(counts.sum())
    parent = np.zeros(n_lanes, dtype=np.int64)
    for i in range(road.road_count):
        parent[offsets[i]:offsets[i] + counts[i]] = i

    adj = np.zeros((n_lanes, n_lanes))
    for i in range(road.road_count):
        base = offsets[i]
        for j in range(counts[i] - 1):          # lateral: (i,j)-(i,j+1)
            adj[base + j, base + j + 1] = 1.0
            adj[base + j + 1, base + j] = 1.0
    rows, cols = np.nonzero(road.adjacency)
    for i, k in zip(rows, cols):
        if i >= k:
            continue
        shared = min(counts[i], counts[k])      # longitudinal: same j on both roads
        for j in range(shared):
            a = offsets[i] + j
            b = offsets[k] + j
            adj[a, b] = 1.0
            adj[b, a] = 1.0

    return LaneNetwork(lane_count=n_lanes, adjacency=adj, parent_road=parent,
                       lane_offsets=offsets, lane_counts=counts.copy())


def normalized_adjacency(adjacency: np.ndarray, self_loops: bool = True) -> NormalizedAdjacency:
    """Symmetrically normalize a binary adjacency matrix."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got {a.shape}")
    if not np.array_equal(a, a.T):
        raise ShapeError("adjacency must be symmetric")
    aug = a + np.eye(a.shape[0]) if self_loops else a.copy()
    degree = aug.sum(axis=1)
    if (degree == 0).any():
        bad = int(np.flatnonzero(degree == 0)[0])
        raise ZeroDegree(f"node {bad} has degree zero without self-loops")
    inv_sqrt = 1.0 / np.sqrt(degree)
    matrix = aug * inv_sqrt[:, None] * inv_sqrt[None, :]
    mask = (a + np.eye(a.shape[0])) > 0       # attention neighborhoods keep self
    return NormalizedAdjacency(matrix=matrix, self_loops=self_loops, neighborhood=mask)


def load_graph_json(path: str | Path) -> RoadNetwork:
    """Read a graph description file: {"edges": [[i, j], ...], "lane_counts": [...]}."""
    data = json.loads(Path(path).read_text())
    return build_road_network(data["edges"], data["lane_counts"])


def save_graph_json(road: RoadNetwork, path: str | Path) -> None:
    rows, cols = np.nonzero(road.adjacency)
    edges = [[int(i), int(k)] for i, k in zip(rows, cols) if i < k]
    payload = {"edges": edges, "lane_counts": road.lane_counts.tolist()}
    Path(path).write_text(json.dumps(payload, indent=2))


def chain_edges(n_roads: int) -> list[tuple[int, int]]:
    """Edge list of a simple corridor: road i touches road i+1."""
    return [(i, i + 1) for i in range(n_roads - 1)]
