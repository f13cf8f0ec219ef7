"""Graph and GraphBatch containers.

Edges are directed (src, dst) pairs; messages flow along the edge into
dst, so the neighbourhood of u is the set of sources of its incoming
edges. Undirected graphs store both directions. Self-loops are never
added implicitly; ``add_self_loops`` is the explicit transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Graph:
    num_nodes: int
    edges: np.ndarray  # (E, 2) int64, rows are (src, dst)
    node_features: np.ndarray  # (num_nodes, d_in) float64
    edge_features: np.ndarray | None = None  # (E, d_e) float64
    node_labels: np.ndarray | None = None  # (num_nodes,) int64
    graph_label: float | int | None = None
    edge_labels: np.ndarray | None = None  # (E,) int64

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        if self.edge_features is not None:
            self.edge_features = np.asarray(self.edge_features, dtype=np.float64)
        if self.node_labels is not None:
            self.node_labels = np.asarray(self.node_labels, dtype=np.int64)
        if self.edge_labels is not None:
            self.edge_labels = np.asarray(self.edge_labels, dtype=np.int64)
        self.validate()

    def validate(self) -> None:
        if self.node_features.shape[0] != self.num_nodes:
            raise ValueError(
                f"node_features has {self.node_features.shape[0]} rows "
                f"for {self.num_nodes} nodes"
            )
        if self.num_edges and (
            self.edges.min() < 0 or self.edges.max() >= self.num_nodes
        ):
            raise ValueError("edge endpoint out of range")
        if self.edge_features is not None and self.edge_features.shape[0] != self.num_edges:
            raise ValueError("edge_features row count != num_edges")
        if self.edge_labels is not None and self.edge_labels.shape[0] != self.num_edges:
            raise ValueError("edge_labels length != num_edges")

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def in_degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        if self.num_edges:
            np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def permute_nodes(self, perm: np.ndarray) -> "Graph":
        """Relabel node i as perm[i]; edge storage order is unchanged."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(self.num_nodes)
        x = np.empty_like(self.node_features)
        x[perm] = self.node_features
        labels = None
        if self.node_labels is not None:
            labels = np.empty_like(self.node_labels)
            labels[perm] = self.node_labels
        edges = perm[self.edges] if self.num_edges else self.edges.copy()
        return Graph(
            num_nodes=self.num_nodes,
            edges=edges,
            node_features=x,
            edge_features=None if self.edge_features is None else self.edge_features.copy(),
            node_labels=labels,
            graph_label=self.graph_label,
            edge_labels=None if self.edge_labels is None else self.edge_labels.copy(),
        )


def add_self_loops(g: Graph, edge_fill: float = 0.0) -> Graph:
    """Append one (u, u) edge per node; new edge features are edge_fill."""
    loops = np.stack([np.arange(g.num_nodes)] * 2, axis=1)
    edges = np.concatenate([g.edges, loops], axis=0)
    edge_features = g.edge_features
    if edge_features is not None:
        fill = np.full((g.num_nodes, edge_features.shape[1]), edge_fill)
        edge_features = np.concatenate([edge_features, fill], axis=0)
    edge_labels = g.edge_labels
    if edge_labels is not None:
        edge_labels = np.concatenate([edge_labels, np.zeros(g.num_nodes, dtype=np.int64)])
    return Graph(
        num_nodes=g.num_nodes,
        edges=edges,
        node_features=g.node_features.copy(),
        edge_features=edge_features,
        node_labels=None if g.node_labels is None else g.node_labels.copy(),
        graph_label=g.graph_label,
        edge_labels=edge_labels,
    )


@dataclass
class GraphBatch:
    """Block-diagonal union of graphs; no edge crosses graph boundaries."""

    num_graphs: int
    num_nodes: int
    edges: np.ndarray
    node_features: np.ndarray
    graph_id: np.ndarray  # (num_nodes,) graph index per node
    node_offsets: np.ndarray  # (num_graphs + 1,)
    edge_offsets: np.ndarray  # (num_graphs + 1,)
    edge_features: np.ndarray | None = None
    node_labels: np.ndarray | None = None
    graph_labels: np.ndarray | None = None
    edge_labels: np.ndarray | None = None
    _has_graph_labels: bool = field(default=False, repr=False)

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def in_degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        if self.num_edges:
            np.add.at(deg, self.edges[:, 1], 1)
        return deg


def batch(graphs: list[Graph]) -> GraphBatch:
    if not graphs:
        raise ValueError("cannot batch an empty list of graphs")
    node_offsets = np.cumsum([0] + [g.num_nodes for g in graphs])
    edge_offsets = np.cumsum([0] + [g.num_edges for g in graphs])
    edges = np.concatenate(
        [g.edges + off for g, off in zip(graphs, node_offsets[:-1])], axis=0
    )
    x = np.concatenate([g.node_features for g in graphs], axis=0)
    graph_id = np.concatenate(
        [np.full(g.num_nodes, i, dtype=np.int64) for i, g in enumerate(graphs)]
    )

    def cat_optional(parts):
        if all(p is None for p in parts):
            return None
        if any(p is None for p in parts):
            raise ValueError("cannot batch graphs with mixed presence of a field")
        return np.concatenate(parts, axis=0)

    edge_features = cat_optional([g.edge_features for g in graphs])
    node_labels = cat_optional([g.node_labels for g in graphs])
    edge_labels = cat_optional([g.edge_labels for g in graphs])
    has_gl = all(g.graph_label is not None for g in graphs)
    graph_labels = np.array([g.graph_label for g in graphs]) if has_gl else None
    return GraphBatch(
        num_graphs=len(graphs),
        num_nodes=int(node_offsets[-1]),
        edges=edges,
        node_features=x,
        graph_id=graph_id,
        node_offsets=node_offsets,
        edge_offsets=edge_offsets,
        edge_features=edge_features,
        node_labels=node_labels,
        graph_labels=graph_labels,
        edge_labels=edge_labels,
        _has_graph_labels=has_gl,
    )


def unbatch(b: GraphBatch) -> list[Graph]:
    graphs = []
    for i in range(b.num_graphs):
        n0, n1 = b.node_offsets[i], b.node_offsets[i + 1]
        e0, e1 = b.edge_offsets[i], b.edge_offsets[i + 1]
        label = None
        if b.graph_labels is not None:
            label = b.graph_labels[i].item()
        graphs.append(
            Graph(
                num_nodes=int(n1 - n0),
                edges=b.edges[e0:e1] - n0,
                node_features=b.node_features[n0:n1].copy(),
                edge_features=None if b.edge_features is None else b.edge_features[e0:e1].copy(),
                node_labels=None if b.node_labels is None else b.node_labels[n0:n1].copy(),
                graph_label=label,
                edge_labels=None if b.edge_labels is None else b.edge_labels[e0:e1].copy(),
            )
        )
    return graphs
