"""Independent reference computations for checking the vectorized layers.

``naive_forward_oracle`` re-runs a model's forward pass (eval mode) as
literal per-node, per-neighbour loops in plain numpy, recomputing each
rest-of-neighbourhood sum directly instead of by subtraction from the
total. The harnesses below compare the vectorized path against this
oracle, against node permutations, and against the base layers when the
interaction encoder is zeroed.
"""

from __future__ import annotations

import numpy as np

from .graph import Graph
from .layers import GcnLayer, GatedGcnLayer, Model
from .rng import Rng
from . import tensor as T


def _neighbours(g: Graph) -> list[list[tuple[int, int]]]:
    """Incoming (source, edge_index) pairs per node, sorted by source id."""
    inc: list[list[tuple[int, int]]] = [[] for _ in range(g.num_nodes)]
    for ei, (s, d) in enumerate(g.edges):
        inc[d].append((int(s), ei))
    for lst in inc:
        lst.sort()
    return inc


def _affine(x: np.ndarray, lin) -> np.ndarray:
    y = x @ lin.weight.data
    if lin.bias is not None:
        y = y + lin.bias.data
    return y


def _gcn_layer_naive(h: np.ndarray, g: Graph, layer: GcnLayer) -> np.ndarray:
    inc = _neighbours(g)
    W = layer.W.data
    out = np.zeros_like(h)
    for u in range(g.num_nodes):
        nbrs = [s for s, _ in inc[u]]
        if not nbrs:
            continue
        msgs = [(1.0 / len(nbrs)) * (h[v] @ W) for v in nbrs]
        total = np.zeros(h.shape[1])
        for m in msgs:
            total = total + m
        pre = total
        if layer.encode_interactions:
            enc = np.zeros(h.shape[1])
            for i in range(len(nbrs)):
                rest = np.zeros(h.shape[1])
                for j in range(len(nbrs)):
                    if j != i:
                        rest = rest + msgs[j]
                enc = enc + _affine(
                    np.concatenate([msgs[i], rest]).reshape(1, -1), layer.fc
                ).reshape(-1)
            pre = pre + enc
        out[u] = pre
    return np.maximum(out, 0.0)


def _gated_layer_naive(h: np.ndarray, e: np.ndarray, g: Graph,
                       layer: GatedGcnLayer) -> tuple[np.ndarray, np.ndarray]:
    inc = _neighbours(g)
    A, B, C, F = layer.A.data, layer.B.data, layer.C.data, layer.F.data
    d = h.shape[1]
    e_pre = np.zeros_like(e)
    for ei, (s, dn) in enumerate(g.edges):
        e_pre[ei] = h[dn] @ A + h[s] @ B + e[ei] @ C
    sig = 1.0 / (1.0 + np.exp(-e_pre))

    use_self, use_msg, use_enc = layer.terms
    use_enc = use_enc and layer.encode_interactions
    pre = np.zeros_like(h)
    for u in range(g.num_nodes):
        pairs = inc[u]
        denom = np.full(d, layer.eps)
        for _, ei in pairs:
            denom = denom + sig[ei]
        msgs = [sig[ei] / denom * (h[v] @ F) for v, ei in pairs]
        total = np.zeros(d)
        for m in msgs:
            total = total + m
        acc = np.zeros(d)
        if use_self:
            acc = acc + h[u] @ A
        if use_msg:
            acc = acc + total
        if use_enc:
            for i in range(len(msgs)):
                rest = np.zeros(d)
                for j in range(len(msgs)):
                    if j != i:
                        rest = rest + msgs[j]
                acc = acc + _affine(
                    np.concatenate([msgs[i], rest]).reshape(1, -1), layer.fc
                ).reshape(-1)
        pre[u] = acc

    bn = layer.bn
    normed = (pre - bn.running_mean) / np.sqrt(bn.running_var + bn.eps)
    normed = normed * bn.gamma.data + bn.beta.data
    h_new = np.maximum(normed, 0.0) + h
    e_new = np.maximum(e_pre, 0.0) + e
    return h_new, e_new


def naive_forward_oracle(g: Graph, model: Model) -> np.ndarray:
    """Final node embeddings via literal loops, eval mode."""
    h = _affine(g.node_features, model.node_encoder)
    e = None
    if model.edge_encoder is not None:
        raw = g.edge_features
        if raw is None:
            raw = np.zeros((g.num_edges, model.config.d_edge))
        e = _affine(raw, model.edge_encoder)
    for layer in model.layers:
        if isinstance(layer, GcnLayer):
            h = _gcn_layer_naive(h, g, layer)
        else:
            h, e = _gated_layer_naive(h, e, g, layer)
    return h


def oracle_harness(model: Model, graphs: list[Graph]) -> float:
    """Max |vectorized - naive| over node embeddings, eval mode."""
    worst = 0.0
    for g in graphs:
        with T.no_grad():
            h, _, _ = model.embeddings(g, training=False)
        ref = naive_forward_oracle(g, model)
        worst = max(worst, float(np.max(np.abs(h.data - ref))))
    return worst


def equivariance_harness(model: Model, g: Graph, n_perms: int, rng: Rng) -> float:
    """Max |P.f(G) - f(P.G)| over random node permutations, eval mode."""
    with T.no_grad():
        h0, _, _ = model.embeddings(g, training=False)
    worst = 0.0
    for _ in range(n_perms):
        perm = np.array(rng.sample(g.num_nodes, g.num_nodes), dtype=np.int64)
        pg = g.permute_nodes(perm)
        with T.no_grad():
            h1, _, _ = model.embeddings(pg, training=False)
        worst = max(worst, float(np.max(np.abs(h1.data[perm] - h0.data))))
    return worst


def edge_order_harness(model: Model, g: Graph, n_shuffles: int, rng: Rng) -> float:
    """Max deviation of node embeddings under shuffled edge storage order."""
    with T.no_grad():
        h0, _, _ = model.embeddings(g, training=False)
    worst = 0.0
    for _ in range(n_shuffles):
        order = np.array(rng.sample(g.num_edges, g.num_edges), dtype=np.int64)
        shuffled = Graph(
            num_nodes=g.num_nodes,
            edges=g.edges[order],
            node_features=g.node_features.copy(),
            edge_features=None if g.edge_features is None else g.edge_features[order],
            node_labels=g.node_labels,
            graph_label=g.graph_label,
            edge_labels=None if g.edge_labels is None else g.edge_labels[order],
        )
        with T.no_grad():
            h1, _, _ = model.embeddings(shuffled, training=False)
        worst = max(worst, float(np.max(np.abs(h1.data - h0.data))))
    return worst


def make_zero_encoder_twin(base: Model) -> Model:
    """Clone a base model into its interaction-encoding variant with fc = 0.

    The twin computes the encoding path explicitly, but with zero encoder
    parameters its output must match the base model exactly.
    """
    config = base.config
    twin_config = type(config)(**{**config.to_dict(), "nlmi": True,
                                  "terms": (config.terms[0], config.terms[1], True)})
    twin = Model(twin_config, Rng(0))
    bp = base.params()
    for name, p in twin.params().items():
        if ".fc." in name:
            p.data = np.zeros(p.shape)
        else:
            p.data = bp[name].data.copy()
    for lb, lt in zip(base.layers, twin.layers):
        if isinstance(lb, GatedGcnLayer):
            lt.bn.running_mean = lb.bn.running_mean.copy()
            lt.bn.running_var = lb.bn.running_var.copy()
    return twin


def reduction_harness(base: Model, graphs: list[Graph]) -> float:
    """Max |base - zero-encoder twin| over node embeddings, eval mode."""
    twin = make_zero_encoder_twin(base)
    worst = 0.0
    for g in graphs:
        with T.no_grad():
            hb, _, _ = base.embeddings(g, training=False)
            ht, _, _ = twin.embeddings(g, training=False)
        worst = max(worst, float(np.max(np.abs(hb.data - ht.data))))
    return worst
