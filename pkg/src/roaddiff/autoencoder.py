"""Road-lane correlation autoencoder.

The encoder runs, per time step, a graph convolution over the road graph,
blends it with a graph-attention pass through a learned balance in (0,1),
then applies temporal attention across steps and pools into one hidden
vector per road. The decoder maps each road's hidden vector onto its
lanes, enriches them over the lane graph with the same fuse-and-attend
structure, re-expands the time axis by broadcast, and emits one value per
(step, lane).

Neighborhoods always include the node itself, so attention softmaxes are
never empty. The first time step acts as its own predecessor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .graphs import LaneNetwork, NormalizedAdjacency, RoadNetwork, normalized_adjacency
from .optim import ParamStore
from .tensor import Tensor


def gcn_layer(x: Tensor, adj: NormalizedAdjacency, weight: Tensor,
              activation=T.relu) -> Tensor:
    """One graph convolution: activation(A_norm @ x @ W)."""
    out = T.matmul(Tensor(adj.matrix), T.matmul(x, weight))
    return activation(out) if activation is not None else out


def graph_attention(x: Tensor, neighborhood: np.ndarray, weight: Tensor,
                    attn_vec: Tensor, slope: float = 0.2) -> Tensor:
    """Attention coefficients over masked neighborhoods.

    Scores are LeakyReLU(a^T [W x_i || W x_j]) which factorizes into a
    self part and a neighbor part; rows softmax-normalize over the mask.
    """
    d = weight.shape[1]
    p = T.matmul(x, weight)                                  # [..., n, d]
    a_self = T.take_rows(attn_vec, np.arange(d))             # [d, 1]
    a_nbr = T.take_rows(attn_vec, np.arange(d, 2 * d))       # [d, 1]
    u = T.matmul(p, a_self)                                  # [..., n, 1]
    v = T.matmul(p, a_nbr)                                   # [..., n, 1]
    scores = T.leaky_relu(T.add(u, T.transpose_last2(v)), slope)
    return T.softmax_masked(scores, neighborhood)


def spatial_fuse(static_part: Tensor, dynamic_part: Tensor, balance: Tensor) -> Tensor:
    """balance * static + (1 - balance) * dynamic."""
    one_minus = T.sub(Tensor(1.0), balance)
    return T.add(T.mul(balance, static_part), T.mul(one_minus, dynamic_part))


def temporal_attention(x: Tensor, neighborhood: np.ndarray, w_query: Tensor,
                       w_key: Tensor, w_value: Tensor, d_k: int) -> Tensor:
    """Attend over neighbors at step t, aggregating their step t-1 values.

    x is [batch, T, nodes, dim]; scores are ReLU of scaled dot products so
    an all-negative score row degrades to a plain neighborhood mean.
    """
    if d_k <= 0:
        raise ConfigError(f"key dimension must be positive, got {d_k}")
    q = T.matmul(x, w_query)
    k = T.matmul(x, w_key)
    v = T.matmul(x, w_value)
    scores = T.relu(T.mul(T.matmul(q, T.transpose_last2(k)), Tensor(1.0 / math.sqrt(d_k))))
    alpha = T.softmax_masked(scores, neighborhood)
    return T.matmul(alpha, T.shift_time(v))


def road_to_lane(z: Tensor, lane_net: LaneNetwork, w_map: Tensor, b_map: Tensor) -> Tensor:
    """Copy each road's hidden vector to its lanes through an affine map."""
    return T.add(T.matmul(T.take_rows(z, lane_net.parent_road), w_map), b_map)


def _mlp(x: Tensor, store: ParamStore, prefix: str) -> Tensor:
    h = T.relu(T.add(T.matmul(x, store[f"{prefix}.w1"]), store[f"{prefix}.b1"]))
    return T.add(T.matmul(h, store[f"{prefix}.w2"]), store[f"{prefix}.b2"])


@dataclass
class AutoencoderConfig:
    hidden_dim: int = 32
    gcn_layers: int = 1
    leaky_slope: float = 0.2
    self_loops: bool = True
    use_graph_attention: bool = True
    use_temporal_attention: bool = True
    linear_only: bool = False


class RoadLaneAutoencoder:
    """Owns the graph constants and the parameter layout of both halves."""

    def __init__(self, road_net: RoadNetwork, lane_net: LaneNetwork,
                 config: AutoencoderConfig | None = None):
        self.road_net = road_net
        self.lane_net = lane_net
        self.cfg = config or AutoencoderConfig()
        self.road_adj = normalized_adjacency(road_net.adjacency, self.cfg.self_loops)
        self.lane_adj = normalized_adjacency(lane_net.adjacency, self.cfg.self_loops)

    def init_params(self, store: ParamStore, rng: np.random.Generator) -> None:
        d = self.cfg.hidden_dim
        if self.cfg.linear_only:
            i, n = self.road_net.road_count, self.lane_net.lane_count
            store.add("lin.w", rng.normal(0.0, 1.0 / math.sqrt(i), (i, n)))
            store.add("lin.b", np.zeros(n))
            return

        def dense(name, fan_in, shape):
            store.add(name, rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape))

        in_dim = 1
        for m in range(self.cfg.gcn_layers):
            dense(f"enc.gcn.{m}", max(in_dim, 1), (in_dim, d))
            in_dim = d
        dense("enc.fuse.w", d, (d, d))
        dense("enc.fuse.a", d, (2 * d, 1))
        store.add("enc.fuse.balance", np.zeros(1))        # sigmoid(0) = 0.5
        dense("enc.temp.wq", d, (d, d))
        dense("enc.temp.wk", d, (d, d))
        dense("enc.temp.wv", d, (d, d))
        dense("enc.mlp.w1", d, (d, d))
        store.add("enc.mlp.b1", np.zeros(d))
        dense("enc.mlp.w2", d, (d, d))
        store.add("enc.mlp.b2", np.zeros(d))

        dense("dec.map.w", d, (d, d))
        store.add("dec.map.b", np.zeros(d))
        dense("dec.fuse.w", d, (d, d))
        dense("dec.fuse.a", d, (2 * d, 1))
        store.add("dec.fuse.balance", np.zeros(1))
        dense("dec.temp.wq", d, (d, d))
        dense("dec.temp.wk", d, (d, d))
        dense("dec.temp.wv", d, (d, d))
        dense("dec.mlp.w1", d, (d, d))
        store.add("dec.mlp.b1", np.zeros(d))
        dense("dec.mlp.w2", d, (d, 1))
        store.add("dec.mlp.b2", np.zeros(1))

    def _fuse(self, h: Tensor, adj: NormalizedAdjacency, store: ParamStore,
              prefix: str) -> Tensor:
        w = store[f"{prefix}.w"]
        static = T.matmul(Tensor(adj.matrix), T.matmul(h, w))
        if not self.cfg.use_graph_attention:
            return static
        alpha = graph_attention(h, adj.neighborhood, w, store[f"{prefix}.a"],
                                self.cfg.leaky_slope)
        dynamic = T.matmul(alpha, T.matmul(h, w))
        balance = T.sigmoid(store[f"{prefix}.balance"])
        return spatial_fuse(static, dynamic, balance)

    def _temporal(self, h: Tensor, adj: NormalizedAdjacency, store: ParamStore,
                  prefix: str) -> Tensor:
        if not self.cfg.use_temporal_attention:
            return h
        return temporal_attention(h, adj.neighborhood, store[f"{prefix}.wq"],
                                  store[f"{prefix}.wk"], store[f"{prefix}.wv"],
                                  self.cfg.hidden_dim)

    def encode(self, x: Tensor, store: ParamStore) -> tuple[Tensor, Tensor]:
        """Road window [batch, T, I] -> (per-step features, pooled hidden)."""
        if not np.isfinite(x.values).all():
            raise DataError("encoder input contains NaN or Inf")
        b, t, i = x.shape
        h = T.reshape(x, (b, t, i, 1))
        for m in range(self.cfg.gcn_layers):
            h = gcn_layer(h, self.road_adj, store[f"enc.gcn.{m}"])
        h = self._fuse(h, self.road_adj, store, "enc.fuse")
        h = self._temporal(h, self.road_adj, store, "enc.temp")
        pooled = T.reduce_sum(h, axis=1)                   # [batch, I, d]
        z = _mlp(pooled, store, "enc.mlp")
        return h, z

    def decode(self, z: Tensor, store: ParamStore, steps: int) -> Tensor:
        """Pooled road hidden [batch, I, d] -> lane estimate [batch, T, N]."""
        lane0 = road_to_lane(z, self.lane_net, store["dec.map.w"], store["dec.map.b"])
        fused = self._fuse(lane0, self.lane_adj, store, "dec.fuse")
        per_step = T.tile_time(fused, steps)               # [batch, T, N, d]
        per_step = self._temporal(per_step, self.lane_adj, store, "dec.temp")
        out = _mlp(per_step, store, "dec.mlp")             # [batch, T, N, 1]
        b = z.shape[0]
        return T.reshape(out, (b, steps, self.lane_net.lane_count))

    def forward(self, x: Tensor, store: ParamStore) -> Tensor:
        """Full pass: road window [batch, T, I] -> lane estimate [batch, T, N]."""
        if self.cfg.linear_only:
            return T.add(T.matmul(x, store["lin.w"]), store["lin.b"])
        _, z = self.encode(x, store)
        return self.decode(z, store, x.shape[1])
