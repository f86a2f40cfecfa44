"""Turning extracted neighborhoods into the encoder's aligned input matrix.

Per side (query node u or v) four feature families are built over the padded
interaction list: raw node features with a hop one-hot, raw edge features,
trainable-frequency time-interval encodings, and projected co-occurrence
counts. Each family is patched (P consecutive rows flattened into one),
aligned to a common width d by an affine map, concatenated to width 4d, and
finally the two sides are joined row-wise into a width-8d sequence.

All ops accept arbitrary leading batch axes; feature axes are trailing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import linear
from .sampler import PaddedNeighborhood
from .tensor import Tensor

HOP_MARK_WIDTH = 2  # one-hot distinguishing 1-hop from deeper entries


# ---------------------------------------------------------------------------
# raw node/edge encodings (no trainable parts -> plain ndarrays)
# ---------------------------------------------------------------------------


def hop_onehot(hops: np.ndarray) -> np.ndarray:
    """(1,0) for 1-hop entries, (0,1) for deeper hops, (0,0) for padding."""
    marks = np.zeros(hops.shape + (HOP_MARK_WIDTH,))
    marks[..., 0] = hops == 1
    marks[..., 1] = hops >= 2
    return marks


def gather_node_edge_features(neighbors: np.ndarray, hops: np.ndarray,
                              event_ids: np.ndarray, node_features: np.ndarray,
                              edge_features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gather per-entry node features (plus hop one-hot) and edge features.

    Works on any leading batch shape. node_features covers ids 0..num_nodes
    with row 0 all-zero; edge features are indexed by event id, with padding
    rows (event id -1) mapped to zeros. Padding rows therefore come out
    all-zero without extra masking.
    """
    if neighbors.max(initial=0) >= node_features.shape[0]:
        raise KeyError(
            f"neighbor id {int(neighbors.max())} outside the node feature "
            f"table (size {node_features.shape[0]})"
        )
    x_nodes = np.concatenate([node_features[neighbors], hop_onehot(hops)], axis=-1)
    edge_table = np.concatenate([np.zeros((1, edge_features.shape[1])),
                                 edge_features], axis=0)
    x_edges = edge_table[event_ids + 1]
    return x_nodes, x_edges


def encode_nodes_edges(padded: PaddedNeighborhood, node_features: np.ndarray,
                       edge_features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single-list convenience wrapper over gather_node_edge_features."""
    return gather_node_edge_features(padded.neighbors, padded.hops,
                                     padded.event_ids, node_features, edge_features)


# ---------------------------------------------------------------------------
# time-interval encoding (trainable frequencies)
# ---------------------------------------------------------------------------


def init_time_frequencies(d_time: int) -> np.ndarray:
    """Geometric ladder 10^(-4i/d_T) for i = 1..d_T, spanning several scales."""
    i = np.arange(1, d_time + 1, dtype=np.float64)
    return 10.0 ** (-4.0 * i / d_time)


@dataclass
class TimeEncoderParams:
    frequencies: Tensor  # (d_time,)


def encode_time(delta_t: np.ndarray, params: TimeEncoderParams,
                valid: np.ndarray | None = None) -> Tensor:
    """sqrt(1/d_T) * [cos(w_1 dt), sin(w_1 dt), ..., cos(w_dT dt), sin(w_dT dt)].

    delta_t is (..., S) of query-time minus entry-time; the output is
    (..., S, 2*d_T) with cos/sin interleaved per frequency. Padding rows
    (valid false) are zeroed, since cos(0)=1 would otherwise leak a signal.
    """
    if (np.asarray(delta_t) < 0).any():
        raise ValueError("negative time interval: entry at/after the query time")
    d_time = params.frequencies.values.shape[0]
    angles = T.mul(Tensor(np.asarray(delta_t, dtype=np.float64)[..., None]),
                   params.frequencies)
    pairs = T.concat([T.reshape(T.cos(angles), angles.shape + (1,)),
                      T.reshape(T.sin(angles), angles.shape + (1,))], axis=-1)
    out = T.mul(T.reshape(pairs, angles.shape[:-1] + (2 * d_time,)),
                Tensor(np.sqrt(1.0 / d_time)))
    if valid is not None:
        out = T.mul(out, Tensor(np.asarray(valid, dtype=np.float64)[..., None]))
    return out


# ---------------------------------------------------------------------------
# co-occurrence projection
# ---------------------------------------------------------------------------


@dataclass
class CooccurrenceProjector:
    """Two scalar-input one-hidden-layer ReLU MLPs, one per count column."""

    own_w1: Tensor
    own_b1: Tensor
    own_w2: Tensor
    own_b2: Tensor
    other_w1: Tensor
    other_b1: Tensor
    other_w2: Tensor
    other_b2: Tensor


def _scalar_mlp(x: Tensor, w1, b1, w2, b2) -> Tensor:
    return linear(T.relu(linear(x, w1, b1)), w2, b2)


def project_cooccurrence(counts: np.ndarray, proj: CooccurrenceProjector,
                         valid: np.ndarray | None = None) -> Tensor:
    """Sum of the two MLPs applied to the two count columns; (..., S, d_C).

    The first column (counts within the first endpoint's list) always goes
    through the first MLP regardless of which side is being encoded, so the
    two sides share column semantics. Padding rows are zeroed to keep MLP
    biases from leaking into them.
    """
    counts = np.asarray(counts, dtype=np.float64)
    first = _scalar_mlp(Tensor(counts[..., 0:1]), proj.own_w1, proj.own_b1,
                        proj.own_w2, proj.own_b2)
    second = _scalar_mlp(Tensor(counts[..., 1:2]), proj.other_w1, proj.other_b1,
                         proj.other_w2, proj.other_b2)
    out = T.add(first, second)
    if valid is not None:
        out = T.mul(out, Tensor(np.asarray(valid, dtype=np.float64)[..., None]))
    return out


# ---------------------------------------------------------------------------
# patching, alignment, pair concatenation
# ---------------------------------------------------------------------------


def patch(x, patch_size: int):
    """Flatten groups of `patch_size` consecutive rows into single rows.

    (..., S, w) -> (..., ceil(S/P), P*w); a final partial patch is zero-padded
    on the right. Accepts a Tensor (differentiable reshape) or an ndarray.
    """
    if patch_size < 1:
        raise ValueError("patch size must be >= 1")
    is_tensor = isinstance(x, Tensor)
    shape = x.shape if is_tensor else np.asarray(x).shape
    rows, width = shape[-2], shape[-1]
    target_rows = -(-rows // patch_size) * patch_size
    if target_rows != rows:
        pad_shape = shape[:-2] + (target_rows - rows, width)
        if is_tensor:
            x = T.concat([x, Tensor(np.zeros(pad_shape))], axis=-2)
        else:
            x = np.concatenate([x, np.zeros(pad_shape)], axis=-2)
    new_shape = shape[:-2] + (target_rows // patch_size, patch_size * width)
    return T.reshape(x, new_shape) if is_tensor else np.asarray(x).reshape(new_shape)


def unpatch(m: np.ndarray, patch_size: int, width: int) -> np.ndarray:
    """Inverse of patch() up to the zero rows appended on the right."""
    m = np.asarray(m)
    return m.reshape(m.shape[:-2] + (m.shape[-2] * patch_size, width))


def patch_validity(valid: np.ndarray, patch_size: int) -> np.ndarray:
    """A patch row is valid when any of its source rows is."""
    valid = np.asarray(valid, dtype=bool)
    rows = valid.shape[-1]
    target = -(-rows // patch_size) * patch_size
    if target != rows:
        pad = np.zeros(valid.shape[:-1] + (target - rows,), dtype=bool)
        valid = np.concatenate([valid, pad], axis=-1)
    return valid.reshape(valid.shape[:-1] + (target // patch_size, patch_size)).any(axis=-1)


@dataclass
class AlignParams:
    """Per-family affine maps onto the shared width d (shared between sides)."""

    w_nodes: Tensor
    b_nodes: Tensor
    w_edges: Tensor
    b_edges: Tensor
    w_time: Tensor
    b_time: Tensor
    w_cooc: Tensor
    b_cooc: Tensor


def align_concat(m_nodes, m_edges, m_time, m_cooc, params: AlignParams) -> Tensor:
    """Map each patched family to width d and join them side by side (4d)."""
    z_n = linear(T.as_tensor(m_nodes), params.w_nodes, params.b_nodes)
    z_e = linear(T.as_tensor(m_edges), params.w_edges, params.b_edges)
    z_t = linear(T.as_tensor(m_time), params.w_time, params.b_time)
    z_c = linear(T.as_tensor(m_cooc), params.w_cooc, params.b_cooc)
    return T.concat([z_n, z_e, z_t, z_c], axis=-1)


@dataclass
class PairSequence:
    """Row-aligned pair input: patch j of u's history beside patch j of v's."""

    z: Tensor                 # (..., l, 8d)
    row_valid: np.ndarray     # (..., l) true where either side has data
    left_valid: np.ndarray    # (..., l)
    right_valid: np.ndarray   # (..., l)


def pair_concat(z_u: Tensor, z_v: Tensor, valid_u: np.ndarray,
                valid_v: np.ndarray) -> PairSequence:
    """Horizontal join of the two sides; the shorter one is zero-padded."""
    if z_u.shape[-1] != z_v.shape[-1]:
        raise T.ShapeError(
            f"pair_concat: width mismatch {z_u.shape[-1]} vs {z_v.shape[-1]}"
        )
    rows = max(z_u.shape[-2], z_v.shape[-2])

    def grow(z: Tensor, valid: np.ndarray):
        short = rows - z.shape[-2]
        if short == 0:
            return z, np.asarray(valid, dtype=bool)
        z = T.concat([z, Tensor(np.zeros(z.shape[:-2] + (short, z.shape[-1])))], axis=-2)
        pad = np.zeros(valid.shape[:-1] + (short,), dtype=bool)
        return z, np.concatenate([np.asarray(valid, dtype=bool), pad], axis=-1)

    z_u, valid_u = grow(z_u, valid_u)
    z_v, valid_v = grow(z_v, valid_v)
    return PairSequence(z=T.concat([z_u, z_v], axis=-1),
                        row_valid=valid_u | valid_v,
                        left_valid=valid_u, right_valid=valid_v)
