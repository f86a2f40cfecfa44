"""Block-recurrent encoder: windowed attention plus gated state vectors.

The width-8d pair sequence is processed block by block. Each block passes
through one horizontal cell (updates the recurrent state vectors from
state self-attention and state-over-block cross-attention, through a fixed
sigmoid gate) and one vertical cell (block self-attention over the current
and previous block's keys/values with extrapolatable position embeddings,
cross-attention onto the fresh states, then a GELU-gated feed-forward with
two residuals). Keys/values of a block are computed once, reused by both
cells, and cached for the next block, so no attention matrix ever grows
beyond max(states, B) x (2B + states).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import GegluParams, dropout, geglu_ffn, linear
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class BRTConfig:
    """Block/segment geometry and attention head layout for width-8d input."""

    width: int
    block_size: int = 16
    segment_size: int = 32
    state_count: int = 32
    heads: int = 4
    xpos_scale_base: float = 512.0

    def __post_init__(self):
        if self.segment_size % self.block_size != 0:
            raise ValueError("segment size must be a multiple of the block size")
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} not divisible by {self.heads} heads")
        if (self.width // self.heads) % 2 != 0:
            raise ValueError("per-head dimension must be even for rotary pairing")

    @property
    def head_dim(self) -> int:
        return self.width // self.heads


class AttentionStats:
    """Records every attention matrix shape for memory instrumentation."""

    def __init__(self):
        self.shapes: list[tuple[int, int]] = []

    def record(self, rows: int, cols: int):
        self.shapes.append((int(rows), int(cols)))

    @property
    def max_rows(self) -> int:
        return max((r for r, _ in self.shapes), default=0)

    @property
    def max_cols(self) -> int:
        return max((c for _, c in self.shapes), default=0)

    @property
    def max_entries(self) -> int:
        return max((r * c for r, c in self.shapes), default=0)


def _attention_softmax(logits: Tensor, key_mask: np.ndarray | None) -> Tensor:
    """Softmax over keys; masked keys get exactly zero weight.

    Uses a multiplicative mask with a tiny denominator floor so a row whose
    keys are all masked yields a zero vector instead of NaN; unmasked rows
    are unaffected beyond ~1e-30 relative.
    """
    if key_mask is None:
        return T.softmax_rows(logits)
    maskf = np.asarray(key_mask, dtype=np.float64)[..., None, :]
    vals = np.where(maskf > 0, logits.values, -np.inf)
    shift = np.max(vals, axis=-1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    weights = T.mul(T.exp(T.sub(logits, Tensor(shift))), Tensor(maskf))
    return T.div(weights, T.add(T.tsum(weights, axis=-1, keepdims=True), Tensor(1e-30)))


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                         key_mask: np.ndarray | None = None,
                         stats: AttentionStats | None = None) -> Tensor:
    """Per-head softmax(q k^T / sqrt(d_k)) v on pre-projected inputs.

    Head h reads columns [h*d_k, (h+1)*d_k) of q/k and the matching value
    slice; head outputs are concatenated. Any output projection is the
    caller's job (the cells fold it into their own weight matrices).
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: query width {q.shape[-1]} != key width {k.shape[-1]}")
    if q.shape[-1] % heads or v.shape[-1] % heads:
        raise ShapeError(
            f"attention: widths {q.shape[-1]}/{v.shape[-1]} not divisible by {heads} heads"
        )
    d_k = q.shape[-1] // heads
    d_v = v.shape[-1] // heads
    scale = 1.0 / np.sqrt(d_k)
    outputs = []
    for h in range(heads):
        q_h = T.slice_axis(q, -1, h * d_k, (h + 1) * d_k)
        k_h = T.slice_axis(k, -1, h * d_k, (h + 1) * d_k)
        v_h = T.slice_axis(v, -1, h * d_v, (h + 1) * d_v)
        logits = T.mul(T.matmul(q_h, T.transpose(k_h)), Tensor(scale))
        if stats is not None:
            stats.record(logits.shape[-2], logits.shape[-1])
        outputs.append(T.matmul(_attention_softmax(logits, key_mask), v_h))
    return T.concat(outputs, axis=-1)


# ---------------------------------------------------------------------------
# extrapolatable position transform (rotary pairs + exponential length scale)
# ---------------------------------------------------------------------------


def _xpos_tables(positions: np.ndarray, head_dim: int, scale_base: float,
                 sign: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    half = head_dim // 2
    inv_freq = 10000.0 ** (-np.arange(half) / half)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq
    cos_t = np.concatenate([np.cos(angles), np.cos(angles)], axis=-1)
    sin_t = np.concatenate([np.sin(angles), np.sin(angles)], axis=-1)
    zeta = (np.arange(half) / half + 0.4) / 1.4
    scale = zeta[None, :] ** (sign * np.asarray(positions, dtype=np.float64)[:, None]
                              / scale_base)
    scale = np.concatenate([scale, scale], axis=-1)
    return cos_t, sin_t, scale


def _apply_xpos(x: Tensor, positions: np.ndarray, heads: int,
                scale_base: float, sign: float) -> Tensor:
    """Rotate each head's pairs by position and apply the length scale.

    sign is +1 for queries and -1 for keys, so dot products depend only on
    position differences.
    """
    head_dim = x.shape[-1] // heads
    half = head_dim // 2
    cos_t, sin_t, scale = _xpos_tables(positions, head_dim, scale_base, sign)
    cos_t = Tensor(cos_t * scale)
    sin_t = Tensor(sin_t * scale)
    parts = []
    for h in range(heads):
        x_h = T.slice_axis(x, -1, h * head_dim, (h + 1) * head_dim)
        a = T.slice_axis(x_h, -1, 0, half)
        b = T.slice_axis(x_h, -1, half, head_dim)
        rotated = T.concat([T.neg(b), a], axis=-1)
        parts.append(T.add(T.mul(x_h, cos_t), T.mul(rotated, sin_t)))
    return T.concat(parts, axis=-1)


def xpos_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                   q_positions: np.ndarray, k_positions: np.ndarray,
                   scale_base: float = 512.0,
                   key_mask: np.ndarray | None = None,
                   stats: AttentionStats | None = None) -> Tensor:
    """Multi-head attention with the relative position transform on q and k."""
    if len(k_positions) != k.shape[-2] or len(q_positions) != q.shape[-2]:
        raise ShapeError("xpos_attention: positions must cover all query/key rows")
    q = _apply_xpos(q, q_positions, heads, scale_base, +1.0)
    k = _apply_xpos(k, k_positions, heads, scale_base, -1.0)
    return multi_head_attention(q, k, v, heads, key_mask=key_mask, stats=stats)


# ---------------------------------------------------------------------------
# recurrent cells
# ---------------------------------------------------------------------------


@dataclass
class RecurrentState:
    """Block-level state vectors; zero-initialized at sequence start."""

    c: Tensor

    @staticmethod
    def initial(cfg: BRTConfig) -> "RecurrentState":
        return RecurrentState(Tensor(np.zeros((cfg.state_count, cfg.width))))


@dataclass
class KVCache:
    """Previous block's keys/values plus their validity and row positions."""

    k: Tensor
    v: Tensor
    valid: np.ndarray
    positions: np.ndarray


@dataclass
class CellParams:
    """All weights of the horizontal + vertical cell pair."""

    w_p: Tensor                      # learned state position embeddings
    ln_state_h_gain: Tensor
    ln_state_h_bias: Tensor
    ln_state_v_gain: Tensor
    ln_state_v_bias: Tensor
    ln_z_gain: Tensor
    ln_z_bias: Tensor
    w_q1: Tensor                     # state self-attention queries
    w_kc: Tensor                     # state keys (shared between cells)
    w_vc: Tensor                     # state values (shared between cells)
    w_q2: Tensor                     # state-over-block queries
    w_h: Tensor
    b_h: Tensor
    b_g: Tensor                      # fixed-gate bias
    w_q3: Tensor                     # block self-attention queries (rotary)
    w_q4: Tensor                     # block-over-state queries
    w_v: Tensor
    b_v: Tensor
    w_kz: Tensor                     # block keys (cached across blocks)
    w_vz: Tensor                     # block values
    ffn: GegluParams
    eps: float = 1e-5


def _norm_z(z_block: Tensor, params: CellParams) -> Tensor:
    return T.layer_norm(z_block, params.ln_z_gain, params.ln_z_bias, params.eps)


def _with_cache(k_b: Tensor, v_b: Tensor, block_valid: np.ndarray | None,
                positions: np.ndarray, cache: KVCache | None):
    """[K_{b-1}; K_b] etc.; the concatenation is skipped for the first block."""
    if cache is None:
        return k_b, v_b, block_valid, positions
    keys = T.concat([cache.k, k_b], axis=-2)
    values = T.concat([cache.v, v_b], axis=-2)
    if block_valid is None or cache.valid is None:
        valid = None
    else:
        valid = np.concatenate([cache.valid, block_valid], axis=-1)
    return keys, values, valid, np.concatenate([cache.positions, positions])


def horizontal_cell(state: RecurrentState, z_block: Tensor, cache: KVCache | None,
                    params: CellParams, cfg: BRTConfig,
                    block_valid: np.ndarray | None = None,
                    stats: AttentionStats | None = None,
                    block_positions: np.ndarray | None = None,
                    drop: tuple | None = None):
    """One state update; returns (next state, K_b, V_b) with K/V reusable."""
    c = state.c
    c_n = T.add(T.layer_norm(c, params.ln_state_h_gain, params.ln_state_h_bias,
                             params.eps), params.w_p)
    z_n = _norm_z(z_block, params)
    k_b = T.matmul(z_n, params.w_kz)
    v_b = T.matmul(z_n, params.w_vz)

    a1 = multi_head_attention(T.matmul(c_n, params.w_q1),
                              T.matmul(c_n, params.w_kc),
                              T.matmul(c_n, params.w_vc),
                              cfg.heads, stats=stats)
    if block_positions is None:
        block_positions = np.arange(z_block.shape[-2])
    keys, values, key_valid, _ = _with_cache(k_b, v_b, block_valid,
                                             block_positions, cache)
    a2 = multi_head_attention(T.matmul(c_n, params.w_q2), keys, values,
                              cfg.heads, key_mask=key_valid, stats=stats)
    p_h = linear(T.concat([a1, a2], axis=-1), params.w_h, params.b_h)
    if drop is not None:
        p_h = dropout(p_h, *drop)
    gate = T.sigmoid(params.b_g)
    next_c = T.add(T.mul(c, gate), T.mul(p_h, T.sub(Tensor(1.0), gate)))
    return RecurrentState(next_c), k_b, v_b


def vertical_cell(z_block: Tensor, state: RecurrentState, cache: KVCache | None,
                  k_b: Tensor, v_b: Tensor, params: CellParams, cfg: BRTConfig,
                  block_positions: np.ndarray,
                  block_valid: np.ndarray | None = None,
                  stats: AttentionStats | None = None,
                  drop: tuple | None = None) -> Tensor:
    """Block output O_b: rotary self-attention + state cross-attention + FFN."""
    n_n = T.add(T.layer_norm(state.c, params.ln_state_v_gain,
                             params.ln_state_v_bias, params.eps), params.w_p)
    z_n = _norm_z(z_block, params)
    keys, values, key_valid, key_positions = _with_cache(
        k_b, v_b, block_valid, block_positions, cache)
    a3 = xpos_attention(T.matmul(z_n, params.w_q3), keys, values, cfg.heads,
                        q_positions=block_positions, k_positions=key_positions,
                        scale_base=cfg.xpos_scale_base, key_mask=key_valid,
                        stats=stats)
    a4 = multi_head_attention(T.matmul(z_n, params.w_q4),
                              T.matmul(n_n, params.w_kc),
                              T.matmul(n_n, params.w_vc),
                              cfg.heads, stats=stats)
    p_v = linear(T.concat([a3, a4], axis=-1), params.w_v, params.b_v)
    if drop is not None:
        p_v = dropout(p_v, *drop)
    inner = T.add(p_v, z_block)
    return T.add(geglu_ffn(inner, params.ffn), inner)


def run_brt(z: Tensor, row_valid: np.ndarray | None, cfg: BRTConfig,
            params: CellParams, stats: AttentionStats | None = None,
            recompute_cache: bool = False, drop: tuple | None = None) -> Tensor:
    """Process (..., L, width) block by block; output has the input's shape.

    The KV cache is threaded from each block to the next (also across
    segment boundaries). With recompute_cache=True the previous block's
    keys/values are derived from scratch at every step instead of read from
    the cache; outputs must be identical, which the tests assert.
    """
    length = z.shape[-2]
    if z.shape[-1] != cfg.width:
        raise ShapeError(f"run_brt: input width {z.shape[-1]} != configured {cfg.width}")
    state = RecurrentState.initial(cfg)
    cache: KVCache | None = None
    outputs = []
    n_blocks = -(-length // cfg.block_size)
    for b in range(n_blocks):
        lo = b * cfg.block_size
        hi = min(lo + cfg.block_size, length)
        z_block = T.slice_axis(z, -2, lo, hi)
        block_valid = None if row_valid is None else row_valid[..., lo:hi]
        positions = np.arange(lo, hi)
        if recompute_cache and b > 0:
            prev_lo = (b - 1) * cfg.block_size
            prev_zn = _norm_z(T.slice_axis(z, -2, prev_lo, lo), params)
            cache = KVCache(T.matmul(prev_zn, params.w_kz),
                            T.matmul(prev_zn, params.w_vz),
                            None if row_valid is None else row_valid[..., prev_lo:lo],
                            np.arange(prev_lo, lo))
        state, k_b, v_b = horizontal_cell(state, z_block, cache, params, cfg,
                                          block_valid=block_valid, stats=stats,
                                          block_positions=positions, drop=drop)
        o_b = vertical_cell(z_block, state, cache, k_b, v_b, params, cfg,
                            block_positions=positions, block_valid=block_valid,
                            stats=stats, drop=drop)
        outputs.append(o_b)
        cache = KVCache(k_b, v_b, block_valid, positions)
    h = outputs[0] if len(outputs) == 1 else T.concat(outputs, axis=-2)
    if row_valid is not None:
        h = T.mul(h, Tensor(np.asarray(row_valid, dtype=np.float64)[..., None]))
    return h


def pool(h: Tensor, row_valid: np.ndarray | None, w_out: Tensor,
         b_out: Tensor) -> tuple[Tensor, Tensor]:
    """Column-block means over unmasked rows, shared output affine.

    The left half of each row encodes one endpoint's patches, the right half
    the other's; each is averaged over valid rows and mapped to d_out.
    """
    length, width = h.shape[-2], h.shape[-1]
    half = width // 2
    if row_valid is None:
        weights = np.full(h.shape[:-2] + (length,), 1.0 / length)
    else:
        valid = np.asarray(row_valid, dtype=np.float64)
        counts = valid.sum(axis=-1, keepdims=True)
        if (counts == 0).any():
            raise ValueError("pool: every row is masked")
        weights = valid / counts
    w_row = Tensor(weights[..., None, :])
    out = []
    for lo, hi in ((0, half), (half, width)):
        mean = T.matmul(w_row, T.slice_axis(h, -1, lo, hi))
        mapped = linear(mean, w_out, b_out)
        out.append(T.reshape(mapped, mapped.shape[:-2] + (mapped.shape[-1],)))
    return out[0], out[1]
