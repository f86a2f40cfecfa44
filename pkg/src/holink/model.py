"""The full link-prediction model and its training loop.

A query (u, v, t) flows through: higher-order neighborhood extraction for
both endpoints, the four feature encodings, patch/align/concat into a
width-8d row-aligned pair sequence, the block-recurrent encoder, pooling to
two d_out vectors, and a sigmoid MLP decoder. A whole mini-batch of queries
runs through one computation graph (all tensor ops carry a leading batch
axis), so training cost is dominated by a few hundred numpy calls per batch.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import brt, tensor as T
from .data import EventStream, TemporalAdjacencyIndex, build_index, concat_streams
from .encoder import (AlignParams, CooccurrenceProjector, HOP_MARK_WIDTH,
                      TimeEncoderParams, align_concat, encode_time,
                      gather_node_edge_features, init_time_frequencies,
                      pair_concat, patch, patch_validity, project_cooccurrence)
from .nn import (Adam, ParameterStore, add_geglu, add_linear, dropout, linear,
                 load_checkpoint, save_checkpoint, uniform_init)
from .sampler import (SamplerConfig, cooccurrence_counts, extract_neighborhood,
                      pad_neighborhood)
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    """Every knob of the model and its training recipe (defaults = paper-scale)."""

    d: int = 50                 # aligned encoding width; model width is 8*d
    d_time: int = 100           # number of trainable time frequencies
    d_cooc: int = 50            # co-occurrence encoding width
    d_out: int = 172            # pooled node representation width
    heads: int = 4
    block_size: int = 16
    segment_size: int = 32
    state_count: int = 32
    seq_len: int = 256          # per-side interaction list length (padded)
    patch_size: int = 8
    s1: int = 32
    s2: int = 1
    dropout: float = 0.1
    learning_rate: float = 1e-4
    batch_size: int = 100
    epochs: int = 50
    patience: int = 2
    geglu_expansion: int = 2
    layer_norm_eps: float = 1e-5
    xpos_scale_base: float = 512.0
    seed: int = 0

    def __post_init__(self):
        if self.seq_len % self.patch_size != 0:
            raise ValueError("seq_len must be a multiple of patch_size")
        if self.s1 < 1 or self.s2 < 0:
            raise ValueError("budgets: s1 >= 1 and s2 >= 0 required")

    @property
    def width(self) -> int:
        return 8 * self.d

    @property
    def rows(self) -> int:
        return self.seq_len // self.patch_size

    def sampler_config(self) -> SamplerConfig:
        budgets = (self.s1,) if self.s2 == 0 else (self.s1, self.s2)
        return SamplerConfig(s_budgets=budgets, seq_cap=self.seq_len)

    def brt_config(self) -> brt.BRTConfig:
        return brt.BRTConfig(width=self.width, block_size=self.block_size,
                             segment_size=self.segment_size,
                             state_count=self.state_count, heads=self.heads,
                             xpos_scale_base=self.xpos_scale_base)


@dataclass
class HistoryView:
    """The event context a prediction is allowed to look at (strictly < t)."""

    stream: EventStream
    index: TemporalAdjacencyIndex

    @staticmethod
    def from_stream(stream: EventStream) -> "HistoryView":
        return HistoryView(stream, build_index(stream))


class LinkPredictor:
    """Sampler -> encoder -> block-recurrent attention -> decoder."""

    def __init__(self, config: ModelConfig, d_node: int, d_edge: int):
        self.config = config
        self.d_node = d_node
        self.d_edge = d_edge
        self.store = ParameterStore()
        rng = np.random.default_rng(config.seed)
        cfg, store = config, self.store

        self.time_params = TimeEncoderParams(
            store.add("time.frequencies", init_time_frequencies(cfg.d_time)))

        hidden = cfg.d_cooc
        self.cooc_proj = CooccurrenceProjector(
            *add_linear(store, "cooc.own.hidden", 1, hidden, rng),
            *add_linear(store, "cooc.own.out", hidden, cfg.d_cooc, rng),
            *add_linear(store, "cooc.other.hidden", 1, hidden, rng),
            *add_linear(store, "cooc.other.out", hidden, cfg.d_cooc, rng),
        )

        p = cfg.patch_size
        if d_edge > 0:
            w_edges, b_edges = add_linear(store, "align.edges", p * d_edge, cfg.d, rng)
        else:  # featureless edges: zero-width weight, the bias still trains
            w_edges = store.add("align.edges.weight", np.zeros((0, cfg.d)))
            b_edges = store.add("align.edges.bias", np.zeros(cfg.d))
        self.align = AlignParams(
            *add_linear(store, "align.nodes", p * (d_node + HOP_MARK_WIDTH), cfg.d, rng),
            w_edges, b_edges,
            *add_linear(store, "align.time", p * 2 * cfg.d_time, cfg.d, rng),
            *add_linear(store, "align.cooc", p * cfg.d_cooc, cfg.d, rng),
        )

        width = cfg.width
        proj = cfg.heads * (width // cfg.heads)

        def mat(name, fan_in, shape):
            return store.add(name, uniform_init(rng, fan_in, shape))

        self.cell = brt.CellParams(
            w_p=mat("brt.state_pos", width, (cfg.state_count, width)),
            ln_state_h_gain=store.add("brt.ln_state_h.gain", np.ones(width)),
            ln_state_h_bias=store.add("brt.ln_state_h.bias", np.zeros(width)),
            ln_state_v_gain=store.add("brt.ln_state_v.gain", np.ones(width)),
            ln_state_v_bias=store.add("brt.ln_state_v.bias", np.zeros(width)),
            ln_z_gain=store.add("brt.ln_z.gain", np.ones(width)),
            ln_z_bias=store.add("brt.ln_z.bias", np.zeros(width)),
            w_q1=mat("brt.w_q1", width, (width, proj)),
            w_kc=mat("brt.w_kc", width, (width, proj)),
            w_vc=mat("brt.w_vc", width, (width, proj)),
            w_q2=mat("brt.w_q2", width, (width, proj)),
            w_h=mat("brt.w_h", 2 * proj, (2 * proj, width)),
            b_h=store.add("brt.b_h", np.zeros(width)),
            b_g=store.add("brt.b_g", np.ones(width)),  # starts state-preserving
            w_q3=mat("brt.w_q3", width, (width, proj)),
            w_q4=mat("brt.w_q4", width, (width, proj)),
            w_v=mat("brt.w_v", 2 * proj, (2 * proj, width)),
            b_v=store.add("brt.b_v", np.zeros(width)),
            w_kz=mat("brt.w_kz", width, (width, proj)),
            w_vz=mat("brt.w_vz", width, (width, proj)),
            ffn=add_geglu(store, "brt.ffn", width, cfg.geglu_expansion, rng),
            eps=cfg.layer_norm_eps,
        )
        self.w_out, self.b_out = add_linear(store, "pool.out", width // 2, cfg.d_out, rng)
        self.dec_w1, self.dec_b1 = add_linear(store, "decoder.hidden", 2 * cfg.d_out, cfg.d_out, rng)
        self.dec_w2, self.dec_b2 = add_linear(store, "decoder.out", cfg.d_out, 1, rng)

    # ------------------------------------------------------------------
    # forward
    # ------------------------------------------------------------------

    def _sample_side(self, index: TemporalAdjacencyIndex, nodes: np.ndarray,
                     ts: np.ndarray, allow_unknown: bool):
        cfg = self.config
        sampler_cfg = cfg.sampler_config()
        n, cap = len(nodes), cfg.seq_len
        neighbors = np.zeros((n, cap), dtype=np.int64)
        times = np.zeros((n, cap))
        event_ids = np.full((n, cap), -1, dtype=np.int64)
        hops = np.zeros((n, cap), dtype=np.int64)
        valid = np.zeros((n, cap), dtype=bool)
        for i, (node, t) in enumerate(zip(nodes, ts)):
            node = int(node)
            if node > index.num_nodes or node < 1:
                if allow_unknown:
                    continue  # fresh node: empty history
                raise KeyError(f"node {node} unseen by this history (transductive mode)")
            padded = pad_neighborhood(
                extract_neighborhood(index, node, float(t), sampler_cfg), cap)
            neighbors[i] = padded.neighbors
            times[i] = padded.times
            event_ids[i] = padded.event_ids
            hops[i] = padded.hops
            valid[i] = padded.valid
        return neighbors, times, event_ids, hops, valid

    def _encode_side(self, side, counts: np.ndarray, ts: np.ndarray,
                     history: HistoryView, training: bool,
                     rng: np.random.Generator | None):
        cfg = self.config
        neighbors, times, event_ids, hops, valid = side
        x_nodes, x_edges = gather_node_edge_features(
            neighbors, hops, event_ids, history.stream.node_features,
            history.stream.edge_features)
        delta = np.where(valid, ts[:, None] - times, 0.0)
        x_time = encode_time(delta, self.time_params, valid)
        x_cooc = project_cooccurrence(counts, self.cooc_proj, valid)

        p = cfg.patch_size
        z = align_concat(patch(x_nodes, p), patch(x_edges, p),
                         patch(x_time, p), patch(x_cooc, p), self.align)
        if training and cfg.dropout > 0:
            z = dropout(z, cfg.dropout, rng, training)
        return z, patch_validity(valid, p)

    def score_batch(self, src: np.ndarray, dst: np.ndarray, ts: np.ndarray,
                    history: HistoryView, training: bool = False,
                    rng: np.random.Generator | None = None,
                    allow_unknown: bool = False,
                    stats: brt.AttentionStats | None = None) -> Tensor:
        """Probabilities for a batch of (src, dst, t) queries; (n,) tensor."""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        ts = np.asarray(ts, dtype=np.float64)
        side_u = self._sample_side(history.index, src, ts, allow_unknown)
        side_v = self._sample_side(history.index, dst, ts, allow_unknown)

        n = len(src)
        counts_u = np.zeros((n, self.config.seq_len, 2))
        counts_v = np.zeros((n, self.config.seq_len, 2))
        for i in range(n):
            c_u, c_v = cooccurrence_counts(side_u[0][i], side_v[0][i])
            counts_u[i] = c_u
            counts_v[i] = c_v

        z_u, valid_u = self._encode_side(side_u, counts_u, ts, history, training, rng)
        z_v, valid_v = self._encode_side(side_v, counts_v, ts, history, training, rng)
        pair = pair_concat(z_u, z_v, valid_u, valid_v)

        row_valid = pair.row_valid.copy()
        dead = ~row_valid.any(axis=-1)
        row_valid[dead] = True  # fully padded query: zero rows become the input

        drop = None
        if training and self.config.dropout > 0:
            drop = (self.config.dropout, rng, True)
        h = brt.run_brt(pair.z, row_valid, self.config.brt_config(), self.cell,
                        stats=stats, drop=drop)
        h_u, h_v = brt.pool(h, row_valid, self.w_out, self.b_out)
        hidden = T.relu(linear(T.concat([h_u, h_v], axis=-1), self.dec_w1, self.dec_b1))
        logits = linear(hidden, self.dec_w2, self.dec_b2)
        return T.sigmoid(T.reshape(logits, (n,)))

    def score_pairs(self, src, dst, ts, history: HistoryView,
                    allow_unknown: bool = False) -> np.ndarray:
        """Evaluation-mode scores as a plain array (no dropout, no graph)."""
        return self.score_batch(src, dst, ts, history,
                                allow_unknown=allow_unknown).values

    def forward_pair(self, u: int, v: int, t: float, history: HistoryView,
                     allow_unknown: bool = False) -> float:
        """Probability that (u, v) interact at time t given history before t."""
        return float(self.score_pairs(np.array([u]), np.array([v]),
                                      np.array([t]), history,
                                      allow_unknown=allow_unknown)[0])

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def save(self, path, extra: dict | None = None):
        config = asdict(self.config)
        config["d_node"] = self.d_node
        config["d_edge"] = self.d_edge
        save_checkpoint(path, self.store.state(), config, extra)

    @staticmethod
    def load(path) -> tuple["LinkPredictor", dict]:
        params, config, extra = load_checkpoint(path)
        d_node = config.pop("d_node")
        d_edge = config.pop("d_edge")
        model = LinkPredictor(ModelConfig(**config), d_node, d_edge)
        model.store.load_state(params)
        return model, extra


def bce_loss(pos_probs: Tensor, neg_probs: Tensor) -> Tensor:
    """Mean of -log p over positives and -log(1-p) over negatives.

    Probabilities are clamped to [1e-7, 1-1e-7] before the logs.
    """
    if pos_probs.values.shape != neg_probs.values.shape:
        raise ValueError(
            f"bce_loss needs equally many positives and negatives, got "
            f"{pos_probs.values.shape} vs {neg_probs.values.shape}"
        )
    eps = 1e-7
    terms = T.concat([T.log(T.clip(pos_probs, eps, 1.0 - eps)),
                      T.log(T.sub(Tensor(1.0), T.clip(neg_probs, eps, 1.0 - eps)))],
                     axis=0)
    return T.neg(T.tmean(terms))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    val_ap: float
    val_auc: float
    elapsed_s: float

    def line(self) -> str:
        return (f"{self.epoch},{self.train_loss:.6f},{self.val_ap:.6f},"
                f"{self.val_auc:.6f},{self.elapsed_s:.2f}")


@dataclass
class TrainResult:
    model: LinkPredictor
    best_epoch: int
    best_val_ap: float
    history: list[EpochRow] = field(default_factory=list)


def train(model: LinkPredictor, train_stream: EventStream,
          val_stream: EventStream, log_path=None, quiet: bool = True,
          max_epochs: int | None = None) -> TrainResult:
    """Chronological mini-batch training with early stopping on val AP.

    Batches walk the train split in order (100 positives each by default),
    every positive paired with one random negative. The returned model
    carries the best-validation parameters.
    """
    from .evaluation import NegativeEdgeSampler, SamplingContext, evaluate

    cfg = model.config
    if len(train_stream) == 0:
        raise ValueError("empty train split")
    epochs = cfg.epochs if max_epochs is None else min(cfg.epochs, max_epochs)
    train_history = HistoryView.from_stream(train_stream)
    val_history = HistoryView.from_stream(concat_streams(train_stream, val_stream))
    optimizer = Adam(model.store, lr=cfg.learning_rate)

    n_train = len(train_stream)
    starts = range(0, n_train, cfg.batch_size)
    best_ap, best_epoch, best_state = -1.0, -1, model.store.state()
    stall = 0
    rows: list[EpochRow] = []
    log_lines = ["epoch,train_loss,val_ap,val_auc,elapsed_s"]
    t0 = time.perf_counter()

    for epoch in range(epochs):
        losses = []
        sampler = NegativeEdgeSampler("random", seed=[cfg.seed, 1, epoch])
        context = SamplingContext.from_streams(train_stream)
        for b, lo in enumerate(starts):
            hi = min(lo + cfg.batch_size, n_train)
            pos_src = train_stream.sources[lo:hi]
            pos_dst = train_stream.destinations[lo:hi]
            pos_ts = train_stream.timestamps[lo:hi]
            neg_src, neg_dst, _ = sampler.sample_batch(pos_src, pos_dst, pos_ts, context)
            drop_rng = np.random.default_rng([cfg.seed, 2, epoch, b])
            probs = model.score_batch(np.concatenate([pos_src, neg_src]),
                                      np.concatenate([pos_dst, neg_dst]),
                                      np.concatenate([pos_ts, pos_ts]),
                                      train_history, training=True, rng=drop_rng)
            n_pos = hi - lo
            loss = bce_loss(T.slice_axis(probs, 0, 0, n_pos),
                            T.slice_axis(probs, 0, n_pos, 2 * n_pos))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())

        report = evaluate(model, val_stream, train_stream, setting="transductive",
                          kinds=("random",), seed=cfg.seed + 1000,
                          batch_size=cfg.batch_size,
                          prebuilt_history=val_history)
        val_ap, val_auc = report.rows[0].ap, report.rows[0].auc
        row = EpochRow(epoch, float(np.mean(losses)), val_ap, val_auc,
                       time.perf_counter() - t0)
        rows.append(row)
        log_lines.append(row.line())
        if not quiet:
            print(row.line(), flush=True)

        if val_ap > best_ap:
            best_ap, best_epoch, stall = val_ap, epoch, 0
            best_state = model.store.state()
        else:
            stall += 1
            if stall > cfg.patience:
                break

    model.store.load_state(best_state)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(log_lines) + "\n")
    return TrainResult(model=model, best_epoch=best_epoch, best_val_ap=best_ap,
                       history=rows)


def toy_config(**overrides) -> ModelConfig:
    """Small dimensions for tests and gradient checks."""
    base = dict(d=4, d_time=4, d_cooc=4, d_out=8, heads=2, block_size=2,
                segment_size=4, state_count=4, seq_len=8, patch_size=2,
                s1=4, s2=1, dropout=0.0, batch_size=16, epochs=5, patience=2,
                learning_rate=1e-3, seed=0)
    base.update(overrides)
    return ModelConfig(**base)
