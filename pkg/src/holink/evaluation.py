"""Negative-edge samplers, ranking metrics, and the evaluation protocols.

Three negative sampling strategies, all returning one negative per positive:

* random: keep the source, redraw the destination among nodes seen so far.
* historical: draw a previously observed (src, dst) pair that does not occur
  at the query timestamp; sampled without replacement within a batch.
* inductive: like historical, but restricted to pairs never seen during
  training (new edges). Both fall back to random sampling when their pool is
  exhausted, and the fallback count is reported.

"Seen so far" is maintained per query, strictly before its timestamp, over
the training stream plus the evaluation prefix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data import EventStream, concat_streams
from .model import HistoryView

SAMPLER_KINDS = ("random", "historical", "inductive")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def average_precision(scores, labels) -> float:
    """Area under the precision-recall step curve over score thresholds.

    Thresholds sit at each distinct score, descending; recall starts at 0.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise ValueError("average_precision needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels == 1)
    # last index of every tie group = one threshold per distinct score
    boundary = np.nonzero(np.diff(sorted_scores))[0]
    ends = np.concatenate([boundary, [len(scores) - 1]])
    precision = tp[ends] / (ends + 1)
    recall = tp[ends] / n_pos
    return float(np.sum(np.diff(np.concatenate([[0.0], recall])) * precision))


def auc_roc(scores, labels) -> float:
    """(concordant pairs + 0.5 * ties) / (positives * negatives)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels != 1).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc_roc needs both classes present")
    ranks = rankdata(scores, method="average")
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# sampling context (incremental "seen so far" state)
# ---------------------------------------------------------------------------


class SamplingContext:
    """Walks a time-sorted stream, exposing what exists strictly before t."""

    def __init__(self, stream: EventStream, train_edges: frozenset | None = None):
        self.stream = stream
        self.train_edges = train_edges if train_edges is not None else frozenset()
        self._cursor = 0
        self.nodes_seen: list[int] = []
        self._node_flags = np.zeros(stream.num_nodes + 1, dtype=bool)
        self.edges_seen: set[tuple[int, int]] = set()
        self.edge_list: list[tuple[int, int]] = []
        self.new_edge_list: list[tuple[int, int]] = []   # unseen in training
        self.new_edge_set: set[tuple[int, int]] = set()
        self._events_at: dict[float, set[tuple[int, int]]] = {}
        for s, d, t in zip(stream.sources, stream.destinations, stream.timestamps):
            self._events_at.setdefault(float(t), set()).add((int(s), int(d)))

    @staticmethod
    def from_streams(*streams: EventStream,
                     train_edges: frozenset | None = None) -> "SamplingContext":
        stream = streams[0] if len(streams) == 1 else concat_streams(*streams)
        return SamplingContext(stream, train_edges)

    def advance_to(self, t: float):
        """Ingest every event with timestamp strictly below t."""
        ts = self.stream.timestamps
        while self._cursor < len(self.stream) and ts[self._cursor] < t:
            i = self._cursor
            edge = (int(self.stream.sources[i]), int(self.stream.destinations[i]))
            for node in edge:
                if not self._node_flags[node]:
                    self._node_flags[node] = True
                    self.nodes_seen.append(node)
            if edge not in self.edges_seen:
                self.edges_seen.add(edge)
                self.edge_list.append(edge)
                if edge not in self.train_edges and edge not in self.new_edge_set:
                    self.new_edge_set.add(edge)
                    self.new_edge_list.append(edge)
            self._cursor += 1

    def edges_at(self, t: float) -> set[tuple[int, int]]:
        return self._events_at.get(float(t), set())


class NegativeEdgeSampler:
    """One negative edge per positive, per the configured strategy."""

    def __init__(self, kind: str, seed):
        if kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {kind!r}; choose from {SAMPLER_KINDS}")
        self.kind = kind
        self._seed = seed
        self._batch_index = 0

    def sample_batch(self, pos_src, pos_dst, pos_ts,
                     context: SamplingContext) -> tuple[np.ndarray, np.ndarray, int]:
        """Negatives aligned with the positives; returns (src, dst, n_fallback).

        Historical/inductive negatives are drawn without replacement within
        the batch; per-batch RNG streams derive from the master seed so
        results do not depend on batch scheduling.
        """
        rng = np.random.default_rng([*np.atleast_1d(self._seed), self._batch_index])
        self._batch_index += 1
        neg_src = np.zeros(len(pos_src), dtype=np.int64)
        neg_dst = np.zeros(len(pos_src), dtype=np.int64)
        used: set[tuple[int, int]] = set()
        fallback = 0
        for i, (u, v, t) in enumerate(zip(pos_src, pos_dst, pos_ts)):
            u, v, t = int(u), int(v), float(t)
            context.advance_to(t)
            edge = None
            if self.kind != "random":
                pool = context.edge_list if self.kind == "historical" else context.new_edge_list
                edge = self._draw_from_pool(pool, context.edges_at(t), used, rng)
                if edge is None:
                    fallback += 1
            if edge is None:
                edge = (u, self._random_destination(u, v, t, context, rng))
            used.add(edge)
            neg_src[i], neg_dst[i] = edge
        return neg_src, neg_dst, fallback

    @staticmethod
    def _draw_from_pool(pool, at_t, used, rng):
        if not pool:
            return None
        if len(pool) <= 1024:  # exact without-replacement sampling on small pools
            eligible = [e for e in pool if e not in at_t and e not in used]
            if not eligible:
                return None
            return eligible[int(rng.integers(len(eligible)))]
        for _ in range(200):
            edge = pool[int(rng.integers(len(pool)))]
            if edge not in at_t and edge not in used:
                return edge
        return None

    @staticmethod
    def _random_destination(u, v, t, context, rng):
        nodes = context.nodes_seen
        if len(nodes) <= 2:  # nothing (or only the endpoints) seen yet
            nodes = [n for n in range(1, context.stream.num_nodes + 1)
                     if n not in (u, v)] or [v]
        at_t = context.edges_at(t)
        candidate = v
        for _ in range(100):
            candidate = nodes[int(rng.integers(len(nodes)))]
            if candidate not in (u, v) and (u, candidate) not in at_t:
                return candidate
        for _ in range(100):  # dense-at-t corner: only exclude the endpoints
            candidate = nodes[int(rng.integers(len(nodes)))]
            if candidate not in (u, v):
                return candidate
        return candidate

    def reset(self):
        self._batch_index = 0


# ---------------------------------------------------------------------------
# evaluation protocols
# ---------------------------------------------------------------------------


@dataclass
class MetricRow:
    setting: str
    sampler: str
    ap: float
    auc: float
    n_pos: int
    n_fallback: int

    def line(self) -> str:
        return (f"{self.setting},{self.sampler},{self.ap:.6f},{self.auc:.6f},"
                f"{self.n_pos},{self.n_fallback}")


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)

    HEADER = "setting,sampler,ap,auc,n_pos,n_fallback"

    def to_csv_text(self) -> str:
        return "\n".join([self.HEADER] + [r.line() for r in self.rows]) + "\n"

    def to_table(self) -> str:
        widths = (12, 11, 8, 8, 7, 10)
        cols = ("setting", "sampler", "ap", "auc", "n_pos", "fallback")
        lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
        for r in self.rows:
            cells = (r.setting, r.sampler, f"{r.ap:.4f}", f"{r.auc:.4f}",
                     str(r.n_pos), str(r.n_fallback))
            lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
        return "\n".join(lines)


def evaluate(model, eval_stream: EventStream, history_stream: EventStream,
             setting: str = "transductive", kinds=SAMPLER_KINDS, seed: int = 0,
             batch_size: int = 100, inductive_nodes: np.ndarray | None = None,
             prebuilt_history: HistoryView | None = None,
             allow_unknown: bool | None = None) -> MetricReport:
    """Score one negative per positive per sampler kind; AP and AUC per kind.

    In the inductive setting only random negatives are reported (historical
    and inductive pools are equivalent-and-tiny there) and the positives are
    restricted to queries touching at least one held-out node.
    """
    if setting not in ("transductive", "inductive"):
        raise ValueError(f"unknown setting {setting!r}")
    if len(eval_stream) == 0:
        raise ValueError("empty evaluation split")

    if setting == "inductive":
        if inductive_nodes is None:
            raise ValueError("inductive evaluation needs the held-out node ids")
        kinds = ("random",)
        masked = np.zeros(eval_stream.num_nodes + 1, dtype=bool)
        masked[np.asarray(inductive_nodes, dtype=np.int64)] = True
        keep = masked[eval_stream.sources] | masked[eval_stream.destinations]
        eval_stream = eval_stream.select(keep)
        if len(eval_stream) == 0:
            raise ValueError("no evaluation events touch the held-out nodes")
        if allow_unknown is None:
            allow_unknown = True
    else:
        kinds = tuple(kinds)
        if allow_unknown is None:
            allow_unknown = False

    history = prebuilt_history or HistoryView.from_stream(
        concat_streams(history_stream, eval_stream))
    train_edges = frozenset(zip(history_stream.sources.tolist(),
                                history_stream.destinations.tolist()))
    contexts = {kind: SamplingContext.from_streams(history_stream, eval_stream,
                                                   train_edges=train_edges)
                for kind in kinds}
    samplers = {kind: NegativeEdgeSampler(kind, seed=[seed, k])
                for k, kind in enumerate(kinds)}
    scores = {kind: [] for kind in kinds}
    labels = {kind: [] for kind in kinds}
    fallbacks = dict.fromkeys(kinds, 0)

    n = len(eval_stream)
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        src = eval_stream.sources[lo:hi]
        dst = eval_stream.destinations[lo:hi]
        ts = eval_stream.timestamps[lo:hi]
        pos_scores = model.score_pairs(src, dst, ts, history,
                                       allow_unknown=allow_unknown)
        for kind in kinds:
            neg_src, neg_dst, fb = samplers[kind].sample_batch(
                src, dst, ts, contexts[kind])
            fallbacks[kind] += fb
            neg_scores = model.score_pairs(neg_src, neg_dst, ts, history,
                                           allow_unknown=allow_unknown)
            scores[kind].append(pos_scores)
            scores[kind].append(neg_scores)
            labels[kind].append(np.ones(hi - lo))
            labels[kind].append(np.zeros(hi - lo))

    report = MetricReport()
    for kind in kinds:
        s = np.concatenate(scores[kind])
        y = np.concatenate(labels[kind])
        report.rows.append(MetricRow(setting=setting, sampler=kind,
                                     ap=average_precision(s, y),
                                     auc=auc_roc(s, y), n_pos=n,
                                     n_fallback=fallbacks[kind]))
    return report
