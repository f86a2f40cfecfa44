"""Continuous-time dynamic graph storage: ingest, split, and index.

A graph is an event stream: timestamped interactions (source, destination,
edge features, optional binary label) sorted stably by (timestamp, ingestion
order). Node id 0 is reserved as the padding sentinel; real ids start at 1.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

CSV_BASE_COLUMNS = ("u", "i", "ts", "label")
PAD_NODE = 0


class IngestError(ValueError):
    """Malformed dataset file."""


@dataclass(frozen=True)
class Event:
    """One timestamped interaction."""

    source: int
    destination: int
    timestamp: float
    features: np.ndarray
    label: int | None


class EventStream:
    """Immutable, time-sorted sequence of interaction events.

    Storage is columnar (one array per field) so splits are views and the
    samplers can slice without copying. `node_features` covers ids
    0..num_nodes with row 0 the all-zero padding row; datasets without node
    features get a zero-width table.
    """

    def __init__(self, sources, destinations, timestamps, edge_features=None,
                 labels=None, num_nodes=None, node_features=None):
        self.sources = np.ascontiguousarray(sources, dtype=np.int64)
        self.destinations = np.ascontiguousarray(destinations, dtype=np.int64)
        self.timestamps = np.ascontiguousarray(timestamps, dtype=np.float64)
        n = len(self.sources)
        if len(self.destinations) != n or len(self.timestamps) != n:
            raise ValueError("event columns have mismatched lengths")
        if edge_features is None:
            edge_features = np.zeros((n, 0))
        self.edge_features = np.asarray(edge_features, dtype=np.float64)
        if self.edge_features.ndim != 2 or self.edge_features.shape[0] != n:
            raise ValueError(
                f"edge_features must be (n_events, d_E), got {self.edge_features.shape}"
            )
        if labels is None:
            labels = np.full(n, -1, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=np.int64)
        if n > 0:
            if self.sources.min() < 1 or self.destinations.min() < 1:
                raise ValueError("node ids must be >= 1 (0 is the padding sentinel)")
            if (np.diff(self.timestamps) < 0).any():
                raise ValueError("timestamps must be non-decreasing")
            if self.timestamps[0] < 0:
                raise ValueError("timestamps must be non-negative")
        observed = int(max(self.sources.max(initial=0), self.destinations.max(initial=0)))
        self.num_nodes = observed if num_nodes is None else int(num_nodes)
        if self.num_nodes < observed:
            raise ValueError("num_nodes smaller than the largest id in the stream")
        if node_features is None:
            node_features = np.zeros((self.num_nodes + 1, 0))
        self.node_features = np.asarray(node_features, dtype=np.float64)
        if self.node_features.shape[0] != self.num_nodes + 1:
            raise ValueError("node_features must have num_nodes + 1 rows (row 0 = padding)")

    def __len__(self) -> int:
        return len(self.sources)

    @property
    def d_edge(self) -> int:
        return self.edge_features.shape[1]

    @property
    def d_node(self) -> int:
        return self.node_features.shape[1]

    def event(self, i: int) -> Event:
        label = int(self.labels[i])
        return Event(int(self.sources[i]), int(self.destinations[i]),
                     float(self.timestamps[i]), self.edge_features[i],
                     None if label < 0 else label)

    def view(self, start: int, stop: int) -> "EventStream":
        """Contiguous sub-stream sharing storage with the parent."""
        return EventStream(self.sources[start:stop], self.destinations[start:stop],
                           self.timestamps[start:stop], self.edge_features[start:stop],
                           self.labels[start:stop], num_nodes=self.num_nodes,
                           node_features=self.node_features)

    def select(self, keep: np.ndarray) -> "EventStream":
        """Sub-stream of the rows where `keep` is true (id space unchanged)."""
        return EventStream(self.sources[keep], self.destinations[keep],
                           self.timestamps[keep], self.edge_features[keep],
                           self.labels[keep], num_nodes=self.num_nodes,
                           node_features=self.node_features)


def concat_streams(*streams: EventStream) -> EventStream:
    """Join time-ordered streams back into one (inverse of a split)."""
    first = streams[0]
    return EventStream(
        np.concatenate([s.sources for s in streams]),
        np.concatenate([s.destinations for s in streams]),
        np.concatenate([s.timestamps for s in streams]),
        np.concatenate([s.edge_features for s in streams]),
        np.concatenate([s.labels for s in streams]),
        num_nodes=max(s.num_nodes for s in streams),
        node_features=first.node_features,
    )


# ---------------------------------------------------------------------------
# CSV contract: header `u,i,ts,label,f_0,...,f_{dE-1}`; UTF-8, LF, `.` decimals
# ---------------------------------------------------------------------------


def ingest_csv(path) -> EventStream:
    """Parse a dataset file into a sorted stream with dense ids from 1.

    Rows out of time order are re-sorted (stably, by original row order)
    with a warning. Malformed rows raise IngestError naming the line.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if tuple(header[:4]) != CSV_BASE_COLUMNS:
            raise IngestError(
                f"{path}: header must start with {','.join(CSV_BASE_COLUMNS)}, got {header[:4]}"
            )
        d_edge = len(header) - 4
        expected_feats = [f"f_{k}" for k in range(d_edge)]
        if header[4:] != expected_feats:
            raise IngestError(f"{path}: feature columns must be named f_0..f_{d_edge - 1}")

        raw_u, raw_i, ts, labels, feats = [], [], [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4 + d_edge:
                raise IngestError(f"{path}:{line_no}: expected {4 + d_edge} fields, got {len(row)}")
            try:
                u = int(row[0])
                v = int(row[1])
                t = float(row[2])
                label_field = row[3].strip()
                label = -1 if label_field == "" else int(label_field)
                f = [float(x) for x in row[4:]]
            except ValueError as err:
                raise IngestError(f"{path}:{line_no}: {err}") from None
            if u < 0 or v < 0:
                raise IngestError(f"{path}:{line_no}: node ids must be non-negative")
            if t < 0:
                raise IngestError(f"{path}:{line_no}: negative timestamp {t}")
            if label not in (-1, 0, 1):
                raise IngestError(f"{path}:{line_no}: label must be 0, 1, or empty")
            raw_u.append(u)
            raw_i.append(v)
            ts.append(t)
            labels.append(label)
            feats.append(f)

    if not raw_u:
        raise IngestError(f"{path}: no events")
    ts = np.asarray(ts, dtype=np.float64)
    if (np.diff(ts) < 0).any():
        warnings.warn(f"{path}: timestamps not sorted; re-sorting stably", stacklevel=2)
    order = np.argsort(ts, kind="stable")

    # dense remap in first-appearance order of the original file
    mapping: dict[int, int] = {}
    for node in list(raw_u) + list(raw_i):
        if node not in mapping:
            mapping[node] = len(mapping) + 1
    src = np.asarray([mapping[x] for x in raw_u], dtype=np.int64)[order]
    dst = np.asarray([mapping[x] for x in raw_i], dtype=np.int64)[order]
    feat_array = np.zeros((len(raw_u), d_edge))
    if d_edge:
        feat_array[:] = feats
    return EventStream(src, dst, ts[order], feat_array[order],
                       np.asarray(labels, dtype=np.int64)[order])


def write_csv(stream: EventStream, path):
    d_edge = stream.d_edge
    header = list(CSV_BASE_COLUMNS) + [f"f_{k}" for k in range(d_edge)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for k in range(len(stream)):
        label = stream.labels[k]
        row = [int(stream.sources[k]), int(stream.destinations[k]),
               repr(float(stream.timestamps[k])), "" if label < 0 else int(label)]
        row += [repr(float(x)) for x in stream.edge_features[k]]
        writer.writerow(row)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


def chronological_split(stream: EventStream, ratios=(0.70, 0.15, 0.15)):
    """Prefix/middle/suffix split by sorted order; remainder goes to train.

    Ties at a boundary are split by stable index, never by timestamp value,
    so splits are deterministic even with duplicated timestamps.
    """
    if len(stream) == 0:
        raise ValueError("cannot split an empty stream")
    r_train, r_val, r_test = ratios
    if abs(r_train + r_val + r_test - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    n = len(stream)
    n_val = int(np.floor(n * r_val))
    n_test = int(np.floor(n * r_test))
    n_train = n - n_val - n_test
    return (stream.view(0, n_train),
            stream.view(n_train, n_train + n_val),
            stream.view(n_train + n_val, n))


def sample_inductive_nodes(stream: EventStream, fraction: float,
                           seed: int) -> np.ndarray:
    """Uniformly held-out node ids for the inductive protocol."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"inductive fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    count = max(1, int(round(stream.num_nodes * fraction)))
    return np.sort(rng.choice(np.arange(1, stream.num_nodes + 1), size=count, replace=False))


def remove_node_events(stream: EventStream, nodes: np.ndarray) -> EventStream:
    """Drop every event touching any of the given nodes (train-side masking)."""
    masked = np.zeros(stream.num_nodes + 1, dtype=bool)
    masked[np.asarray(nodes, dtype=np.int64)] = True
    keep = ~(masked[stream.sources] | masked[stream.destinations])
    return stream.select(keep)


# ---------------------------------------------------------------------------
# temporal adjacency index
# ---------------------------------------------------------------------------


class TemporalAdjacencyIndex:
    """Per-node time-ascending interaction lists over an undirected view.

    Each event contributes one entry to both endpoints' lists; entries are
    (partner id, timestamp, event index) sorted by (timestamp, event index),
    which the samplers binary-search by query time.
    """

    def __init__(self, stream: EventStream):
        n_events = len(stream)
        endpoints = np.concatenate([stream.sources, stream.destinations])
        partners = np.concatenate([stream.destinations, stream.sources])
        times = np.tile(stream.timestamps, 2)
        event_ids = np.tile(np.arange(n_events, dtype=np.int64), 2)
        order = np.lexsort((event_ids, times, endpoints))
        endpoints = endpoints[order]
        self._partners = partners[order]
        self._times = times[order]
        self._event_ids = event_ids[order]
        self._offsets = np.zeros(stream.num_nodes + 2, dtype=np.int64)
        counts = np.bincount(endpoints, minlength=stream.num_nodes + 1)
        self._offsets[1:] = np.cumsum(counts)
        self.num_nodes = stream.num_nodes
        self.total_entries = len(endpoints)

    def node_entries(self, node: int):
        """All (partners, times, event_ids) of a node, time-ascending."""
        if not 1 <= node <= self.num_nodes:
            raise KeyError(f"node {node} not in index (1..{self.num_nodes})")
        lo, hi = self._offsets[node], self._offsets[node + 1]
        return self._partners[lo:hi], self._times[lo:hi], self._event_ids[lo:hi]

    def entries_before(self, node: int, t: float):
        """Entries with timestamp strictly below t, time-ascending."""
        partners, times, event_ids = self.node_entries(node)
        cut = np.searchsorted(times, t, side="left")
        return partners[:cut], times[:cut], event_ids[:cut]


def build_index(stream: EventStream) -> TemporalAdjacencyIndex:
    return TemporalAdjacencyIndex(stream)
