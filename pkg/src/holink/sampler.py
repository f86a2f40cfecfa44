"""Budgeted higher-order temporal neighborhood extraction and co-occurrence.

For a query (node u, time t) the sampler collects the s_1 most recent prior
interactions of u, then, for each of those, the s_2 most recent interactions
of the 1-hop partner that happened before t (not before the bridging event:
the time condition is strictly "before the query time", so a 2-hop entry may
postdate its bridge). Entries reached back at u itself (return walks) are
kept. Everything is ordered ascending by (timestamp, event index), with a
later event index meaning more recent among equal timestamps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PAD_NODE, TemporalAdjacencyIndex


@dataclass(frozen=True)
class SamplerConfig:
    """Per-hop recency budgets plus the hard cap on list length."""

    s_budgets: tuple[int, ...] = (32, 1)
    seq_cap: int = 256

    def __post_init__(self):
        if not self.s_budgets or self.s_budgets[0] < 1:
            raise ValueError("first-hop budget must be >= 1")
        if any(s < 0 for s in self.s_budgets[1:]):
            raise ValueError("hop budgets must be non-negative")
        if self.seq_cap < 1:
            raise ValueError("seq_cap must be >= 1")


@dataclass
class InteractionList:
    """A node's extracted history, ascending by (timestamp, event index)."""

    owner: int
    query_time: float
    neighbors: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    times: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.float64))
    event_ids: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    hops: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.neighbors)

    def tuples(self) -> list[tuple]:
        """(neighbor, timestamp, event index, hop) rows, for tests/debugging."""
        return list(zip(self.neighbors.tolist(), self.times.tolist(),
                        self.event_ids.tolist(), self.hops.tolist()))


def extract_1hop(index: TemporalAdjacencyIndex, node: int, t: float,
                 s_1: int) -> InteractionList:
    """The s_1 most recent interactions of `node` strictly before t."""
    partners, times, event_ids = index.entries_before(node, t)
    if s_1 < len(partners):
        partners, times, event_ids = partners[-s_1:], times[-s_1:], event_ids[-s_1:]
    assert not len(times) or times[-1] < t, "sampled interaction at/after query time"
    return InteractionList(owner=node, query_time=t,
                           neighbors=partners.astype(np.int64).copy(),
                           times=times.copy(), event_ids=event_ids.copy(),
                           hops=np.ones(len(partners), dtype=np.int64))


def extend_khop(index: TemporalAdjacencyIndex, interactions: InteractionList,
                s_next: int, t: float, seq_cap: int) -> InteractionList:
    """Append the next hop: for each deepest-hop entry, up to s_next most
    recent interactions of its partner before t, then re-sort and keep the
    seq_cap most recent entries overall."""
    if len(interactions) == 0 or s_next == 0:
        return interactions
    deepest = int(interactions.hops.max())
    new_nb, new_ts, new_ev = [], [], []
    for pos in range(len(interactions)):
        if interactions.hops[pos] != deepest:
            continue
        bridge = int(interactions.neighbors[pos])
        if bridge == PAD_NODE:
            continue
        partners, times, event_ids = index.entries_before(bridge, t)
        if s_next < len(partners):
            partners, times, event_ids = (partners[-s_next:], times[-s_next:],
                                          event_ids[-s_next:])
        new_nb.append(partners)
        new_ts.append(times)
        new_ev.append(event_ids)

    if not new_nb:
        return interactions
    neighbors = np.concatenate([interactions.neighbors] + new_nb)
    times = np.concatenate([interactions.times] + new_ts)
    event_ids = np.concatenate([interactions.event_ids] + new_ev)
    hops = np.concatenate([interactions.hops] +
                          [np.full(len(chunk), deepest + 1, dtype=np.int64)
                           for chunk in new_nb])
    order = np.lexsort((event_ids, times))  # stable, so construction order breaks full ties
    if len(order) > seq_cap:
        order = order[-seq_cap:]
    assert not len(order) or times[order[-1]] < t, "sampled interaction at/after query time"
    return InteractionList(owner=interactions.owner, query_time=t,
                           neighbors=neighbors[order], times=times[order],
                           event_ids=event_ids[order], hops=hops[order])


def extract_neighborhood(index: TemporalAdjacencyIndex, node: int, t: float,
                         cfg: SamplerConfig) -> InteractionList:
    """Full budgeted extraction: 1-hop then one extension per extra budget."""
    out = extract_1hop(index, node, t, cfg.s_budgets[0])
    for s_next in cfg.s_budgets[1:]:
        out = extend_khop(index, out, s_next, t, cfg.seq_cap)
    if len(out) > cfg.seq_cap:
        keep = len(out) - cfg.seq_cap
        out = InteractionList(owner=out.owner, query_time=out.query_time,
                              neighbors=out.neighbors[keep:], times=out.times[keep:],
                              event_ids=out.event_ids[keep:], hops=out.hops[keep:])
    return out


# ---------------------------------------------------------------------------
# co-occurrence counting
# ---------------------------------------------------------------------------


def _counts_against(ids: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Occurrences of each ids[i] within reference; padding counts as zero."""
    ids = np.asarray(ids, dtype=np.int64)
    ref = np.asarray(reference, dtype=np.int64)
    ref = ref[ref != PAD_NODE]
    out = np.zeros(len(ids), dtype=np.int64)
    if len(ref) == 0:
        return out
    uniq, counts = np.unique(ref, return_counts=True)
    pos = np.searchsorted(uniq, ids)
    pos_clipped = np.minimum(pos, len(uniq) - 1)
    hit = (uniq[pos_clipped] == ids) & (ids != PAD_NODE)
    out[hit] = counts[pos_clipped[hit]]
    return out


def cooccurrence_counts(first, second) -> tuple[np.ndarray, np.ndarray]:
    """Per-entry neighbor counts within both extracted lists.

    Accepts InteractionLists or raw id arrays. Returns (C_first, C_second);
    row i of C_first is (occurrences of first[i]'s neighbor within the first
    list, occurrences within the second list), and C_second uses the same
    fixed column order, so swapping the arguments swaps the columns.
    """
    ids_a = first.neighbors if isinstance(first, InteractionList) else np.asarray(first, dtype=np.int64)
    ids_b = second.neighbors if isinstance(second, InteractionList) else np.asarray(second, dtype=np.int64)
    c_a = np.stack([_counts_against(ids_a, ids_a), _counts_against(ids_a, ids_b)], axis=1) \
        if len(ids_a) else np.zeros((0, 2), dtype=np.int64)
    c_b = np.stack([_counts_against(ids_b, ids_a), _counts_against(ids_b, ids_b)], axis=1) \
        if len(ids_b) else np.zeros((0, 2), dtype=np.int64)
    return c_a, c_b


# ---------------------------------------------------------------------------
# fixed-length padding for batched encoding
# ---------------------------------------------------------------------------


@dataclass
class PaddedNeighborhood:
    """An InteractionList truncated/zero-padded to a fixed length.

    Real entries sit at the front (still time-ascending); padding rows carry
    the sentinel node id 0, hop 0, event id -1, and valid=False.
    """

    neighbors: np.ndarray
    times: np.ndarray
    event_ids: np.ndarray
    hops: np.ndarray
    valid: np.ndarray


def pad_neighborhood(interactions: InteractionList, length: int) -> PaddedNeighborhood:
    n = min(len(interactions), length)
    start = len(interactions) - n  # keep the most recent on overflow
    neighbors = np.zeros(length, dtype=np.int64)
    times = np.zeros(length, dtype=np.float64)
    event_ids = np.full(length, -1, dtype=np.int64)
    hops = np.zeros(length, dtype=np.int64)
    valid = np.zeros(length, dtype=bool)
    neighbors[:n] = interactions.neighbors[start:]
    times[:n] = interactions.times[start:]
    event_ids[:n] = interactions.event_ids[start:]
    hops[:n] = interactions.hops[start:]
    valid[:n] = True
    return PaddedNeighborhood(neighbors, times, event_ids, hops, valid)
