"""Synthetic event-stream generators for controlled experiments.

Two processes:

* periodic-bipartite: every left node fires at a fixed phase and period,
  always with the same right-side partner. Whether (u, v, t) is a real event
  is fully determined by v's schedule relative to t, so a model that reads
  time-interval encodings can overfit it to near-perfect precision.

* triadic-closure: burst-structured background traffic plus planted wedge
  closures. A chain first emits (u, b) between rarely-active nodes, later
  (b, v) right before a burst of v's own traffic, and after a delay the
  closing edge (u, v). The burst pushes b out of v's recent-interaction
  window while b's most recent event is still (b, v), so evidence for the
  closure lives at 2 hops (u -> b -> v), not at 1.
"""

from __future__ import annotations

import heapq

import numpy as np

from .data import EventStream

SYNTH_KINDS = ("periodic-bipartite", "triadic-closure")


class SynthUsageError(ValueError):
    """Invalid generator parameters."""


def generate_synthetic(kind: str, params: dict, seed: int) -> EventStream:
    """Dispatch on generator kind; deterministic given seed."""
    if kind == "periodic-bipartite":
        return generate_periodic_bipartite(seed=seed, **params)
    if kind == "triadic-closure":
        return generate_triadic_closure(seed=seed, **params)
    raise SynthUsageError(f"unknown synthetic kind {kind!r}; choose from {SYNTH_KINDS}")


def generate_periodic_bipartite(num_left: int = 25, num_right: int = 25,
                                num_events: int = 2000, period: float = 100.0,
                                seed: int = 0) -> EventStream:
    """Bipartite stream where each left node meets one partner on a fixed beat.

    Left node k fires at times phase_k + j*period with phases spread evenly
    across one period, so distinct sources never collide and "time since the
    partner's previous event equals the period" is an exact signature.
    """
    if num_left < 1 or num_right < 1 or num_left + num_right < 2:
        raise SynthUsageError("need at least two nodes in total")
    if num_events < 1:
        raise SynthUsageError("num_events must be >= 1")
    if period <= 0:
        raise SynthUsageError("period must be positive")

    rng = np.random.default_rng(seed)
    partner_of = num_left + 1 + rng.permutation(num_right)[
        np.arange(num_left) % num_right
    ]
    phases = (np.arange(num_left) * period) / num_left

    cycles = int(np.ceil(num_events / num_left)) + 1
    lefts = np.repeat(np.arange(1, num_left + 1), cycles)
    times = (np.tile(np.arange(1, cycles + 1), num_left) * period
             + np.repeat(phases, cycles))
    order = np.lexsort((lefts, times))[:num_events]
    src = lefts[order]
    dst = partner_of[src - 1]
    return EventStream(src, dst, times[order],
                       num_nodes=num_left + num_right)


def generate_triadic_closure(num_nodes: int = 100, num_events: int = 5000,
                             p_close: float = 0.8, seed: int = 0,
                             burst_low: int = 4, burst_high: int = 6,
                             delay_low: int = 5, delay_high: int = 30,
                             noise_rate: float = 0.1) -> EventStream:
    """Burst-structured traffic plus delayed wedge closures (see module doc).

    The population splits into hubs, active leaves (each tied to one home
    hub), and quiet leaves. Active leaves emit bursts of events at their
    hub; quiet leaves interact with each other at a low rate. A closure
    chain plants (u, b) between quiet leaves, later (b, v) onto an active
    leaf immediately before one of v's bursts, and finally the closing
    (u, v) edge after a short delay. The burst guarantees b has dropped out
    of v's recent-interaction window by closure time, while b's own most
    recent event is still (b, v) and u still remembers b, so the wedge is
    reachable through 2-hop extraction but invisible to 1-hop budgets.

    p_close is the probability that a burst carries a closure chain;
    p_close = 0 yields the plain burst + noise background.
    """
    if num_nodes < 10:
        raise SynthUsageError("triadic closure needs at least 10 nodes")
    if num_events < 1:
        raise SynthUsageError("num_events must be >= 1")
    if not 0.0 <= p_close <= 1.0:
        raise SynthUsageError(f"p_close must be in [0, 1], got {p_close}")
    if burst_low < 1 or burst_high < burst_low:
        raise SynthUsageError("burst length range is invalid")

    rng = np.random.default_rng(seed)
    num_hubs = max(2, num_nodes // 5)
    num_active = max(2, (num_nodes - num_hubs) // 2)
    hubs = np.arange(1, num_hubs + 1)
    active = np.arange(num_hubs + 1, num_hubs + num_active + 1)
    quiet = np.arange(num_hubs + num_active + 1, num_nodes + 1)
    home_hub = {int(x): int(hubs[i % num_hubs]) for i, x in enumerate(active)}

    src = np.empty(num_events, dtype=np.int64)
    dst = np.empty(num_events, dtype=np.int64)
    scheduled: list = []  # heap of (due_t, tiebreak, src, dst)
    prepared: list = []   # aged (u, b) quiet pairs awaiting a chain
    tiebreak = 0

    def push(due, a, b):
        nonlocal tiebreak
        tiebreak += 1
        heapq.heappush(scheduled, (due, tiebreak, int(a), int(b)))

    def uniform_pair():
        a = int(rng.integers(1, num_nodes + 1))
        b = int(rng.integers(1, num_nodes + 1))
        while b == a:
            b = int(rng.integers(1, num_nodes + 1))
        return a, b

    for t in range(1, num_events + 1):
        if scheduled and scheduled[0][0] <= t:
            _, _, a, b = heapq.heappop(scheduled)
            src[t - 1], dst[t - 1] = a, b
            continue
        if rng.random() < noise_rate:
            src[t - 1], dst[t - 1] = uniform_pair()
            continue
        if p_close > 0.0 and len(prepared) < 4 and len(quiet) >= 2:
            u, b = rng.choice(quiet, size=2, replace=False)
            prepared.append((int(u), int(b)))
            src[t - 1], dst[t - 1] = int(u), int(b)
            continue
        # start a burst for a random active leaf
        v = int(rng.choice(active))
        length = int(rng.integers(burst_low, burst_high + 1))
        chained = p_close > 0.0 and prepared and rng.random() < p_close
        offset = 0
        if chained:
            u, b = prepared.pop(0)
            src[t - 1], dst[t - 1] = b, v  # the wedge's second edge
            offset = 1
        else:
            src[t - 1], dst[t - 1] = v, home_hub[v]
            offset = 1
            length -= 1
        for j in range(length):
            push(t + offset + j, v, home_hub[v])
        if chained:
            delay = int(rng.integers(delay_low, delay_high + 1))
            push(t + offset + length + delay, u, v)

    return EventStream(src, dst, np.arange(1, num_events + 1, dtype=np.float64),
                       num_nodes=num_nodes)
