"""
Cluster-wide synchronization: barriers across cores and fence accounting
for asynchronous matrix/DMA operations.

The synchronizer collects per-warp barrier arrivals and releases every
participant in the cycle the last one arrives.  Fences poll a busy
register; the thread-block-level async tracker counts outstanding
operations in issue order so "all but the d most recent" is well defined.
"""

from __future__ import annotations

from collections import deque

MAX_BARRIER_IDS = 16


class SyncProtocolError(RuntimeError):
    """A warp violated the barrier protocol (wrong participant, double arrival)."""


class BarrierState:
    __slots__ = ("barrier_id", "expected", "arrived")

    def __init__(self, barrier_id, expected):
        self.barrier_id = barrier_id
        self.expected = frozenset(expected)
        self.arrived = set()


class ClusterBarriers:
    """Barrier synchronizer shared by all cores of a cluster."""

    def __init__(self, masks, ledger):
        if any(bid >= MAX_BARRIER_IDS or bid < 0 for bid in masks):
            raise SyncProtocolError(
                f"barrier ids must be in [0, {MAX_BARRIER_IDS})"
            )
        self._masks = {bid: frozenset(m) for bid, m in masks.items()}
        self._state = {}
        self.ledger = ledger

    def arrive(self, barrier_id, core, warp):
        """Record an arrival; returns the released set, or None if pending."""
        mask = self._masks.get(barrier_id)
        if mask is None:
            raise SyncProtocolError(f"barrier {barrier_id}: undeclared id")
        key = (core, warp)
        if key not in mask:
            raise SyncProtocolError(
                f"barrier {barrier_id}: arrival from non-participant {key}"
            )
        st = self._state.get(barrier_id)
        if st is None:
            st = self._state[barrier_id] = BarrierState(barrier_id, mask)
        if key in st.arrived:
            raise SyncProtocolError(
                f"barrier {barrier_id}: double arrival from {key}"
            )
        st.arrived.add(key)
        if st.arrived == st.expected:
            del self._state[barrier_id]
            return st.expected
        return None

    def waiting(self):
        return {bid: set(st.arrived) for bid, st in self._state.items()}


class AsyncTracker:
    """Issue-ordered ledger of outstanding asynchronous operations.

    One tracker serves the whole thread block (the cluster).  Matrix-unit
    compute commands and DMA descriptor groups each contribute one token;
    completions retire tokens in any order, but `outstanding` preserves the
    "d most recent" semantics by counting unfinished tokens only.
    """

    def __init__(self):
        self._tokens = deque()  # token ids in issue order
        self._open = set()
        self._next = 0

    def issue(self):
        token = self._next
        self._next += 1
        self._tokens.append(token)
        self._open.add(token)
        return token

    def complete(self, token):
        if token not in self._open:
            raise SyncProtocolError(f"async token {token} completed twice")
        self._open.discard(token)
        while self._tokens and self._tokens[0] not in self._open:
            self._tokens.popleft()

    def outstanding(self):
        return len(self._open)

    def passes(self, depth):
        """True when at most `depth` most-recent operations remain open."""
        return len(self._open) <= depth
