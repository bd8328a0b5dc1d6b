"""
Cluster shared-memory fabric.

The scratchpad is partitioned two-dimensionally into banks and word-wide
subbanks.  SIMT lanes issue 4-byte word requests; matrix units and the DMA
engine issue wide requests covering a whole bank row, which the fabric
splits into per-subbank word sub-requests and serves in a single cycle with
priority over core traffic.  Reads and writes travel on separate paths, so
a read and a write can be served by the same bank in the same cycle.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

CLASS_CORE = "core"
CLASS_MATRIX = "matrix"
CLASS_DMA = "dma"

DEFER_QUEUE_DEPTH = 32


class SmemError(ValueError):
    pass


def route(addr, banks, subbanks, smem_bytes):
    """Map a word-aligned byte address to (bank, subbank, word-in-subbank)."""
    if addr % 4 != 0:
        raise SmemError(f"address {addr:#x} not word aligned")
    if not 0 <= addr < smem_bytes:
        raise SmemError(f"address {addr:#x} outside shared memory")
    word = addr // 4
    return (word // subbanks) % banks, word % subbanks, word // (subbanks * banks)


@dataclass(slots=True)
class SubRequest:
    parent: int
    bank: int
    subbank: int
    word_addr: int  # byte address of the word


def split_wide(addr, width, banks, subbanks, smem_bytes, parent=0):
    """Split a wide request into word sub-requests across one bank's subbanks.

    The base must be word aligned and bank-row aligned (a multiple of
    4*subbanks bytes) and the width must cover at most one bank row, so all
    sub-requests land on distinct subbanks of a single bank.
    """
    if width % 4 != 0 or width <= 0:
        raise SmemError(f"wide width {width} not a positive word multiple")
    n = width // 4
    if n > subbanks:
        raise SmemError(f"wide request of {n} words exceeds {subbanks} subbanks")
    if (addr // 4) % subbanks != 0:
        raise SmemError(f"wide base {addr:#x} not bank-row aligned")
    bank, sb0, _ = route(addr, banks, subbanks, smem_bytes)
    route(addr + width - 4, banks, subbanks, smem_bytes)  # range check
    return [
        SubRequest(parent=parent, bank=bank, subbank=sb0 + i, word_addr=addr + 4 * i)
        for i in range(n)
    ]


class FabricRequest:
    """One queued access: a core word group or a matrix/dma wide request."""

    __slots__ = ("klass", "rw", "addr", "width", "tag_matrix_operand",
                 "sb_lo", "sb_hi", "bank", "data", "on_complete", "submit_cycle")

    def __init__(self, klass, rw, addr, width, bank, sb_lo, sb_hi,
                 on_complete, data=None, tag_matrix_operand=False):
        self.klass = klass
        self.rw = rw
        self.addr = addr
        self.width = width
        self.bank = bank
        self.sb_lo = sb_lo
        self.sb_hi = sb_hi
        self.on_complete = on_complete
        self.data = data
        self.tag_matrix_operand = tag_matrix_operand
        self.submit_cycle = 0


class SmemFabric:
    """Banked scratchpad with matrix-priority arbitration.

    Requests submitted during cycle t are arbitrated from cycle t+1 on;
    read data is snapshotted at the serve cycle and delivered to the
    requester after the configured access latency.
    """

    def __init__(self, cfg, ledger, schedule_event, trace=None):
        self.banks = cfg.smem_banks
        self.subbanks = cfg.smem_subbanks_per_bank
        self.nbytes = cfg.smem_bytes
        self.latency = cfg.latency_cfg.smem_access
        self.ledger = ledger
        self.schedule_event = schedule_event  # fn(delay, callback)
        self.trace = trace
        self.data = bytearray(cfg.smem_bytes)
        # per bank: {"r": deque, "w": deque}
        self.queues = [
            {"r": deque(), "w": deque()} for _ in range(self.banks)
        ]
        self.pending = 0

    # -- submission --------------------------------------------------------

    def room(self, bank, rw):
        return len(self.queues[bank][rw]) < DEFER_QUEUE_DEPTH

    def submit_core(self, rw, addr, width, on_complete, data=None,
                    tag_matrix_operand=False, cycle=0):
        """Queue a coalesced core access of consecutive words.

        The access may touch at most one bank row; callers split at bank-row
        boundaries.  Returns False when the bank queue is full.
        """
        bank, sb0, _ = route(addr, self.banks, self.subbanks, self.nbytes)
        n = width // 4
        if sb0 + n > self.subbanks:
            raise SmemError(
                f"core group at {addr:#x} (+{width}) crosses a bank row"
            )
        if not self.room(bank, rw):
            return False
        req = FabricRequest(CLASS_CORE, rw, addr, width, bank, sb0, sb0 + n - 1,
                            on_complete, data, tag_matrix_operand)
        req.submit_cycle = cycle
        self.queues[bank][rw].append(req)
        self.pending += 1
        return True

    def submit_wide(self, klass, rw, addr, width, on_complete, data=None,
                    cycle=0):
        """Queue a matrix-unit or DMA wide request (served atomically)."""
        subs = split_wide(addr, width, self.banks, self.subbanks, self.nbytes)
        bank = subs[0].bank
        if not self.room(bank, rw):
            return False
        req = FabricRequest(klass, rw, addr, width, bank,
                            subs[0].subbank, subs[-1].subbank, on_complete, data)
        req.submit_cycle = cycle
        self.queues[bank][rw].append(req)
        self.pending += 1
        return True

    # -- per-cycle service --------------------------------------------------

    def tick(self, cycle):
        """Arbitrate and serve every bank; writes before reads."""
        if self.pending == 0:
            return
        served_total = 0
        for bank in range(self.banks):
            q = self.queues[bank]
            for rw in ("w", "r"):
                queue = q[rw]
                if not queue:
                    continue
                served = self._serve_bank(queue, cycle)
                served_total += served
                if queue:
                    deferred = sum(1 for r in queue if r.submit_cycle < cycle)
                    self.ledger.fabric_defer_cycles += deferred
                if self.trace is not None and served:
                    self.trace.append(f"{cycle} bank{bank} {rw} served={served}")
        self.pending -= served_total

    def _serve_bank(self, queue, cycle):
        # Only requests submitted on earlier cycles are eligible this cycle.
        # A pending matrix/dma wide request always wins the whole bank row
        # for its side; conflicting core requests wait.
        for req in queue:
            if req.submit_cycle >= cycle:
                break
            if req.klass != CLASS_CORE:
                queue.remove(req)
                self._serve(req, cycle)
                return 1
        # Core word groups: greedy FIFO pick of non-overlapping subbank spans.
        busy = 0
        picked = []
        scanned = 0
        for req in queue:
            if req.submit_cycle >= cycle or scanned >= 8:
                break
            scanned += 1
            span = ((1 << (req.sb_hi - req.sb_lo + 1)) - 1) << req.sb_lo
            if span & busy:
                continue
            busy |= span
            picked.append(req)
        for req in picked:
            queue.remove(req)
            self._serve(req, cycle)
        return len(picked)

    def _serve(self, req, cycle):
        led = self.ledger
        if req.rw == "r":
            payload = bytes(self.data[req.addr : req.addr + req.width])
            led.smem_read_bytes[req.klass] += req.width
            if req.tag_matrix_operand and req.klass == CLASS_CORE:
                led.smem_matrix_operand_core_read_bytes += req.width
        else:
            self.data[req.addr : req.addr + req.width] = req.data
            payload = None
            led.smem_write_bytes[req.klass] += req.width
        if req.on_complete is not None:
            self.schedule_event(self.latency, req.on_complete, payload)

    def idle(self):
        return self.pending == 0
