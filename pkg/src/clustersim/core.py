"""
SIMT core model: warp state, round-robin scheduling, in-order issue with a
scoreboard, the memory coalescer, and per-core L1 tracking.

One op issues per core per cycle.  A warp whose next op waits on a busy
register parks in a wait state and is skipped until the producer completes;
structural conflicts (matrix port, LSQ, fabric backpressure) burn the issue
slot and retry.  Per-warp memory completions commit in program order.
"""

from __future__ import annotations

from collections import OrderedDict, deque
from dataclasses import dataclass

import numpy as np

from . import ir

# warp states
READY = 0
WAIT_MEM = 1
WAIT_BARRIER = 2
WAIT_FENCE = 3
DONE = 4

STATUS_NAMES = {READY: "ready", WAIT_MEM: "wait_mem", WAIT_BARRIER: "wait_barrier",
                WAIT_FENCE: "wait_fence", DONE: "done"}


@dataclass(slots=True)
class CoalescedRequest:
    line_addr: int
    lane_set: tuple
    rw: str


def coalesce(lane_addrs, rw, line_bytes):
    """Merge per-lane word accesses into line-sized requests.

    Word-aligned lane addresses within one line merge into a single
    request; non-word-aligned lanes are filtered out and returned as a
    serialized residue (one lane per cycle).  The union of merged lanes
    and residue is exactly the input set.
    """
    merged = {}
    residue = []
    for lane, addr in lane_addrs:
        if addr % 4 != 0:
            residue.append((lane, addr))
            continue
        line = addr - (addr % line_bytes)
        merged.setdefault(line, []).append(lane)
    reqs = [
        CoalescedRequest(line_addr=line, lane_set=tuple(sorted(lanes)), rw=rw)
        for line, lanes in sorted(merged.items())
    ]
    return reqs, residue


class MemEntry:
    """One in-flight memory repetition, committed in program order."""

    __slots__ = ("done", "is_load", "shared", "rf_off", "addr", "width",
                 "payload", "last", "op")

    def __init__(self, is_load, shared, rf_off, addr, width, last, op):
        self.done = False
        self.is_load = is_load
        self.shared = shared
        self.rf_off = rf_off
        self.addr = addr
        self.width = width
        self.payload = None
        self.last = last
        self.op = op


class Warp:
    __slots__ = ("core", "wid", "ops", "n_ops", "pc", "rep", "status",
                 "busy_mask", "rf", "order", "fence_start", "barrier_start",
                 "unit_ops", "wgmma_waiting", "lane_mask")

    def __init__(self, core, wid, program, rf_bytes):
        self.core = core
        self.wid = wid
        self.ops = program.ops
        self.n_ops = len(program.ops)
        self.pc = 0
        self.rep = 0
        self.status = READY if self.n_ops else DONE
        self.busy_mask = 0
        self.rf = bytearray(rf_bytes)
        self.order = deque()
        self.fence_start = -1
        self.barrier_start = 0
        self.unit_ops = 0
        self.wgmma_waiting = False
        self.lane_mask = (1 << 8) - 1

    def cur_op(self):
        return self.ops[self.pc]


class Core:
    """One in-order SIMT core with its warps and matrix-unit attachment."""

    def __init__(self, core_id, engine, programs):
        self.core_id = core_id
        self.engine = engine
        cfg = engine.cfg
        rf_bytes = cfg.rf_bytes_fp_per_warp + cfg.rf_bytes_int_per_warp
        self.warps = [Warp(self, w, programs[w], rf_bytes)
                      for w in range(cfg.warps_per_core)]
        self.last_issued = len(self.warps) - 1
        self.ready_count = sum(1 for w in self.warps if w.status == READY)
        self.done_count = sum(1 for w in self.warps if w.status == DONE)
        self.lsq_used = 0
        self.lsq_limit = cfg.lsq_entries
        self.issue_block_until = 0
        self.port = None  # CoupledMatrixPort for tightly-coupled variants
        self.unit = None  # DecoupledUnit for the operand-decoupled variant
        self.unit_waiters = deque()
        # L1D line tracking (LRU)
        self.l1 = OrderedDict()
        self.l1_lines = cfg.l1d_bytes // cfg.l1_line_bytes
        self.line_bytes = cfg.l1_line_bytes
        self.hmma_steps = 0

    # -- status bookkeeping --------------------------------------------------

    def set_status(self, warp, status):
        old = warp.status
        if old == status:
            return
        if old == READY:
            self.ready_count -= 1
        if status == READY:
            self.ready_count += 1
        if status == DONE:
            self.done_count += 1
            self.engine.warp_done()
        warp.status = status

    def wake_mem(self, warp):
        if warp.status == WAIT_MEM:
            self.set_status(warp, READY)

    def wake_fence(self, warp):
        if warp.status == WAIT_FENCE:
            self.set_status(warp, READY)

    # -- scheduling ------------------------------------------------------------

    def schedule(self):
        """Next ready warp in round-robin order after the last issued one."""
        n = len(self.warps)
        for i in range(1, n + 1):
            w = self.warps[(self.last_issued + i) % n]
            if w.status == READY:
                return w
        return None

    def tick_issue(self, cycle):
        if self.ready_count == 0 or self.issue_block_until > cycle:
            return False
        warp = self.schedule()
        if warp is None:
            return False
        issued = self.issue(warp, cycle)
        if issued:
            self.last_issued = warp.wid
        else:
            self.engine.ledger.issue_stalls += 1
        return issued

    # -- issue ------------------------------------------------------------------

    def issue(self, w, cycle):
        op = w.ops[w.pc]
        kind = op.kind
        if kind == ir.ALU:
            return self._issue_alu(w, op, cycle)
        if kind == ir.FPOP:
            return self._issue_fpop(w, op, cycle)
        if kind in (ir.LD_SHARED, ir.ST_SHARED):
            return self._issue_smem(w, op, cycle)
        if kind in (ir.LD_GLOBAL, ir.ST_GLOBAL):
            return self._issue_global(w, op, cycle)
        if kind == ir.HMMA_STEP:
            return self._issue_hmma(w, op, cycle)
        if kind == ir.WGMMA_INIT:
            return self._issue_wgmma_init(w, op, cycle)
        if kind == ir.WGMMA_WAIT:
            return self._issue_wgmma_wait(w, op, cycle)
        if kind == ir.MMIO_WRITE:
            return self._issue_mmio_write(w, op, cycle)
        if kind == ir.MMIO_READ:
            return self._issue_mmio_read(w, op, cycle)
        if kind == ir.BARRIER:
            return self._issue_barrier(w, op, cycle)
        if kind == ir.NOP:
            self._retire(w, op, cycle)
            self._advance(w)
            return True
        raise ValueError(f"unknown op kind {kind}")

    def _retire(self, w, op, cycle, count=1):
        led = self.engine.ledger
        led.retire(op.kind, op.tag, count)
        log = self.engine.event_trace
        if log is not None:
            log.append(("retire", cycle, self.core_id, w.wid, w.pc,
                        ir.KIND_NAMES[op.kind]))

    def _advance(self, w):
        w.rep += 1
        if w.rep >= w.ops[w.pc].repeat:
            w.rep = 0
            w.pc += 1
            if w.pc >= w.n_ops:
                self.set_status(w, DONE)

    def _wait_dep(self, w):
        self.set_status(w, WAIT_MEM)

    def _blocked(self, w, op):
        return w.busy_mask & (op.src_mask | op.dst_mask)

    # ALU ops retire after one cycle, so no scoreboard entry is needed.
    def _issue_alu(self, w, op, cycle):
        if w.rep == 0 and self._blocked(w, op):
            self._wait_dep(w)
            return False
        led = self.engine.ledger
        led.rf_read_bytes["scalar"] += 64
        led.rf_write_bytes["scalar"] += 32
        self._retire(w, op, cycle)
        self._advance(w)
        return True

    def _issue_fpop(self, w, op, cycle):
        if w.rep == 0:
            if self._blocked(w, op):
                self._wait_dep(w)
                return False
            w.busy_mask |= op.dst_mask
        led = self.engine.ledger
        led.rf_read_bytes["scalar"] += 64
        led.rf_write_bytes["scalar"] += 32
        self._retire(w, op, cycle)
        last = w.rep == op.repeat - 1
        self._advance(w)
        if last:
            _, lat_class = ir.fpop_decode(op.ex)
            lat = (self.engine.cfg.latency_cfg.fdiv if lat_class == ir.LAT_FDIV
                   else self.engine.cfg.latency_cfg.fpu)
            self.engine.schedule(lat, self._fpop_complete, (w, op))
        return True

    def _fpop_complete(self, payload, cycle):
        w, op = payload
        self.engine.exec_fpop(w, op)
        w.busy_mask &= ~op.dst_mask
        self.wake_mem(w)

    def _issue_smem(self, w, op, cycle):
        if w.rep == 0 and self._blocked(w, op):
            self._wait_dep(w)
            return False
        if self.lsq_used >= self.lsq_limit:
            return False
        is_load = op.kind == ir.LD_SHARED
        addr = op.addr + w.rep * op.step
        rf_off = op.rf_off + w.rep * op.rf_step()
        led = self.engine.ledger
        entry = MemEntry(is_load, True, rf_off, addr, op.width,
                         w.rep == op.repeat - 1, op)
        data = None
        if not is_load:
            data = bytes(w.rf[rf_off : rf_off + op.width])
            led.rf_read_bytes["scalar"] += op.width
        ok = self.engine.fabric.submit_core(
            "r" if is_load else "w", addr, op.width,
            lambda payload, c, e=entry, ww=w: self._mem_complete(ww, e, payload, c),
            data=data,
            tag_matrix_operand=op.tag == ir.TAG_MATRIX_OPERAND,
            cycle=cycle,
        )
        if not ok:
            return False
        if w.rep == 0:
            w.busy_mask |= op.dst_mask
        w.order.append(entry)
        self.lsq_used += 1
        self._retire(w, op, cycle)
        self._advance(w)
        return True

    def _issue_global(self, w, op, cycle):
        if w.rep == 0 and self._blocked(w, op):
            self._wait_dep(w)
            return False
        if self.lsq_used >= self.lsq_limit:
            return False
        is_load = op.kind == ir.LD_GLOBAL
        addr = op.addr + w.rep * op.step
        rf_off = op.rf_off + w.rep * op.rf_step()
        led = self.engine.ledger
        if w.rep == 0:
            w.busy_mask |= op.dst_mask
        entry = MemEntry(is_load, False, rf_off, addr, op.width,
                         w.rep == op.repeat - 1, op)
        if not is_load:
            entry.payload = bytes(w.rf[rf_off : rf_off + op.width])
            led.rf_read_bytes["scalar"] += op.width
        lat = self._global_latency(addr, op.width)
        w.order.append(entry)
        self.lsq_used += 1
        self.engine.schedule(
            lat, lambda payload, c, e=entry, ww=w: self._mem_complete(ww, e, None, c),
        )
        self._retire(w, op, cycle)
        self._advance(w)
        return True

    def _global_latency(self, addr, width):
        """L1 lookup per coalesced line piece; misses walk L2 then DRAM."""
        led = self.engine.ledger
        lat_cfg = self.engine.cfg.latency_cfg
        line0 = addr - (addr % self.line_bytes)
        line1 = (addr + width - 1) - ((addr + width - 1) % self.line_bytes)
        worst = 0
        line = line0
        while line <= line1:
            led.l1_accesses += 1
            lat = lat_cfg.l1_hit
            if line in self.l1:
                self.l1.move_to_end(line)
            else:
                led.l1_misses += 1
                led.l2_accesses += 1
                l2 = self.engine.l2
                if line in l2:
                    l2.move_to_end(line)
                    lat += lat_cfg.l2_hit
                else:
                    led.dram_accesses += 1
                    lat += lat_cfg.dram
                    l2[line] = None
                    if len(l2) > self.engine.l2_lines:
                        l2.popitem(last=False)
                self.l1[line] = None
                if len(self.l1) > self.l1_lines:
                    self.l1.popitem(last=False)
            worst = max(worst, lat)
            line += self.line_bytes
        return worst

    def _mem_complete(self, w, entry, payload, cycle):
        if entry.shared and entry.is_load:
            entry.payload = payload
        entry.done = True
        self._drain_order(w, cycle)

    def _drain_order(self, w, cycle):
        """Commit completed memory ops in program order."""
        gmem = self.engine.global_mem
        led = self.engine.ledger
        cleared = False
        while w.order and w.order[0].done:
            e = w.order.popleft()
            self.lsq_used -= 1
            if e.is_load:
                if e.shared:
                    data = e.payload
                else:
                    goff = e.addr - ir.GLOBAL_BASE
                    data = bytes(gmem[goff : goff + e.width])
                w.rf[e.rf_off : e.rf_off + e.width] = data
                purpose = ("operand" if e.op.tag == ir.TAG_MATRIX_OPERAND
                           else "scalar")
                led.rf_write_bytes[purpose] += e.width
            elif not e.shared:
                goff = e.addr - ir.GLOBAL_BASE
                gmem[goff : goff + e.width] = e.payload
            if e.last:
                w.busy_mask &= ~e.op.dst_mask
                cleared = True
        if cleared or not w.order:
            self.wake_mem(w)

    def _issue_hmma(self, w, op, cycle):
        if w.rep == 0 and self._blocked(w, op):
            self._wait_dep(w)
            return False
        if not self.port.try_occupy(cycle, 2):
            return False
        if w.rep == 0:
            w.busy_mask |= op.dst_mask
        cfg = self.engine.cfg
        self.engine.ledger.macs += cfg.matrix_cfg.macs_per_unit_per_cycle * 2
        self.hmma_steps += 1
        self.issue_block_until = cycle + 2
        self._retire(w, op, cycle)
        last = w.rep == op.repeat - 1
        self._advance(w)
        if last:
            self.engine.schedule(2, self._hmma_complete, (w, op))
        return True

    def _hmma_complete(self, payload, cycle):
        w, op = payload
        cfg = self.engine.cfg
        mu = cfg.matrix_cfg
        e = cfg.element_bytes
        dt = np.float16 if cfg.precision == "fp16" else np.float32
        m, n, k = mu.tile_m, mu.tile_n, mu.tile_k
        a = np.frombuffer(w.rf, dtype=dt, count=m * k, offset=op.addr).reshape(m, k)
        # B is staged as a k x (2n) block for fp16 (both column halves)
        b_cols = 2 * n if cfg.precision == "fp16" else n
        b = np.frombuffer(w.rf, dtype=dt, count=k * b_cols,
                          offset=op.addr2).reshape(k, b_cols)
        if op.ex & ir.HMMA_B_HALF:
            b = b[:, n:]
        else:
            b = b[:, :n]
        acc = np.frombuffer(w.rf, dtype=np.float32, count=m * n,
                            offset=op.rf_off).reshape(m, n)
        prod = np.matmul(a.astype(np.float32), b.astype(np.float32))
        led = self.engine.ledger
        if op.ex & ir.HMMA_ACC_INIT:
            acc[:] = prod
        else:
            acc += prod
            led.rf_read_bytes["accumulator"] += m * n * 4
        led.rf_read_bytes["operand"] += (m * k + k * n) * e
        led.rf_write_bytes["accumulator"] += m * n * 4
        w.busy_mask &= ~op.dst_mask
        self.wake(w)

    def _issue_wgmma_init(self, w, op, cycle):
        if self._blocked(w, op):
            self._wait_dep(w)
            return False
        accumulate = bool(op.ex & ir.FLAG_ACCUMULATE)
        started = self.unit.try_start(
            w, op.addr, op.addr2, op.rf_off, accumulate,
            lambda c, ww=w, o=op: self._wgmma_complete(ww, o, c),
        )
        if not started:
            self._wait_dep(w)
            self.unit_waiters.append(w)
            return False
        w.busy_mask |= op.dst_mask
        w.unit_ops += 1
        self._retire(w, op, cycle)
        self._advance(w)
        return True

    def _wgmma_complete(self, w, op, cycle):
        w.unit_ops -= 1
        w.busy_mask &= ~op.dst_mask
        if w.wgmma_waiting and w.unit_ops == 0:
            w.wgmma_waiting = False
            self.wake_fence(w)
        else:
            self.wake_mem(w)
        if self.unit_waiters and not self.unit.busy:
            waiter = self.unit_waiters.popleft()
            self.wake_mem(waiter)

    def _issue_wgmma_wait(self, w, op, cycle):
        if w.unit_ops == 0:
            self._retire(w, op, cycle)
            self._advance(w)
            return True
        w.wgmma_waiting = True
        self.set_status(w, WAIT_FENCE)
        return False

    def _issue_mmio_write(self, w, op, cycle):
        self._retire(w, op, cycle)
        self._advance(w)
        self.engine.schedule(
            self.engine.cfg.latency_cfg.mmio_access,
            self.engine.apply_mmio_write, (op.addr, op.addr2),
        )
        return True

    def _issue_mmio_read(self, w, op, cycle):
        led = self.engine.ledger
        if op.poll_depth >= 0:
            if w.fence_start < 0:
                w.fence_start = cycle
                led.fence_calls += 1
            led.fence_polls += 1
            self._retire(w, op, cycle)
            if self.engine.tracker.passes(op.poll_depth):
                led.fence_blocked_cycles += cycle - w.fence_start
                w.fence_start = -1
                if self.engine.event_trace is not None:
                    self.engine.event_trace.append(
                        ("fence_pass", cycle, self.core_id, w.wid,
                         self.engine.tracker.outstanding())
                    )
                self._advance(w)
                return True
            self.set_status(w, WAIT_FENCE)
            self.engine.schedule(
                self.engine.cfg.latency_cfg.fence_poll_interval,
                lambda payload, c, ww=w: self.wake(ww),
            )
            return True
        # plain register read: blocks until the response returns
        self._retire(w, op, cycle)
        self._advance(w)
        self.set_status(w, WAIT_MEM)
        self.engine.schedule(
            self.engine.cfg.latency_cfg.mmio_access,
            lambda payload, c, ww=w: self.wake(ww),
        )
        return True

    def _issue_barrier(self, w, op, cycle):
        if w.order:
            return False  # stores must be visible before the barrier
        released = self.engine.barriers.arrive(op.ex, self.core_id, w.wid)
        if released is None:
            w.barrier_start = cycle
            self.set_status(w, WAIT_BARRIER)
            self._retire(w, op, cycle)
            self._advance(w)
            return True
        led = self.engine.ledger
        if self.engine.event_trace is not None:
            self.engine.event_trace.append(("barrier_release", cycle, op.ex))
        for core_id, wid in sorted(released):
            other = self.engine.cores[core_id].warps[wid]
            if other is w:
                continue
            led.barrier_wait_cycles += cycle - other.barrier_start
            self.engine.cores[core_id].set_status(other, READY)
        self._retire(w, op, cycle)
        self._advance(w)
        return True
