"""
Matrix-unit and DMA models.

Three unit designs live here:

* `CoupledMatrixPort` - the tightly-coupled unit is a per-core execution
  port fed from the register file; its timing is folded into the core's
  issue logic (2 cycles per set/step pair).
* `DecoupledUnit` - per-core decoupled access/execute unit that fetches
  operand fragments from shared memory through FIFOs and accumulates into
  the issuing warp's register file.
* `ClusterUnit` - the cluster-level unit: an MMIO-programmed FSM drives a
  systolic mesh that streams operands straight from shared memory, keeps
  partial sums in a private single-banked accumulator memory, and can
  drain results either there or back to shared memory.

The `DmaEngine` moves 2D tiles between global memory, shared memory and
accumulator memories, one descriptor group at a time.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import ir
from .smem import CLASS_DMA, CLASS_MATRIX


@dataclass
class TileCommand:
    """A matrix-unit operation descriptor latched through MMIO."""

    a_base: int
    b_base: int
    d_base: int
    m: int
    n: int
    k: int
    accumulate: bool
    d_in_smem: bool


class UnitProtocolError(RuntimeError):
    pass


class CoupledMatrixPort:
    """Per-core structural port for set/step matrix instructions."""

    __slots__ = ("busy_until",)

    def __init__(self):
        self.busy_until = 0

    def try_occupy(self, cycle, cycles_per_step):
        if self.busy_until > cycle:
            return False
        self.busy_until = cycle + cycles_per_step
        return True


class DecoupledUnit:
    """Decoupled access/execute matrix unit, one per core.

    The access frontend issues wide shared-memory reads for the A and B
    fragments; the execute backend drains the operand FIFOs at the unit's
    MAC rate once both sides of a slice are buffered.  The result is
    written back to the issuing warp's register-file accumulator at the
    write-port rate before the next operation is accepted.
    """

    WB_BYTES_PER_CYCLE = 64

    def __init__(self, unit_id, core, engine):
        self.unit_id = unit_id
        self.core = core
        self.engine = engine
        cfg = engine.cfg
        self.beat = cfg.matrix_beat_bytes
        self.fifo_depth = cfg.matrix_cfg.operand_fifo_depth
        self.macs_per_cycle = cfg.matrix_cfg.macs_per_unit_per_cycle
        self.busy = False
        self.op = None
        self.backend_stall_cycles = 0

    def try_start(self, warp, a_addr, b_addr, acc_off, accumulate, on_done):
        if self.busy:
            return False
        cfg = self.engine.cfg
        mu = cfg.matrix_cfg
        e = cfg.element_bytes
        a_bytes = mu.tile_m * mu.tile_k * e
        b_bytes = mu.tile_k * mu.tile_n * e
        n_pairs = a_bytes // self.beat
        total_macs = mu.tile_m * mu.tile_n * mu.tile_k
        self.op = {
            "warp": warp,
            "a_addr": a_addr,
            "b_addr": b_addr,
            "acc_off": acc_off,
            "accumulate": accumulate,
            "on_done": on_done,
            "a_bytes": a_bytes,
            "b_bytes": b_bytes,
            "a_req": 0,
            "b_req": 0,
            "a_buf": bytearray(),
            "b_buf": bytearray(),
            "pairs_done": 0,
            "n_pairs": n_pairs,
            "pair_macs": total_macs // n_pairs,
            "slice_cycles": max(1, (total_macs // n_pairs) // self.macs_per_cycle),
            "slice_left": 0,
            "warmed": False,
            "wb_left": -1,
        }
        self.busy = True
        return True

    def _on_beat(self, which, payload, _cycle):
        self.op[which].extend(payload)

    def tick(self, cycle):
        if not self.busy:
            return
        op = self.op
        fabric = self.engine.fabric
        # access frontend: one read per operand per cycle, FIFO-capped
        for which, base, total, req_key in (
            ("a_buf", op["a_addr"], op["a_bytes"], "a_req"),
            ("b_buf", op["b_addr"], op["b_bytes"], "b_req"),
        ):
            requested = op[req_key]
            if requested < total:
                inflight = requested - len(op[which])
                consumed = op["pairs_done"] * self.beat
                if (len(op[which]) - consumed) + inflight < self.fifo_depth * self.beat:
                    ok = fabric.submit_wide(
                        CLASS_MATRIX, "r", base + requested, self.beat,
                        lambda data, c, w=which: self._on_beat(w, data, c),
                        cycle=cycle,
                    )
                    if ok:
                        op[req_key] = requested + self.beat

        # execute backend
        if op["wb_left"] > 0:
            op["wb_left"] -= 1
            if op["wb_left"] == 0:
                self._finish(cycle)
            return
        if op["slice_left"] > 0:
            op["slice_left"] -= 1
            if op["slice_left"] == 0 and op["pairs_done"] == op["n_pairs"]:
                cfg = self.engine.cfg
                mu = cfg.matrix_cfg
                op["wb_left"] = max(1, mu.tile_m * mu.tile_n * 4
                                    // self.WB_BYTES_PER_CYCLE)
            return
        need = (op["pairs_done"] + 1) * self.beat
        if len(op["a_buf"]) >= need and len(op["b_buf"]) >= need:
            op["pairs_done"] += 1
            op["slice_left"] = op["slice_cycles"]
            self.engine.ledger.macs += op["pair_macs"]
        elif op["warmed"]:
            self.backend_stall_cycles += 1
        if op["pairs_done"] > 0:
            op["warmed"] = True

    def _finish(self, cycle):
        op = self.op
        cfg = self.engine.cfg
        mu = cfg.matrix_cfg
        e = cfg.element_bytes
        dt = np.float16 if cfg.precision == "fp16" else np.float32
        a = np.frombuffer(bytes(op["a_buf"]), dtype=dt,
                          count=mu.tile_m * mu.tile_k).reshape(mu.tile_m, mu.tile_k)
        b = np.frombuffer(bytes(op["b_buf"]), dtype=dt,
                          count=mu.tile_k * mu.tile_n).reshape(mu.tile_k, mu.tile_n)
        prod = np.matmul(a.astype(np.float32), b.astype(np.float32))
        warp = op["warp"]
        acc = np.frombuffer(warp.rf, dtype=np.float32,
                            count=mu.tile_m * mu.tile_n,
                            offset=op["acc_off"]).reshape(mu.tile_m, mu.tile_n)
        led = self.engine.ledger
        acc_bytes = mu.tile_m * mu.tile_n * 4
        if op["accumulate"]:
            acc += prod
            led.rf_read_bytes["accumulator"] += acc_bytes
        else:
            acc[:] = prod
        led.rf_write_bytes["accumulator"] += acc_bytes
        done = op["on_done"]
        self.busy = False
        self.op = None
        done(cycle)

    def idle(self):
        return not self.busy


class ClusterUnit:
    """Disaggregated cluster-level matrix unit.

    The FSM iterates output-column/depth fragment groups (j, k): it parks
    the B(k, j) fragment in the mesh, streams every A(i, k) row through it
    at one 32-byte beat per cycle, and retires one output row per cycle
    into the accumulator memory (single read-modify-write access) or, for
    the final depth step of a shared-memory destination, into the fabric's
    write path.  The B fragment for the next group is prefetched during
    the current stream; swapping it into the mesh costs a fixed bubble.
    """

    START_DELAY = 4
    SWAP_BUBBLE = 4
    A_FIFO_BEATS = 8
    DRAIN_QUEUE_DEPTH = 16

    def __init__(self, unit_id, cfg, mu_cfg, engine):
        self.unit_id = unit_id
        self.cfg = cfg
        self.mu = mu_cfg
        self.engine = engine
        self.dim = mu_cfg.systolic_rows
        self.beat = min(cfg.matrix_beat_bytes, 4 * mu_cfg.systolic_cols)
        self.accum = np.zeros(mu_cfg.accumulator_bytes // 4, dtype=np.float32)
        self.regs = {}
        self.busy = False
        self.cmd = None
        self.token = None
        self.stall_cycles = 0
        self.acc_access_cycle = -1
        self._reset_run_state()

    def _reset_run_state(self):
        self.phase = "idle"
        self.start_left = 0
        self.groups = []
        self.gidx = 0
        self.row = 0
        self.a_req = 0
        self.a_ready = 0
        self.b_cur_ready = False
        self.b_next_req = 0
        self.b_next_got = 0
        self.bubble = 0
        self.drainq = deque()
        self.pending_writes = 0
        self.acc_local = None

    # -- MMIO ----------------------------------------------------------------

    def mmio_write(self, reg, value, cycle):
        if reg == ir.REG_GO:
            if self.busy:
                self.engine.ledger.mmio_rejects += 1
                return False
            self._start(cycle)
            return True
        self.regs[reg] = value
        return True

    def mmio_read(self, reg):
        if reg == ir.REG_BUSY:
            return 1 if self.busy else 0
        return self.regs.get(reg, 0)

    def _start(self, cycle):
        r = self.regs
        cmd = TileCommand(
            a_base=r.get(ir.REG_A_BASE, 0),
            b_base=r.get(ir.REG_B_BASE, 0),
            d_base=r.get(ir.REG_D_BASE, 0),
            m=r.get(ir.REG_M, 0),
            n=r.get(ir.REG_N, 0),
            k=r.get(ir.REG_K, 0),
            accumulate=bool(r.get(ir.REG_FLAGS, 0) & ir.FLAG_ACCUMULATE),
            d_in_smem=bool(r.get(ir.REG_FLAGS, 0) & ir.FLAG_D_IN_SMEM),
        )
        mu = self.mu
        if cmd.m > mu.tile_m or cmd.n > mu.tile_n or cmd.k > mu.tile_k:
            raise UnitProtocolError(
                f"unit {self.unit_id}: tile ({cmd.m},{cmd.n},{cmd.k}) exceeds "
                f"({mu.tile_m},{mu.tile_n},{mu.tile_k})"
            )
        if cmd.m % self.dim or cmd.n % self.dim or cmd.k % self.dim:
            raise UnitProtocolError(
                f"unit {self.unit_id}: tile not divisible by mesh dim {self.dim}"
            )
        if not cmd.d_in_smem and cmd.m * cmd.n * 4 > mu.accumulator_bytes:
            raise UnitProtocolError(
                f"unit {self.unit_id}: result tile overflows accumulator memory"
            )
        self.cmd = cmd
        self.busy = True
        self.token = self.engine.tracker.issue()
        self._reset_run_state()
        self.phase = "start"
        self.start_left = self.START_DELAY
        nj = cmd.n // self.dim
        kk = cmd.k // self.dim
        self.groups = [(j, k) for j in range(nj) for k in range(kk)]
        if cmd.d_in_smem:
            self.acc_local = np.zeros((cmd.m, cmd.n), dtype=np.float32)
        else:
            d_off = cmd.d_base // 4
            words = cmd.m * cmd.n
            if cmd.accumulate:
                self.acc_local = (
                    self.accum[d_off : d_off + words]
                    .reshape(cmd.m, cmd.n)
                    .copy()
                )
            else:
                self.acc_local = np.zeros((cmd.m, cmd.n), dtype=np.float32)

    # -- per-cycle FSM --------------------------------------------------------

    def tick(self, cycle):
        if not self.busy:
            return
        if self.phase == "start":
            self.start_left -= 1
            if self.start_left <= 0:
                self.phase = "run"
            return
        if self.phase == "run":
            self._issue_reads(cycle)
            self._drain_tick(cycle)
            self._stream_tick(cycle)
        elif self.phase == "flush":
            self._drain_tick(cycle)
            if not self.drainq and self.pending_writes == 0:
                self._finish(cycle)

    def _group_rows(self):
        return self.cmd.m

    def _issue_reads(self, cycle):
        fabric = self.engine.fabric
        cmd = self.cmd
        e = self.cfg.element_bytes
        dim = self.dim
        budget = 2
        # A-stream reads for the current group
        if self.gidx < len(self.groups) and self.b_cur_ready:
            j, k = self.groups[self.gidx]
            rows = self._group_rows()
            if self.a_req < rows and self.a_ready + (self.a_req - self.row) < self.A_FIFO_BEATS:
                addr = cmd.a_base + self.a_req * (cmd.k * e) + k * dim * e
                if fabric.submit_wide(CLASS_MATRIX, "r", addr, self.beat,
                                      self._on_a_beat, cycle=cycle):
                    self.a_req += 1
                    budget -= 1
        # B fragment prefetch: current group's fill, then next group's
        target = self.gidx if not self.b_cur_ready else self.gidx + 1
        if budget > 0 and target < len(self.groups):
            if self.b_next_req < dim:
                j, k = self.groups[target]
                addr = (cmd.b_base + (k * dim + self.b_next_req) * (cmd.n * e)
                        + j * dim * e)
                if fabric.submit_wide(CLASS_MATRIX, "r", addr, self.beat,
                                      self._on_b_beat, cycle=cycle):
                    self.b_next_req += 1

    def _on_a_beat(self, _payload, _cycle):
        self.a_ready += 1

    def _on_b_beat(self, _payload, _cycle):
        self.b_next_got += 1

    def _stream_tick(self, cycle):
        if self.bubble > 0:
            self.bubble -= 1
            return
        if not self.b_cur_ready:
            # mesh waits for the staged B fragment, then loads it
            if self.b_next_got >= self.dim:
                self.b_cur_ready = True
                self.b_next_req = 0
                self.b_next_got = 0
                self.bubble = self.SWAP_BUBBLE
            else:
                self.stall_cycles += 1
            return
        if self.gidx >= len(self.groups):
            self.phase = "flush"
            return
        if self.a_ready <= 0:
            self.stall_cycles += 1
            return
        if len(self.drainq) >= self.DRAIN_QUEUE_DEPTH:
            self.stall_cycles += 1
            return
        # stream one A row through the mesh
        self.a_ready -= 1
        dim = self.dim
        self.engine.ledger.macs += dim * dim
        j, k = self.groups[self.gidx]
        self._retire_row(self.row, j, k, cycle)
        self.row += 1
        if self.row >= self._group_rows():
            self._group_done(cycle)

    def _retire_row(self, row, j, k, cycle):
        cmd = self.cmd
        last_k = k == (cmd.k // self.dim) - 1
        if cmd.d_in_smem and last_k:
            self.drainq.append((row, j))
        else:
            # single-banked accumulator: one read-modify-write per row
            self._acc_access(cycle)

    def _acc_access(self, cycle):
        if self.acc_access_cycle == cycle:
            raise UnitProtocolError(
                f"unit {self.unit_id}: double accumulator access in cycle {cycle}"
            )
        self.acc_access_cycle = cycle
        self.engine.ledger.accumulator_accesses += 1

    def _group_done(self, cycle):
        cmd = self.cmd
        dim = self.dim
        e = self.cfg.element_bytes
        j, k = self.groups[self.gidx]
        # functional effect of the whole (j, k) group, read from live SMEM
        smem = self.engine.fabric.data
        dt = np.float16 if self.cfg.precision == "fp16" else np.float32
        a_block = np.frombuffer(
            bytes(smem[cmd.a_base : cmd.a_base + cmd.m * cmd.k * e]),
            dtype=dt,
        ).reshape(cmd.m, cmd.k)[:, k * dim : (k + 1) * dim]
        b_frag = np.frombuffer(
            bytes(smem[cmd.b_base : cmd.b_base + cmd.k * cmd.n * e]),
            dtype=dt,
        ).reshape(cmd.k, cmd.n)[k * dim : (k + 1) * dim, j * dim : (j + 1) * dim]
        prod = np.matmul(a_block.astype(np.float32), b_frag.astype(np.float32))
        self.acc_local[:, j * dim : (j + 1) * dim] += prod

        cmd_groups = self.groups
        last_k = k == (cmd.k // dim) - 1
        if cmd.d_in_smem and last_k:
            # rows were queued for shared-memory drain by _retire_row
            pass
        self.gidx += 1
        self.row = 0
        self.a_req = 0
        self.a_ready = 0
        if self.gidx < len(cmd_groups):
            # next group's B fragment may already be staged
            if self.b_next_got >= dim:
                self.b_cur_ready = True
                self.b_next_req = 0
                self.b_next_got = 0
                self.bubble = self.SWAP_BUBBLE
            else:
                self.b_cur_ready = False
        else:
            self.phase = "flush"

    # -- shared-memory drain ---------------------------------------------------

    def _drain_tick(self, cycle):
        if not self.drainq:
            return
        fabric = self.engine.fabric
        cmd = self.cmd
        dim = self.dim
        row, j = self.drainq[0]
        row_addr = cmd.d_base + row * (cmd.n * 4) + j * dim * 4
        width = dim * 4
        values = self.acc_local[row, j * dim : (j + 1) * dim]
        if cmd.accumulate:
            ok = fabric.submit_wide(
                CLASS_MATRIX, "r", row_addr, width,
                lambda data, c, a=row_addr, v=values.copy(): self._drain_rmw(a, v, data, c),
                cycle=cycle,
            )
            if ok:
                self.drainq.popleft()
                self.pending_writes += 1
        else:
            payload = values.astype(np.float32).tobytes()
            ok = fabric.submit_wide(CLASS_MATRIX, "w", row_addr, width,
                                    self._on_write_done, data=payload, cycle=cycle)
            if ok:
                self.drainq.popleft()
                self.pending_writes += 1

    def _drain_rmw(self, addr, values, data, cycle):
        old = np.frombuffer(data, dtype=np.float32)
        payload = (old + values).astype(np.float32).tobytes()
        ok = self.engine.fabric.submit_wide(
            CLASS_MATRIX, "w", addr, len(payload),
            self._on_write_done, data=payload, cycle=cycle,
        )
        if not ok:
            # retry next cycle through the engine's event queue
            self.engine.schedule(1, lambda _p, c: self._drain_rmw(addr, values, data, c))

    def _on_write_done(self, _payload, cycle):
        self.pending_writes -= 1

    def _finish(self, cycle):
        cmd = self.cmd
        if not cmd.d_in_smem:
            d_off = cmd.d_base // 4
            words = cmd.m * cmd.n
            self.accum[d_off : d_off + words] = self.acc_local.reshape(-1)
        self.busy = False
        self.phase = "idle"
        token = self.token
        self.token = None
        self.cmd = None
        self.engine.tracker.complete(token)
        self.engine.on_unit_idle(self)

    def idle(self):
        return not self.busy


class DmaDescriptor:
    __slots__ = ("direction", "src", "dst", "rows", "row_bytes", "src_stride",
                 "dst_stride", "unit_id", "token", "row", "offset", "started")

    def __init__(self, direction, src, dst, rows, row_bytes, src_stride,
                 dst_stride, unit_id, token):
        self.direction = direction
        self.src = src
        self.dst = dst
        self.rows = rows
        self.row_bytes = row_bytes
        self.src_stride = src_stride
        self.dst_stride = dst_stride
        self.unit_id = unit_id
        self.token = token
        self.row = 0
        self.offset = 0
        self.started = False

    def total_bytes(self):
        return self.rows * self.row_bytes


class DmaEngine:
    """MMIO-programmed 2D tile mover with a small descriptor queue.

    Row fetches are pipelined: the first beat of a transfer pays the
    global-memory latency once, after which data streams at the configured
    rate.  Shared-memory traffic travels on the wide matrix-priority path.
    """

    QUEUE_DEPTH = 8

    def __init__(self, cfg, engine):
        self.cfg = cfg
        self.engine = engine
        self.rate = cfg.latency_cfg.dma_bytes_per_cycle
        self.beat = cfg.matrix_beat_bytes
        self.regs = {}
        self.queue = deque()
        self.active = None
        self.start_wait = 0
        self.pending_ops = 0  # smem ops in flight for the active descriptor
        self.open_tokens = {}  # token -> outstanding descriptor count

    def mmio_write(self, reg, value, cycle):
        if reg != ir.DMA_GO:
            self.regs[reg] = value
            return True
        if len(self.queue) >= self.QUEUE_DEPTH:
            self.engine.ledger.mmio_rejects += 1
            return False
        r = self.regs
        direction = r.get(ir.DMA_DIR, 0) & 0xF
        unit_id = (r.get(ir.DMA_DIR, 0) >> 4) & 0xF
        chain = bool(value & ir.MMIO_GO_CHAIN)
        if chain and self.open_tokens:
            token = next(reversed(self.open_tokens))
        else:
            token = self.engine.tracker.issue()
            self.open_tokens[token] = 0
        self.open_tokens[token] += 1
        desc = DmaDescriptor(
            direction=direction,
            src=r.get(ir.DMA_SRC, 0),
            dst=r.get(ir.DMA_DST, 0),
            rows=r.get(ir.DMA_ROWS, 0),
            row_bytes=r.get(ir.DMA_ROW_BYTES, 0),
            src_stride=r.get(ir.DMA_SRC_STRIDE, 0),
            dst_stride=r.get(ir.DMA_DST_STRIDE, 0),
            unit_id=unit_id,
            token=token,
        )
        self._check_overlap(desc)
        self.queue.append(desc)
        return True

    def mmio_read(self, reg):
        if reg == ir.DMA_BUSY:
            return 1 if (self.active or self.queue) else 0
        return self.regs.get(reg, 0)

    def _check_overlap(self, desc):
        if desc.direction in (ir.DMA_G2S, ir.DMA_S2G):
            return
        # same-space copies are not generated by the kernel builders
        if desc.src == desc.dst and desc.rows:
            raise UnitProtocolError("dma: overlapping src/dst in same space")

    def busy(self):
        return bool(self.active or self.queue or self.pending_ops)

    def tick(self, cycle):
        if self.active is None:
            if not self.queue:
                return
            self.active = self.queue.popleft()
            d = self.active
            if d.rows == 0 or d.row_bytes == 0:
                self._complete(cycle)
                return
            # one-shot pipeline fill against global memory
            if d.direction in (ir.DMA_G2S, ir.DMA_G2A):
                self.start_wait = self.cfg.latency_cfg.dram
            else:
                self.start_wait = 1
            return
        if self.start_wait > 0:
            self.start_wait -= 1
            return
        d = self.active
        moved = 0
        while moved < self.rate and d is not None:
            chunk = min(self.beat, d.row_bytes - d.offset, self.rate - moved)
            if chunk <= 0:
                break
            if not self._move_chunk(d, chunk, cycle):
                break
            moved += chunk
            d.offset += chunk
            if d.offset >= d.row_bytes:
                d.offset = 0
                d.row += 1
                if d.row >= d.rows:
                    self._drained(cycle)
                    d = None

    def _move_chunk(self, d, chunk, cycle):
        led = self.engine.ledger
        gmem = self.engine.global_mem
        src = d.src + d.row * d.src_stride + d.offset
        dst = d.dst + d.row * d.dst_stride + d.offset
        if d.direction == ir.DMA_G2S:
            payload = bytes(gmem[src - ir.GLOBAL_BASE : src - ir.GLOBAL_BASE + chunk])
            ok = self.engine.fabric.submit_wide(
                CLASS_DMA, "w", dst, chunk, self._on_smem_done, data=payload,
                cycle=cycle,
            )
            if not ok:
                return False
            self.pending_ops += 1
            led.dma_bytes["g2s"] += chunk
            return True
        if d.direction == ir.DMA_S2G:
            ok = self.engine.fabric.submit_wide(
                CLASS_DMA, "r", src, chunk,
                lambda data, c, off=dst: self._on_smem_read(off, data, c),
                cycle=cycle,
            )
            if not ok:
                return False
            self.pending_ops += 1
            led.dma_bytes["s2g"] += chunk
            return True
        unit = self.engine.units[d.unit_id]
        if d.direction == ir.DMA_A2G:
            if unit.acc_access_cycle == cycle:
                return False
            unit.acc_access_cycle = cycle
            led.accumulator_accesses += 1
            woff = (src) // 4
            values = unit.accum[woff : woff + chunk // 4]
            gmem[dst - ir.GLOBAL_BASE : dst - ir.GLOBAL_BASE + chunk] = (
                values.astype(np.float32).tobytes()
            )
            led.dma_bytes["a2g"] += chunk
            return True
        if d.direction == ir.DMA_G2A:
            if unit.acc_access_cycle == cycle:
                return False
            unit.acc_access_cycle = cycle
            led.accumulator_accesses += 1
            woff = dst // 4
            payload = bytes(
                gmem[src - ir.GLOBAL_BASE : src - ir.GLOBAL_BASE + chunk]
            )
            unit.accum[woff : woff + chunk // 4] = np.frombuffer(
                payload, dtype=np.float32
            )
            led.dma_bytes["g2a"] += chunk
            return True
        raise UnitProtocolError(f"dma: unknown direction {d.direction}")

    def _on_smem_done(self, _payload, cycle):
        self.pending_ops -= 1
        self._maybe_finish(cycle)

    def _on_smem_read(self, dst, data, cycle):
        gmem = self.engine.global_mem
        gmem[dst - ir.GLOBAL_BASE : dst - ir.GLOBAL_BASE + len(data)] = data
        self.pending_ops -= 1
        self._maybe_finish(cycle)

    def _drained(self, cycle):
        # all chunks issued; completion once in-flight smem ops settle
        d = self.active
        d.started = True
        if self.pending_ops == 0:
            self._complete(cycle)

    def _maybe_finish(self, cycle):
        d = self.active
        if d is not None and d.started and self.pending_ops == 0:
            self._complete(cycle)

    def _complete(self, cycle):
        d = self.active
        self.active = None
        self.open_tokens[d.token] -= 1
        if self.open_tokens[d.token] == 0 and not any(
            q.token == d.token for q in self.queue
        ):
            del self.open_tokens[d.token]
            self.engine.tracker.complete(d.token)
        self.engine.on_unit_idle(self)
