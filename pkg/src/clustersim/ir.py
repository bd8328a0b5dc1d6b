"""
Kernel intermediate representation.

Workloads are expressed as one flat micro-op sequence per warp.  Regular
vector sequences (fragment loads, elementwise math) are run-length encoded:
an op with `repeat > 1` issues once per repetition, advancing its memory
address and register-file offset by `step` bytes each time.  Every
repetition counts as one issued/retired instruction, so instruction-count
metrics are unaffected by the encoding.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

# --- op kinds ---------------------------------------------------------------

ALU = 0
FPOP = 1
LD_GLOBAL = 2
ST_GLOBAL = 3
LD_SHARED = 4
ST_SHARED = 5
HMMA_STEP = 6  # tightly-coupled set/step sequence; repeat = step count
WGMMA_INIT = 7  # operand-decoupled asynchronous initiate
WGMMA_WAIT = 8  # operand-decoupled wait
MMIO_WRITE = 9
MMIO_READ = 10  # plain read, or fence poll loop when poll_depth >= 0
BARRIER = 11
NOP = 12

KIND_NAMES = {
    ALU: "alu",
    FPOP: "fpop",
    LD_GLOBAL: "ld_global",
    ST_GLOBAL: "st_global",
    LD_SHARED: "ld_shared",
    ST_SHARED: "st_shared",
    HMMA_STEP: "hmma_step",
    WGMMA_INIT: "wgmma_init",
    WGMMA_WAIT: "wgmma_wait",
    MMIO_WRITE: "mmio_write",
    MMIO_READ: "mmio_read",
    BARRIER: "barrier",
    NOP: "nop",
}
N_KINDS = len(KIND_NAMES)

# FPOP sub-operations.  `ex` packs (fop << 4) | latency_class; latency class
# 0 uses the pipelined FPU latency, 1 the divider latency.  Ops with
# FOP_NONE model cost only; the others additionally execute vectorized
# float32 math on the warp's register file so real data flows through the
# kernel.
FOP_NONE = 0
FOP_P2 = 1  # dst = 1 + src1 + src1^2/2 (2nd-order Taylor exponential)
FOP_ADD = 2  # dst = src1 + src2
FOP_MUL = 3  # dst = src1 * src2
FOP_MULS = 4  # dst = src1 * scalar(src2[0])
FOP_DIV = 5  # dst = src1 / src2
FOP_ROWSTAT = 6  # running-sum stats: see core.py
FOP_ZERO = 7  # dst = 0

LAT_FPU = 0
LAT_FDIV = 1


def fpop_ex(fop, lat_class=LAT_FPU):
    return (fop << 4) | lat_class


def fpop_decode(ex):
    return ex >> 4, ex & 0xF


# HMMA `ex` bits.
HMMA_ACC_INIT = 1  # first k-step of a tile: overwrite instead of accumulate
HMMA_B_HALF = 2  # use the upper n-half of the staged B block

# MMIO write `ex` bits.
MMIO_GO_TOKEN = 1  # this GO opens a new async-op token
MMIO_GO_CHAIN = 2  # this GO joins the previous async-op token

# Pipeline-stage tags for metrics attribution.
TAG_NONE = 0
TAG_MATRIX_OPERAND = 1  # shared-memory reads delivering matrix operands
TAG_PRODUCER = 2
TAG_CONSUMER = 3
TAG_SOFTMAX = 4
TAG_EPILOGUE = 5

TAG_NAMES = {
    TAG_NONE: "none",
    TAG_MATRIX_OPERAND: "matrix_operand",
    TAG_PRODUCER: "producer",
    TAG_CONSUMER: "consumer",
    TAG_SOFTMAX: "softmax",
    TAG_EPILOGUE: "epilogue",
}

# --- address map -------------------------------------------------------------
# Shared memory occupies [0, smem_bytes).  MMIO control registers and global
# memory live in disjoint windows so a plain byte address identifies the
# target space.

MMIO_BASE = 0x0800_0000
GLOBAL_BASE = 0x8000_0000

# Per-device MMIO windows (byte offsets from MMIO_BASE).
MMIO_UNIT_STRIDE = 0x100  # matrix unit u at MMIO_BASE + u * stride
MMIO_DMA_BASE = 0x4000  # DMA engine window

# Matrix-unit command registers (byte offsets inside a unit window).
REG_A_BASE = 0x00
REG_B_BASE = 0x04
REG_D_BASE = 0x08
REG_M = 0x0C
REG_N = 0x10
REG_K = 0x14
REG_FLAGS = 0x18  # bit0 accumulate, bit1 result to shared memory
REG_GO = 0x1C
REG_BUSY = 0x20

FLAG_ACCUMULATE = 1
FLAG_D_IN_SMEM = 2

# DMA descriptor registers (byte offsets inside the DMA window).
DMA_SRC = 0x00
DMA_DST = 0x04
DMA_ROWS = 0x08
DMA_ROW_BYTES = 0x0C
DMA_SRC_STRIDE = 0x10
DMA_DST_STRIDE = 0x14
DMA_DIR = 0x18
DMA_GO = 0x1C  # value = 1 to chain onto the previous async group, 0 new group
DMA_BUSY = 0x20

DMA_G2S = 0
DMA_S2G = 1
DMA_A2G = 2  # accumulator memory -> global
DMA_G2A = 3

DMA_DIR_NAMES = {DMA_G2S: "g2s", DMA_S2G: "s2g", DMA_A2G: "a2g", DMA_G2A: "g2a"}


def unit_mmio_base(unit_id):
    return MMIO_BASE + unit_id * MMIO_UNIT_STRIDE


def dma_mmio_base():
    return MMIO_BASE + MMIO_DMA_BASE


def is_mmio(addr):
    return MMIO_BASE <= addr < GLOBAL_BASE


def is_global(addr):
    return addr >= GLOBAL_BASE


# --- micro-op ----------------------------------------------------------------


@dataclass(slots=True)
class MicroOp:
    """One warp-wide instruction (or a run-length-encoded group of them).

    Field use by kind:
      ALU/FPOP      latency class in `ex` (0 alu/fpu default, 1 fdiv)
      LD_*/ST_*     `addr` byte address, `width` bytes moved per repetition
                    (one 4B word per active lane), `rf_off` register-file
                    byte offset of the data, `step` address+rf increment
                    per repetition, `step_rf` overrides the rf increment
      HMMA_STEP     `addr`/`addr2` RF offsets of the A/B fragments, `rf_off`
                    RF offset of the accumulator, `ex` packs the B column
                    offset, `repeat` = number of set/step pairs
      WGMMA_INIT    `addr`/`addr2` shared-memory A/B fragment bases, `rf_off`
                    accumulator RF offset, `ex` bit0 = accumulate
      MMIO_WRITE    `addr` register address, `addr2` value, `ex` bit0 marks
                    a GO write that opens a new async-op token
      MMIO_READ     `addr` register address; `poll_depth >= 0` turns the op
                    into a fence that re-polls until the warp's thread block
                    has at most `poll_depth` outstanding async ops
      BARRIER       `ex` = barrier id (mask comes from the kernel image)
    """

    kind: int
    addr: int = 0
    addr2: int = 0
    rf_off: int = 0
    width: int = 32
    repeat: int = 1
    step: int = 0
    step_rf: int = -1  # -1: follow `step`
    src_mask: int = 0  # scoreboard bitmask of source RF slots
    dst_mask: int = 0  # scoreboard bitmask of destination RF slots
    tag: int = TAG_NONE
    ex: int = 0
    poll_depth: int = -1

    def rf_step(self):
        return self.step if self.step_rf < 0 else self.step_rf


# Scoreboard granularity: one busy bit per 32-byte register-file slot.
RF_SLOT_BYTES = 32


def rf_mask(offset, nbytes):
    """Bitmask of the RF slots covering [offset, offset+nbytes)."""
    if nbytes <= 0:
        return 0
    first = offset // RF_SLOT_BYTES
    last = (offset + nbytes - 1) // RF_SLOT_BYTES
    return ((1 << (last - first + 1)) - 1) << first


@dataclass
class WarpProgram:
    """Ordered micro-op sequence owned by one (core, warp) pair."""

    core: int
    warp: int
    ops: list = field(default_factory=list)

    def append(self, op):
        self.ops.append(op)

    def total_instructions(self):
        return sum(op.repeat for op in self.ops)


@dataclass
class MatrixDesc:
    """Placement of one matrix in the global-memory image."""

    name: str
    base: int  # absolute global address
    rows: int
    cols: int
    elem_bytes: int
    row_stride_bytes: int

    @property
    def nbytes(self):
        return self.rows * self.row_stride_bytes


@dataclass
class KernelImage:
    """A complete workload: per-warp programs plus the initial memory image."""

    programs: list  # WarpProgram, ordered by (core, warp)
    initial_global_memory: bytes
    layouts: dict  # name -> MatrixDesc
    barrier_masks: dict = field(default_factory=dict)  # id -> set[(core,warp)]
    meta: dict = field(default_factory=dict)

    def program_for(self, core, warp):
        return self.programs[core * self.meta["warps_per_core"] + warp]

    def total_instructions(self):
        return sum(p.total_instructions() for p in self.programs)


class KernelError(ValueError):
    """Raised when a workload cannot be mapped onto the configuration."""


def check_barriers(image):
    """Statically verify barrier participation.

    Every barrier id must be reached the same number of times by exactly the
    warps named in its mask; returns a list of violations (empty = ok).
    """
    seen = {}  # id -> {(core, warp): count}
    for prog in image.programs:
        for op in prog.ops:
            if op.kind == BARRIER:
                per = seen.setdefault(op.ex, {})
                key = (prog.core, prog.warp)
                per[key] = per.get(key, 0) + op.repeat
    problems = []
    for bid, per in sorted(seen.items()):
        mask = image.barrier_masks.get(bid)
        if mask is None:
            problems.append(f"barrier {bid}: used but not declared")
            continue
        if set(per) != set(mask):
            missing = sorted(set(mask) - set(per))
            extra = sorted(set(per) - set(mask))
            problems.append(
                f"barrier {bid}: participants mismatch "
                f"(missing {missing}, extra {extra})"
            )
            continue
        counts = set(per.values())
        if len(counts) > 1:
            problems.append(f"barrier {bid}: unequal arrival counts {sorted(counts)}")
    for bid, mask in sorted(image.barrier_masks.items()):
        if bid not in seen and mask:
            problems.append(f"barrier {bid}: declared but never reached")
    return problems


# --- kernel image serialization ---------------------------------------------
# Debugging format: a JSON manifest next to a flat binary of packed ops and
# the initial memory image.  Field order is fixed by _OP_STRUCT.

_OP_STRUCT = struct.Struct("<bqqiiiiiqqbib")


def save_kernel_image(image, path_prefix):
    """Write `<prefix>.manifest.json`, `<prefix>.ops.bin`, `<prefix>.mem.bin`."""
    manifest = {
        "meta": image.meta,
        "layouts": {
            name: {
                "base": d.base,
                "rows": d.rows,
                "cols": d.cols,
                "elem_bytes": d.elem_bytes,
                "row_stride_bytes": d.row_stride_bytes,
            }
            for name, d in image.layouts.items()
        },
        "barrier_masks": {
            str(bid): sorted(list(m)) for bid, m in image.barrier_masks.items()
        },
        "programs": [
            {"core": p.core, "warp": p.warp, "n_ops": len(p.ops)}
            for p in image.programs
        ],
        "op_struct": "<bqqiiiiiqqbib",
    }
    with open(f"{path_prefix}.manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    with open(f"{path_prefix}.ops.bin", "wb") as fh:
        for prog in image.programs:
            for op in prog.ops:
                fh.write(
                    _OP_STRUCT.pack(
                        op.kind, op.addr, op.addr2, op.rf_off, op.width,
                        op.repeat, op.step, op.step_rf, op.src_mask,
                        op.dst_mask, op.tag, op.ex, op.poll_depth,
                    )
                )
    with open(f"{path_prefix}.mem.bin", "wb") as fh:
        fh.write(image.initial_global_memory)


def load_kernel_image(path_prefix):
    with open(f"{path_prefix}.manifest.json") as fh:
        manifest = json.load(fh)
    with open(f"{path_prefix}.ops.bin", "rb") as fh:
        blob = fh.read()
    with open(f"{path_prefix}.mem.bin", "rb") as fh:
        mem = fh.read()
    programs = []
    offset = 0
    for prec in manifest["programs"]:
        ops = []
        for _ in range(prec["n_ops"]):
            vals = _OP_STRUCT.unpack_from(blob, offset)
            offset += _OP_STRUCT.size
            ops.append(MicroOp(*vals))
        programs.append(WarpProgram(prec["core"], prec["warp"], ops))
    layouts = {
        name: MatrixDesc(name=name, **d) for name, d in manifest["layouts"].items()
    }
    masks = {
        int(bid): {tuple(cw) for cw in members}
        for bid, members in manifest["barrier_masks"].items()
    }
    return KernelImage(
        programs=programs,
        initial_global_memory=mem,
        layouts=layouts,
        barrier_masks=masks,
        meta=manifest["meta"],
    )
