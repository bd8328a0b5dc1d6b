"""
Event ledger and derived metrics.

Every energy- or performance-relevant hardware event increments a counter
here; utilization, instruction ratios, the shared-memory read footprint and
the weight-parameterized energy proxy are all pure functions of a ledger.
No absolute watts are modeled: energy is `weight x event count` with a
user-supplied weight table.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

from . import ir

MIB = float(1 << 20)

RF_PURPOSES = ("operand", "accumulator", "scalar")
SMEM_CLASSES = ("core", "matrix", "dma")
DMA_DIRECTIONS = ("g2s", "s2g", "a2g", "g2a")

# Energy event classes and their report category.
ENERGY_CATEGORY = {
    "issue": "core-issue",
    "alu": "core-alu-fpu",
    "fpu": "core-alu-fpu",
    "rf_byte": "register-file",
    "smem_byte": "shared-memory",
    "mac": "matrix-unit",
    "accum_access": "matrix-unit",
    "dma_byte": "dma",
    "l1_access": "cache",
    "l2_access": "cache",
    "dram_access": "cache",
    "mmio": "core-issue",
}
ENERGY_CATEGORIES = (
    "core-issue", "core-alu-fpu", "register-file", "shared-memory",
    "matrix-unit", "dma", "cache",
)


class MetricsError(ValueError):
    pass


@dataclass
class EventLedger:
    """Monotone counters for one simulation run."""

    cycles: int = 0
    macs: int = 0

    # retired instructions by op kind / by pipeline tag
    retired: list = field(default_factory=lambda: [0] * ir.N_KINDS)
    retired_by_tag: dict = field(default_factory=dict)

    rf_read_bytes: dict = field(default_factory=lambda: {p: 0 for p in RF_PURPOSES})
    rf_write_bytes: dict = field(default_factory=lambda: {p: 0 for p in RF_PURPOSES})

    smem_read_bytes: dict = field(default_factory=lambda: {c: 0 for c in SMEM_CLASSES})
    smem_write_bytes: dict = field(default_factory=lambda: {c: 0 for c in SMEM_CLASSES})
    # core reads tagged as matrix-operand delivery (tightly-coupled designs);
    # included in the footprint on top of matrix-unit reads
    smem_matrix_operand_core_read_bytes: int = 0

    dma_bytes: dict = field(default_factory=lambda: {d: 0 for d in DMA_DIRECTIONS})

    issue_stalls: int = 0
    fence_calls: int = 0
    fence_polls: int = 0
    fence_blocked_cycles: int = 0
    barrier_wait_cycles: int = 0
    fabric_defer_cycles: int = 0
    accumulator_accesses: int = 0
    mmio_rejects: int = 0

    l1_accesses: int = 0
    l1_misses: int = 0
    l2_accesses: int = 0
    dram_accesses: int = 0

    def retire(self, kind, tag=ir.TAG_NONE, count=1):
        self.retired[kind] += count
        if tag:
            self.retired_by_tag[tag] = self.retired_by_tag.get(tag, 0) + count

    def total_retired(self):
        return sum(self.retired)

    def alu_ops(self):
        return self.retired[ir.ALU]

    def fpu_ops(self):
        return self.retired[ir.FPOP]

    def rf_bytes_total(self):
        return sum(self.rf_read_bytes.values()) + sum(self.rf_write_bytes.values())

    def smem_bytes_total(self):
        return sum(self.smem_read_bytes.values()) + sum(self.smem_write_bytes.values())

    def dma_bytes_total(self):
        return sum(self.dma_bytes.values())

    def event_counts(self):
        """Raw counts per energy event class."""
        return {
            "issue": self.total_retired() + self.issue_stalls,
            "alu": self.alu_ops(),
            "fpu": self.fpu_ops(),
            "rf_byte": self.rf_bytes_total(),
            "smem_byte": self.smem_bytes_total(),
            "mac": self.macs,
            "accum_access": self.accumulator_accesses,
            "dma_byte": self.dma_bytes_total(),
            "l1_access": self.l1_accesses,
            "l2_access": self.l2_accesses,
            "dram_access": self.dram_accesses,
            "mmio": self.retired[ir.MMIO_READ] + self.retired[ir.MMIO_WRITE],
        }

    def total_event_count(self):
        return sum(self.event_counts().values())

    def merge(self, other):
        """Aggregate another ledger into this one (associative, commutative)."""
        self.cycles += other.cycles
        self.macs += other.macs
        for i, n in enumerate(other.retired):
            self.retired[i] += n
        for tag, n in other.retired_by_tag.items():
            self.retired_by_tag[tag] = self.retired_by_tag.get(tag, 0) + n
        for d in ("rf_read_bytes", "rf_write_bytes", "smem_read_bytes",
                  "smem_write_bytes", "dma_bytes"):
            mine, theirs = getattr(self, d), getattr(other, d)
            for key, n in theirs.items():
                mine[key] += n
        for name in ("smem_matrix_operand_core_read_bytes", "issue_stalls",
                     "fence_calls", "fence_polls", "fence_blocked_cycles",
                     "barrier_wait_cycles", "fabric_defer_cycles",
                     "accumulator_accesses", "mmio_rejects", "l1_accesses",
                     "l1_misses", "l2_accesses", "dram_accesses"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        return self


def utilization(ledger, cfg):
    """MAC unit utilization in percent: performed MACs over peak MAC slots."""
    if ledger.cycles <= 0:
        raise MetricsError("utilization undefined for zero cycles")
    capacity = cfg.cluster_mac_capacity()
    return 100.0 * ledger.macs / (capacity * ledger.cycles)


def footprint(ledger):
    """Shared-memory read bytes spent delivering matrix operands.

    Counts matrix-unit reads plus core loads tagged as matrix-operand
    delivery (the tightly-coupled designs stage operands through the
    register file with core load instructions).  DMA and untagged core
    traffic are excluded.
    """
    return (
        ledger.smem_read_bytes["matrix"]
        + ledger.smem_matrix_operand_core_read_bytes
    )


def instruction_ratio(ledger_a, ledger_b):
    """Retired-instruction ratio sum(a)/sum(b)."""
    total_b = ledger_b.total_retired()
    if total_b == 0:
        raise MetricsError("instruction ratio undefined: denominator retired 0")
    return ledger_a.total_retired() / total_b


def fence_overhead_pct(ledger, cfg):
    """Fence-poll overhead as a percentage of total warp-slot cycles."""
    if ledger.cycles <= 0:
        return 0.0
    slots = ledger.cycles * cfg.total_warps()
    return 100.0 * ledger.fence_blocked_cycles / slots


def mean_fence_interval(ledger):
    """Mean cycles a fence call spends blocked in its poll loop."""
    if ledger.fence_calls == 0:
        return 0.0
    return ledger.fence_blocked_cycles / ledger.fence_calls


@dataclass
class EnergyReport:
    categories: dict  # category -> weighted energy
    weights: dict

    @property
    def total(self):
        return sum(self.categories.values())


def energy(ledger, weights):
    """Linear energy proxy: sum over event classes of weight x count.

    Raises if any class with a nonzero count is missing from the weight
    table; classes the table covers but the run never exercised are fine.
    """
    counts = ledger.event_counts()
    missing = sorted(k for k, n in counts.items() if n > 0 and k not in weights)
    if missing:
        raise MetricsError(f"missing energy weights for event classes: {missing}")
    cats = {c: 0.0 for c in ENERGY_CATEGORIES}
    for klass, count in counts.items():
        if count and klass in weights:
            cats[ENERGY_CATEGORY[klass]] += weights[klass] * count
    return EnergyReport(categories=cats, weights=dict(weights))


# ---------------------------------------------------------------------------
# Report emission.  Column order is fixed and versioned; rows are sorted by
# (variant, workload, size) so identical inputs give byte-identical output.

REPORT_SCHEMA_VERSION = 1

REPORT_COLUMNS = (
    "variant", "workload", "size", "seed", "precision", "cycles", "macs",
    "mac_capacity", "utilization_pct", "retired_total", "footprint_bytes",
    "footprint_mib", "fence_overhead_pct", "mean_fence_interval",
    "barrier_wait_cycles", "issue_stalls", "fabric_defer_cycles",
    "smem_read_core", "smem_read_matrix", "smem_read_dma",
    "smem_write_core", "smem_write_matrix", "smem_write_dma",
    "rf_read_operand", "rf_read_accumulator", "rf_read_scalar",
    "rf_write_operand", "rf_write_accumulator", "rf_write_scalar",
    "dma_g2s", "dma_s2g", "dma_a2g", "dma_g2a", "accumulator_accesses",
    "energy_core_issue", "energy_core_alu_fpu", "energy_register_file",
    "energy_shared_memory", "energy_matrix_unit", "energy_dma",
    "energy_cache", "energy_total", "oracle_max_rel_err",
)


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


@dataclass
class ReportRow:
    """One (variant, workload, size) cell of an experiment report."""

    variant: str
    workload: str
    size: str
    seed: int
    precision: str
    ledger: EventLedger
    cfg: object
    oracle_max_rel_err: float = 0.0

    def values(self):
        led = self.ledger
        erep = energy(led, self.cfg.energy_weights)
        fp = footprint(led)
        vals = {
            "variant": self.variant,
            "workload": self.workload,
            "size": self.size,
            "seed": self.seed,
            "precision": self.precision,
            "cycles": led.cycles,
            "macs": led.macs,
            "mac_capacity": self.cfg.cluster_mac_capacity(),
            "utilization_pct": utilization(led, self.cfg),
            "retired_total": led.total_retired(),
            "footprint_bytes": fp,
            "footprint_mib": fp / MIB,
            "fence_overhead_pct": fence_overhead_pct(led, self.cfg),
            "mean_fence_interval": mean_fence_interval(led),
            "barrier_wait_cycles": led.barrier_wait_cycles,
            "issue_stalls": led.issue_stalls,
            "fabric_defer_cycles": led.fabric_defer_cycles,
            "smem_read_core": led.smem_read_bytes["core"],
            "smem_read_matrix": led.smem_read_bytes["matrix"],
            "smem_read_dma": led.smem_read_bytes["dma"],
            "smem_write_core": led.smem_write_bytes["core"],
            "smem_write_matrix": led.smem_write_bytes["matrix"],
            "smem_write_dma": led.smem_write_bytes["dma"],
            "rf_read_operand": led.rf_read_bytes["operand"],
            "rf_read_accumulator": led.rf_read_bytes["accumulator"],
            "rf_read_scalar": led.rf_read_bytes["scalar"],
            "rf_write_operand": led.rf_write_bytes["operand"],
            "rf_write_accumulator": led.rf_write_bytes["accumulator"],
            "rf_write_scalar": led.rf_write_bytes["scalar"],
            "dma_g2s": led.dma_bytes["g2s"],
            "dma_s2g": led.dma_bytes["s2g"],
            "dma_a2g": led.dma_bytes["a2g"],
            "dma_g2a": led.dma_bytes["g2a"],
            "accumulator_accesses": led.accumulator_accesses,
            "energy_core_issue": erep.categories["core-issue"],
            "energy_core_alu_fpu": erep.categories["core-alu-fpu"],
            "energy_register_file": erep.categories["register-file"],
            "energy_shared_memory": erep.categories["shared-memory"],
            "energy_matrix_unit": erep.categories["matrix-unit"],
            "energy_dma": erep.categories["dma"],
            "energy_cache": erep.categories["cache"],
            "energy_total": erep.total,
            "oracle_max_rel_err": self.oracle_max_rel_err,
        }
        return vals


def emit_report(rows, fmt="csv"):
    """Render report rows as CSV or a markdown table (identical numbers)."""
    if not rows:
        raise MetricsError("emit_report requires at least one row")
    if fmt not in ("csv", "markdown"):
        raise MetricsError(f"unknown report format {fmt!r}")
    ordered = sorted(rows, key=lambda r: (r.variant, r.workload, r.size, r.seed))
    table = [[_fmt(row.values()[col]) for col in REPORT_COLUMNS] for row in ordered]

    out = io.StringIO()
    if fmt == "csv":
        out.write(f"# clustersim report v{REPORT_SCHEMA_VERSION}\n")
        out.write(",".join(REPORT_COLUMNS) + "\n")
        for cells in table:
            out.write(",".join(cells) + "\n")
    else:
        out.write("| " + " | ".join(REPORT_COLUMNS) + " |\n")
        out.write("|" + "|".join("---" for _ in REPORT_COLUMNS) + "|\n")
        for cells in table:
            out.write("| " + " | ".join(cells) + " |\n")
    return out.getvalue()
