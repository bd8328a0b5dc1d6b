"""
Hardware configuration for the cluster simulator.

A cluster is a group of SIMT cores sharing a software-managed scratchpad
(shared memory) plus, depending on the integration variant, per-core or
cluster-level matrix units and a DMA engine.  All four variants are
parameterized through one `SoCConfig` so the same kernels and metrics can
compare them head to head.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields

# Matrix-unit integration variants.
TIGHTLY_COUPLED = "tightly-coupled"
TIGHTLY_COUPLED_DMA = "tightly-coupled-dma"
OPERAND_DECOUPLED = "operand-decoupled"
DISAGGREGATED = "disaggregated"
VARIANTS = (TIGHTLY_COUPLED, TIGHTLY_COUPLED_DMA, OPERAND_DECOUPLED, DISAGGREGATED)

# Input storage precisions.  Accumulation is always FP32.
FP16 = "fp16"
FP32 = "fp32"
PRECISIONS = (FP16, FP32)

PER_CORE = "per-core"
PER_CLUSTER = "per-cluster"


class ConfigError(ValueError):
    """Raised for malformed config documents or invariant violations."""

    def __init__(self, message, field_name=None, line=None):
        self.field_name = field_name
        self.line = line
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field_name is not None:
            prefix += f"{field_name}: "
        super().__init__(prefix + message)


@dataclass
class LatencyConfig:
    """Fixed-latency timing knobs, in cycles unless noted."""

    l1_hit: int = 4
    l2_hit: int = 20
    dram: int = 100
    smem_access: int = 2
    mmio_access: int = 2
    dma_bytes_per_cycle: int = 64
    issue_width_per_core: int = 1
    alu: int = 1
    fpu: int = 4
    fdiv: int = 12
    fence_poll_interval: int = 4


@dataclass
class MatrixUnitConfig:
    """One matrix-unit design point.

    `tile_m/n/k` is the largest single operation the unit accepts.  For the
    disaggregated unit this is a thread-block tile iterated internally by a
    hardware FSM; for core-coupled units it is the per-instruction fragment.
    """

    units_per_scope: int
    scope: str  # PER_CORE or PER_CLUSTER
    macs_per_unit_per_cycle: int
    tile_m: int
    tile_n: int
    tile_k: int
    accumulator_bytes: int = 0  # disaggregated only
    systolic_rows: int = 0  # disaggregated only
    systolic_cols: int = 0  # disaggregated only
    operand_fifo_depth: int = 4  # operand-decoupled only, in 32B beats

    def cluster_units(self, cores_per_cluster):
        if self.scope == PER_CORE:
            return self.units_per_scope * cores_per_cluster
        return self.units_per_scope

    def cluster_mac_capacity(self, cores_per_cluster):
        """Peak multiply-accumulates per cycle across the whole cluster."""
        return self.cluster_units(cores_per_cluster) * self.macs_per_unit_per_cycle


# Energy weights are unitless per-event costs; the shipped table is an
# order-of-magnitude placeholder and is NOT calibrated against silicon.
DEFAULT_ENERGY_WEIGHTS = {
    "issue": 10.0,
    "alu": 1.0,
    "fpu": 2.0,
    "rf_byte": 0.5,
    "smem_byte": 1.0,
    "mac": 0.5,
    "accum_access": 4.0,
    "dma_byte": 0.2,
    "l1_access": 20.0,
    "l2_access": 50.0,
    "dram_access": 200.0,
    "mmio": 2.0,
}


@dataclass
class SoCConfig:
    """Full hardware parameterization of one simulated design point."""

    arch_variant: str = DISAGGREGATED
    precision: str = FP16

    clusters: int = 1
    cores_per_cluster: int = 8
    warps_per_core: int = 8
    lanes_per_warp: int = 8
    alus_per_lane: int = 2
    fpus_per_lane: int = 1
    lsq_entries: int = 32

    rf_bytes_int: int = 8192  # per core
    rf_bytes_fp: int = 8192  # per core

    smem_bytes: int = 131072
    smem_banks: int = 4
    smem_subbanks_per_bank: int = 8

    l1i_bytes: int = 16384
    l1d_bytes: int = 16384
    l2_bytes: int = 524288
    l1_line_bytes: int = 64

    matrix_cfg: MatrixUnitConfig = field(
        default_factory=lambda: MatrixUnitConfig(
            units_per_scope=1,
            scope=PER_CLUSTER,
            macs_per_unit_per_cycle=256,
            tile_m=128,
            tile_n=64,
            tile_k=128,
            accumulator_bytes=32768,
            systolic_rows=16,
            systolic_cols=16,
        )
    )
    latency_cfg: LatencyConfig = field(default_factory=LatencyConfig)
    energy_weights: dict = field(default_factory=lambda: dict(DEFAULT_ENERGY_WEIGHTS))

    # Expected cluster-wide MAC capacity; None skips the parity check.  The
    # FP16 presets all provide 256 MACs/cycle per cluster.  The FP32 presets
    # intentionally break parity (64 for disaggregated vs 128 for the
    # core-coupled designs) and set this to None; reports surface raw
    # capacity so the asymmetry stays visible.
    expected_cluster_macs: int | None = 256

    rng_kind: str = "pcg64"  # fixed; recorded in reports for reproducibility
    max_cycles: int = 200_000_000

    # Derived helpers -----------------------------------------------------

    @property
    def element_bytes(self):
        return 2 if self.precision == FP16 else 4

    @property
    def rf_bytes_fp_per_warp(self):
        return self.rf_bytes_fp // self.warps_per_core

    @property
    def rf_bytes_int_per_warp(self):
        return self.rf_bytes_int // self.warps_per_core

    @property
    def smem_words(self):
        return self.smem_bytes // 4

    @property
    def matrix_beat_bytes(self):
        """Width of one wide shared-memory access from a matrix unit or DMA.

        One beat spans the subbanks of a single bank, so it is capped by the
        bank row (4 bytes x subbanks) as well as by the unit's own port.
        """
        port = 4 * max(self.matrix_cfg.systolic_cols, 8)
        return min(4 * self.smem_subbanks_per_bank, port, 64)

    def cluster_mac_capacity(self):
        return self.matrix_cfg.cluster_mac_capacity(self.cores_per_cluster)

    def total_warps(self):
        return self.cores_per_cluster * self.warps_per_core


def preset(variant, precision=FP16):
    """Return the reference configuration for a variant/precision pair.

    All FP16 presets expose the same 256 MACs/cycle of cluster-wide matrix
    compute so utilization numbers are directly comparable.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}", field_name="arch_variant")
    if precision not in PRECISIONS:
        raise ConfigError(f"unknown precision {precision!r}", field_name="precision")

    cfg = SoCConfig(arch_variant=variant, precision=precision)
    fp16 = precision == FP16

    if variant in (TIGHTLY_COUPLED, TIGHTLY_COUPLED_DMA):
        cfg.cores_per_cluster = 8
        cfg.smem_subbanks_per_bank = 16
        cfg.matrix_cfg = MatrixUnitConfig(
            units_per_scope=1,
            scope=PER_CORE,
            macs_per_unit_per_cycle=32 if fp16 else 16,
            tile_m=8,
            tile_n=8,
            tile_k=16 if fp16 else 8,
        )
    elif variant == OPERAND_DECOUPLED:
        cfg.cores_per_cluster = 4
        cfg.smem_subbanks_per_bank = 8
        cfg.matrix_cfg = MatrixUnitConfig(
            units_per_scope=1,
            scope=PER_CORE,
            macs_per_unit_per_cycle=64 if fp16 else 32,
            tile_m=16,
            tile_n=16,
            tile_k=32 if fp16 else 16,
        )
    else:  # DISAGGREGATED
        cfg.cores_per_cluster = 8
        cfg.smem_subbanks_per_bank = 8
        dim = 16 if fp16 else 8
        cfg.matrix_cfg = MatrixUnitConfig(
            units_per_scope=1,
            scope=PER_CLUSTER,
            macs_per_unit_per_cycle=dim * dim,
            tile_m=128,
            tile_n=64,
            tile_k=128 if fp16 else 64,
            accumulator_bytes=32768,
            systolic_rows=dim,
            systolic_cols=dim,
        )

    cfg.expected_cluster_macs = 256 if fp16 else None
    violations = validate(cfg)
    if violations:
        raise ConfigError("; ".join(violations), field_name="preset")
    return cfg


def validate(cfg):
    """Check all configuration invariants.

    Returns a list of human-readable violations, each naming the offending
    field; an empty list means the config is usable.
    """
    v = []
    if cfg.arch_variant not in VARIANTS:
        v.append(f"arch_variant: unknown variant {cfg.arch_variant!r}")
        return v
    if cfg.precision not in PRECISIONS:
        v.append(f"precision: unknown precision {cfg.precision!r}")
        return v

    if cfg.smem_banks < 1:
        v.append("smem_banks: must be >= 1")
    if cfg.smem_subbanks_per_bank < 1:
        v.append("smem_subbanks_per_bank: must be >= 1")
    if cfg.smem_banks >= 1 and cfg.smem_subbanks_per_bank >= 1:
        row = cfg.smem_banks * cfg.smem_subbanks_per_bank * 4
        if cfg.smem_bytes % row != 0:
            v.append(
                f"smem_bytes: {cfg.smem_bytes} not divisible by banks*subbanks*4={row}"
            )
    if cfg.lanes_per_warp * 4 > cfg.l1_line_bytes:
        v.append(
            "l1_line_bytes: smaller than one full-warp access "
            f"({cfg.lanes_per_warp * 4} B)"
        )

    mu = cfg.matrix_cfg
    if mu.scope not in (PER_CORE, PER_CLUSTER):
        v.append(f"matrix_cfg.scope: unknown scope {mu.scope!r}")
    ebytes = cfg.element_bytes
    if cfg.arch_variant in (TIGHTLY_COUPLED, TIGHTLY_COUPLED_DMA):
        need = (
            mu.tile_m * mu.tile_k * ebytes
            + mu.tile_k * mu.tile_n * ebytes
            + mu.tile_m * mu.tile_n * 4
        )
        if need > cfg.rf_bytes_fp_per_warp:
            v.append(
                f"rf_bytes_fp: per-warp budget {cfg.rf_bytes_fp_per_warp} B cannot "
                f"hold operand+accumulator fragments ({need} B)"
            )
    elif cfg.arch_variant == OPERAND_DECOUPLED:
        need = mu.tile_m * mu.tile_n * 4
        if need > cfg.rf_bytes_fp_per_warp:
            v.append(
                f"rf_bytes_fp: per-warp budget {cfg.rf_bytes_fp_per_warp} B cannot "
                f"hold the accumulator fragment ({need} B)"
            )
    else:  # DISAGGREGATED
        if mu.systolic_rows < 1 or mu.systolic_cols < 1:
            v.append("matrix_cfg.systolic_rows/cols: required for disaggregated")
        need = mu.tile_m * mu.tile_n * 4
        if mu.accumulator_bytes < need:
            v.append(
                f"matrix_cfg.accumulator_bytes: {mu.accumulator_bytes} < "
                f"tile_m*tile_n*4 = {need}"
            )
        if mu.systolic_rows and mu.systolic_cols:
            if mu.macs_per_unit_per_cycle != mu.systolic_rows * mu.systolic_cols:
                v.append(
                    "matrix_cfg.macs_per_unit_per_cycle: must equal "
                    "systolic_rows*systolic_cols"
                )

    if cfg.expected_cluster_macs is not None:
        cap = cfg.cluster_mac_capacity()
        if cap != cfg.expected_cluster_macs:
            v.append(
                f"matrix_cfg: cluster MAC capacity {cap} breaks parity with the "
                f"expected {cfg.expected_cluster_macs}"
            )

    lat = cfg.latency_cfg
    for name in ("l1_hit", "l2_hit", "dram", "smem_access", "mmio_access",
                 "issue_width_per_core", "alu", "fpu", "fdiv",
                 "fence_poll_interval"):
        if getattr(lat, name) < 1:
            v.append(f"latency_cfg.{name}: must be >= 1")
    if lat.dma_bytes_per_cycle < 4:
        v.append("latency_cfg.dma_bytes_per_cycle: must be >= 4")

    for key, w in cfg.energy_weights.items():
        if w < 0:
            v.append(f"energy_weights.{key}: negative weight")

    return v


# ---------------------------------------------------------------------------
# Flat key-value config documents.
#
# Grammar: one `section.key = value` per line; `#` starts a comment; blank
# lines ignored.  `matrix.variant` and `matrix.precision` select the preset
# used as the base; every other key overrides one field.

_SOC_KEYS = {
    "clusters", "cores_per_cluster", "warps_per_core", "lanes_per_warp",
    "alus_per_lane", "fpus_per_lane", "lsq_entries", "rf_bytes_int",
    "rf_bytes_fp", "l1i_bytes", "l1d_bytes", "l2_bytes", "l1_line_bytes",
    "max_cycles",
}
_SMEM_KEYS = {"bytes": "smem_bytes", "banks": "smem_banks",
              "subbanks_per_bank": "smem_subbanks_per_bank"}
_MATRIX_KEYS = {
    "units_per_scope", "macs_per_unit_per_cycle", "tile_m", "tile_n", "tile_k",
    "accumulator_bytes", "systolic_rows", "systolic_cols", "operand_fifo_depth",
}
_LAT_KEYS = {f.name for f in fields(LatencyConfig)}


def load_config(text):
    """Parse a flat key-value config document into a validated SoCConfig.

    An empty document yields the disaggregated FP16 preset.
    """
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError("expected 'key = value'", line=lineno)
        entries.append((lineno, key, value))

    variant = DISAGGREGATED
    precision = FP16
    for lineno, key, value in entries:
        if key == "matrix.variant":
            if value not in VARIANTS:
                raise ConfigError(f"unknown variant {value!r}", key, lineno)
            variant = value
        elif key == "matrix.precision":
            if value not in PRECISIONS:
                raise ConfigError(f"unknown precision {value!r}", key, lineno)
            precision = value

    cfg = preset(variant, precision)

    def _int(value, key, lineno):
        try:
            return int(value, 0)
        except ValueError:
            raise ConfigError(f"expected integer, got {value!r}", key, lineno)

    for lineno, key, value in entries:
        if key in ("matrix.variant", "matrix.precision"):
            continue
        section, _, name = key.partition(".")
        if section == "soc" and name in _SOC_KEYS:
            setattr(cfg, name, _int(value, key, lineno))
        elif section == "smem" and name in _SMEM_KEYS:
            setattr(cfg, _SMEM_KEYS[name], _int(value, key, lineno))
        elif section == "matrix" and name == "scope":
            if value not in (PER_CORE, PER_CLUSTER):
                raise ConfigError(f"unknown scope {value!r}", key, lineno)
            cfg.matrix_cfg.scope = value
        elif section == "matrix" and name in _MATRIX_KEYS:
            setattr(cfg.matrix_cfg, name, _int(value, key, lineno))
        elif section == "matrix" and name == "expected_cluster_macs":
            cfg.expected_cluster_macs = (
                None if value.lower() == "none" else _int(value, key, lineno)
            )
        elif section == "latency" and name in _LAT_KEYS:
            setattr(cfg.latency_cfg, name, _int(value, key, lineno))
        elif section == "energy":
            try:
                cfg.energy_weights[name] = float(value)
            except ValueError:
                raise ConfigError(f"expected float, got {value!r}", key, lineno)
        else:
            raise ConfigError("unknown key", key, lineno)

    violations = validate(cfg)
    if violations:
        raise ConfigError(violations[0], field_name=violations[0].split(":")[0])
    return cfg


def render_config(cfg):
    """Render a config back into the flat document format.

    `load_config(render_config(cfg)) == cfg` holds for any valid config.
    """
    lines = [
        f"matrix.variant = {cfg.arch_variant}",
        f"matrix.precision = {cfg.precision}",
    ]
    base = preset(cfg.arch_variant, cfg.precision)
    for name in sorted(_SOC_KEYS):
        if getattr(cfg, name) != getattr(base, name):
            lines.append(f"soc.{name} = {getattr(cfg, name)}")
    for short, name in sorted(_SMEM_KEYS.items()):
        if getattr(cfg, name) != getattr(base, name):
            lines.append(f"smem.{short} = {getattr(cfg, name)}")
    if cfg.matrix_cfg.scope != base.matrix_cfg.scope:
        lines.append(f"matrix.scope = {cfg.matrix_cfg.scope}")
    for name in sorted(_MATRIX_KEYS):
        if getattr(cfg.matrix_cfg, name) != getattr(base.matrix_cfg, name):
            lines.append(f"matrix.{name} = {getattr(cfg.matrix_cfg, name)}")
    if cfg.expected_cluster_macs != base.expected_cluster_macs:
        lines.append(f"matrix.expected_cluster_macs = {cfg.expected_cluster_macs}")
    for name in sorted(_LAT_KEYS):
        if getattr(cfg.latency_cfg, name) != getattr(base.latency_cfg, name):
            lines.append(f"latency.{name} = {getattr(cfg.latency_cfg, name)}")
    for key in sorted(cfg.energy_weights):
        if cfg.energy_weights[key] != base.energy_weights.get(key):
            lines.append(f"energy.{key} = {cfg.energy_weights[key]}")
    return "\n".join(lines) + "\n"


def clone(cfg):
    """Deep copy for configs that will be mutated (e.g. multi-unit setups)."""
    return copy.deepcopy(cfg)
