"""Cycle-annotated micro-op trace of one forward pass.

The forward pass compiles to a flat sequence of micro-operations (MACs,
bias adds, ReLU elements, exp and normalization elements), each owning an
inclusive cycle interval. An external offset measured in cycles since the
inference trigger therefore addresses exactly one perturbable operation.

Cycle accounting: the trace starts after a fixed prologue (input copy,
call overhead), layers are contiguous with no gaps, and each layer may
carry a small setup allowance (loop/function entry) that is attributed to
its first op. The setup term is not optional bookkeeping: the published
reference windows cannot be reproduced by per-kind op costs alone (the
output window length 78343 is not divisible by the 32 output neurons, and
gcd arguments rule out every uniform-cost assignment), so a per-layer
setup is part of the cost model.
"""
from __future__ import annotations

import csv
import enum
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Mapping

from .model import ModelDims


class OpKind(enum.Enum):
    MAC = "MAC"
    BIAS_ADD = "BIAS_ADD"
    RELU_ELEM = "RELU_ELEM"
    EXP_ELEM = "EXP_ELEM"
    NORM_ELEM = "NORM_ELEM"


class Layer(enum.Enum):
    DENSE1 = "Dense1"
    RELU1 = "ReLU1"
    DENSE2 = "Dense2"
    RELU2 = "ReLU2"
    OUTPUT = "Output"


LAYER_ORDER = (Layer.DENSE1, Layer.RELU1, Layer.DENSE2, Layer.RELU2, Layer.OUTPUT)


@dataclass(frozen=True)
class MicroOp:
    kind: OpKind
    layer: Layer
    neuron: int
    operand: int  # input index for MAC, else 0
    cycle_start: int
    cycle_end: int


@dataclass(frozen=True)
class CostModel:
    """Per-kind cycle costs plus prologue and per-layer setup cycles."""

    cycles_per: Mapping[OpKind, int]
    prologue_cycles: int = 0
    layer_setup: Mapping[Layer, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for kind in OpKind:
            if self.cycles_per.get(kind, 0) < 1:
                raise ValueError(f"cost for {kind.value} must be >= 1")
        if self.prologue_cycles < 0:
            raise ValueError("prologue_cycles must be >= 0")
        if any(v < 0 for v in self.layer_setup.values()):
            raise ValueError("layer setup cycles must be >= 0")

    def cost(self, kind: OpKind) -> int:
        return self.cycles_per[kind]

    def setup(self, layer: Layer) -> int:
        return self.layer_setup.get(layer, 0)


@dataclass(frozen=True)
class MicroOpTrace:
    ops: tuple[MicroOp, ...]
    trigger_cycle: int  # first op's cycle_start
    total_cycles: int   # last op's cycle_end
    windows: Mapping[Layer, tuple[int, int]]
    _starts: tuple[int, ...] = field(repr=False, default=())

    def __len__(self) -> int:
        return len(self.ops)


DEFAULT_COST_MODEL = CostModel(
    cycles_per={
        OpKind.MAC: 2,
        OpKind.BIAS_ADD: 1,
        OpKind.RELU_ELEM: 1,
        OpKind.EXP_ELEM: 8,
        OpKind.NORM_ELEM: 4,
    },
    prologue_cycles=0,
)

# Calibrated against cycle ranges measured on a reference C build of the
# network on a ChipWhisperer-hosted MCU target. The integer fit is exact:
#   Dense1 [687, 14047]   = 1  + 8 * (10 * 113 + 540)
#   ReLU1  [14048, 15602] = 3  + 8 * 194
#   Dense2 [15603, 37269] = 7  + 15 * (8 * 113 + 540)
#   ReLU2  [37270, 40259] = 80 + 15 * 194
#   Output [40260, 118602]= 7  + 32 * (15 * 113 + 540 + 160 + 53)
# The reference build prints Dense1's window end as 140047; that is a typo
# for 14047 (ReLU1 starts at 14048), and the fit treats it as such.
REFERENCE_MCU_DIMS = ModelDims(d=10, h1=8, h2=15)
REFERENCE_MCU_COST_MODEL = CostModel(
    cycles_per={
        OpKind.MAC: 113,
        OpKind.BIAS_ADD: 540,
        OpKind.RELU_ELEM: 194,
        OpKind.EXP_ELEM: 160,
        OpKind.NORM_ELEM: 53,
    },
    prologue_cycles=687,
    layer_setup={
        Layer.DENSE1: 1,
        Layer.RELU1: 3,
        Layer.DENSE2: 7,
        Layer.RELU2: 80,
        Layer.OUTPUT: 7,
    },
)

TRACE_PRESETS: dict[str, tuple[ModelDims, CostModel]] = {
    "default": (ModelDims(), DEFAULT_COST_MODEL),
    "reference-mcu": (REFERENCE_MCU_DIMS, REFERENCE_MCU_COST_MODEL),
}


def compile_trace(dims: ModelDims, cost: CostModel) -> MicroOpTrace:
    """Lay out the forward pass as contiguous cycle-stamped micro-ops.

    Dense layers emit one MAC per (neuron, input) pair, neurons outer and
    inputs inner, each neuron closed by its BIAS_ADD. ReLU layers emit one
    op per element. The output layer emits its MAC/BIAS_ADD chain, then an
    EXP_ELEM block, then a NORM_ELEM block (the normalizer needs every
    exponential before any division). A layer's setup cycles widen its
    first op.
    """
    ops: list[MicroOp] = []
    cycle = cost.prologue_cycles

    def emit(kind: OpKind, layer: Layer, neuron: int, operand: int,
             extra: int) -> None:
        nonlocal cycle
        width = cost.cost(kind) + extra
        ops.append(MicroOp(kind, layer, neuron, operand, cycle, cycle + width - 1))
        cycle += width

    def dense_layer(layer: Layer, n_out: int, n_in: int) -> None:
        extra = cost.setup(layer)
        for j in range(n_out):
            for i in range(n_in):
                emit(OpKind.MAC, layer, j, i, extra)
                extra = 0
            emit(OpKind.BIAS_ADD, layer, j, 0, 0)

    def relu_layer(layer: Layer, n: int) -> None:
        extra = cost.setup(layer)
        for j in range(n):
            emit(OpKind.RELU_ELEM, layer, j, 0, extra)
            extra = 0

    dense_layer(Layer.DENSE1, dims.h1, dims.d)
    relu_layer(Layer.RELU1, dims.h1)
    dense_layer(Layer.DENSE2, dims.h2, dims.h1)
    relu_layer(Layer.RELU2, dims.h2)

    extra = cost.setup(Layer.OUTPUT)
    for j in range(dims.c):
        for i in range(dims.h2):
            emit(OpKind.MAC, Layer.OUTPUT, j, i, extra)
            extra = 0
        emit(OpKind.BIAS_ADD, Layer.OUTPUT, j, 0, 0)
    for j in range(dims.c):
        emit(OpKind.EXP_ELEM, Layer.OUTPUT, j, 0, 0)
    for j in range(dims.c):
        emit(OpKind.NORM_ELEM, Layer.OUTPUT, j, 0, 0)

    windows: dict[Layer, tuple[int, int]] = {}
    for op in ops:
        lo, hi = windows.get(op.layer, (op.cycle_start, op.cycle_end))
        windows[op.layer] = (min(lo, op.cycle_start), max(hi, op.cycle_end))

    return MicroOpTrace(
        ops=tuple(ops),
        trigger_cycle=ops[0].cycle_start,
        total_cycles=ops[-1].cycle_end,
        windows=windows,
        _starts=tuple(op.cycle_start for op in ops),
    )


def layer_windows(trace: MicroOpTrace) -> dict[Layer, tuple[int, int]]:
    """Inclusive per-layer cycle ranges; contiguous, covering the trace."""
    return dict(trace.windows)


class OutOfTraceError(ValueError):
    """Raised when a cycle falls outside the compiled trace span."""


def locate(trace: MicroOpTrace, cycle: int) -> MicroOp:
    """Return the unique op whose cycle interval contains the cycle.

    Binary search over op start cycles: O(log n).
    """
    if not trace.trigger_cycle <= cycle <= trace.total_cycles:
        raise OutOfTraceError(
            f"cycle {cycle} outside trace span "
            f"[{trace.trigger_cycle}, {trace.total_cycles}]"
        )
    idx = bisect_right(trace._starts, cycle) - 1
    return trace.ops[idx]


def dense_to_relu_cycle_ratio(dims: ModelDims, cost: CostModel) -> float:
    """Closed-form ratio of dense+output cycles to ReLU cycles.

    With a kind-uniform susceptibility this is exactly the ratio of
    faultable cycle mass between the MAC-heavy layers and the ReLU layers.
    """
    def dense_len(layer: Layer, n_out: int, n_in: int) -> int:
        return cost.setup(layer) + n_out * (
            n_in * cost.cost(OpKind.MAC) + cost.cost(OpKind.BIAS_ADD)
        )

    d1 = dense_len(Layer.DENSE1, dims.h1, dims.d)
    d2 = dense_len(Layer.DENSE2, dims.h2, dims.h1)
    out = cost.setup(Layer.OUTPUT) + dims.c * (
        dims.h2 * cost.cost(OpKind.MAC)
        + cost.cost(OpKind.BIAS_ADD)
        + cost.cost(OpKind.EXP_ELEM)
        + cost.cost(OpKind.NORM_ELEM)
    )
    r1 = cost.setup(Layer.RELU1) + dims.h1 * cost.cost(OpKind.RELU_ELEM)
    r2 = cost.setup(Layer.RELU2) + dims.h2 * cost.cost(OpKind.RELU_ELEM)
    return (d1 + d2 + out) / (r1 + r2)


def dump_trace_csv(trace: MicroOpTrace, fp) -> None:
    """Diagnostic dump: kind, layer, neuron, operand, cycle_start, cycle_end."""
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(["kind", "layer", "neuron", "operand", "cycle_start", "cycle_end"])
    for op in trace.ops:
        writer.writerow([
            op.kind.value, op.layer.value, op.neuron, op.operand,
            op.cycle_start, op.cycle_end,
        ])
