import io

import numpy as np
import pytest

from glitchsim.model import ModelDims
from glitchsim.trace import (LAYER_ORDER, REFERENCE_MCU_COST_MODEL,
                             REFERENCE_MCU_DIMS, TRACE_PRESETS, CostModel,
                             Layer, OpKind, OutOfTraceError, compile_trace,
                             dense_to_relu_cycle_ratio, dump_trace_csv,
                             layer_windows, locate)

UNIT_COST = CostModel(cycles_per={k: 1 for k in OpKind}, prologue_cycles=0)

PUBLISHED_WINDOWS = {
    Layer.DENSE1: (687, 14047),  # printed end 140047 is a typo for 14047
    Layer.RELU1: (14048, 15602),
    Layer.DENSE2: (15603, 37269),
    Layer.RELU2: (37270, 40259),
    Layer.OUTPUT: (40260, 118602),
}


@pytest.fixture(scope="module")
def ref():
    return compile_trace(REFERENCE_MCU_DIMS, REFERENCE_MCU_COST_MODEL)


class TestCompile:
    def test_minimal_dims_sequence(self):
        trace = compile_trace(ModelDims(d=1, h1=1, h2=1), UNIT_COST)
        kinds = [op.kind for op in trace.ops]
        head = [OpKind.MAC, OpKind.BIAS_ADD, OpKind.RELU_ELEM,
                OpKind.MAC, OpKind.BIAS_ADD, OpKind.RELU_ELEM]
        assert kinds[:6] == head
        tail = kinds[6:]
        assert tail.count(OpKind.MAC) == 32
        assert tail.count(OpKind.BIAS_ADD) == 32
        assert tail == tail[:64] + [OpKind.EXP_ELEM] * 32 + [OpKind.NORM_ELEM] * 32
        # unit costs, zero prologue: cycles run 0, 1, 2, ...
        for i, op in enumerate(trace.ops):
            assert (op.cycle_start, op.cycle_end) == (i, i)

    def test_zero_dimension_rejected(self):
        with pytest.raises(ValueError):
            ModelDims(d=0, h1=1, h2=1)
        with pytest.raises(ValueError):
            CostModel(cycles_per={k: 0 for k in OpKind})

    def test_contiguous_no_gaps_no_overlap(self, ref):
        prev_end = ref.ops[0].cycle_start - 1
        for op in ref.ops:
            assert op.cycle_start == prev_end + 1
            assert op.cycle_start <= op.cycle_end
            prev_end = op.cycle_end

    def test_layer_order(self, ref):
        order = {layer: i for i, layer in enumerate(LAYER_ORDER)}
        indices = [order[op.layer] for op in ref.ops]
        assert indices == sorted(indices)


class TestWindows:
    def test_reference_windows_exact(self, ref):
        assert layer_windows(ref) == PUBLISHED_WINDOWS

    def test_window_contiguity(self, ref):
        w = layer_windows(ref)
        assert w[Layer.RELU2][0] == w[Layer.DENSE2][1] + 1
        for a, b in zip(LAYER_ORDER, LAYER_ORDER[1:]):
            assert w[b][0] == w[a][1] + 1
        assert w[Layer.DENSE1][0] == ref.trigger_cycle
        assert w[Layer.OUTPUT][1] == ref.total_cycles

    def test_single_layer_degenerate(self):
        trace = compile_trace(ModelDims(d=1, h1=1, h2=1), UNIT_COST)
        w = layer_windows(trace)
        spans = sorted(v for v in w.values())
        assert spans[0][0] == trace.trigger_cycle
        assert spans[-1][1] == trace.total_cycles

    def test_closed_form_window_lengths(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            dims = ModelDims(d=int(rng.integers(1, 12)),
                             h1=int(rng.integers(1, 12)),
                             h2=int(rng.integers(1, 12)))
            costs = {k: int(rng.integers(1, 9)) for k in OpKind}
            setup = {layer: int(rng.integers(0, 5)) for layer in Layer}
            cm = CostModel(cycles_per=costs, prologue_cycles=int(rng.integers(0, 100)),
                           layer_setup=setup)
            trace = compile_trace(dims, cm)
            w = layer_windows(trace)

            def length(layer):
                lo, hi = w[layer]
                return hi - lo + 1

            mac, bias = costs[OpKind.MAC], costs[OpKind.BIAS_ADD]
            relu = costs[OpKind.RELU_ELEM]
            assert length(Layer.DENSE1) == dims.h1 * (dims.d * mac + bias) + setup[Layer.DENSE1]
            assert length(Layer.RELU1) == dims.h1 * relu + setup[Layer.RELU1]
            assert length(Layer.DENSE2) == dims.h2 * (dims.h1 * mac + bias) + setup[Layer.DENSE2]
            assert length(Layer.RELU2) == dims.h2 * relu + setup[Layer.RELU2]
            assert length(Layer.OUTPUT) == 32 * (
                dims.h2 * mac + bias + costs[OpKind.EXP_ELEM] + costs[OpKind.NORM_ELEM]
            ) + setup[Layer.OUTPUT]


class TestLocate:
    def test_window_start_is_first_dense1_mac(self, ref):
        op = locate(ref, layer_windows(ref)[Layer.DENSE1][0])
        assert (op.kind, op.layer, op.neuron, op.operand) == (
            OpKind.MAC, Layer.DENSE1, 0, 0)

    def test_total_cycles_is_last_norm(self, ref):
        op = locate(ref, ref.total_cycles)
        assert (op.kind, op.neuron) == (OpKind.NORM_ELEM, 31)

    def test_published_relu1_offset(self, ref):
        op = locate(ref, 14208)
        assert op.layer is Layer.RELU1
        assert op.kind is OpKind.RELU_ELEM

    def test_out_of_range(self, ref):
        with pytest.raises(OutOfTraceError):
            locate(ref, ref.trigger_cycle - 1)
        with pytest.raises(OutOfTraceError):
            locate(ref, ref.total_cycles + 1)

    def test_exhaustive_coverage_sampled(self, ref):
        rng = np.random.default_rng(4)
        cycles = rng.integers(ref.trigger_cycle, ref.total_cycles + 1, size=2000)
        for cycle in cycles:
            op = locate(ref, int(cycle))
            assert op.cycle_start <= cycle <= op.cycle_end

    def test_boundaries_between_ops(self, ref):
        for a, b in zip(ref.ops[:200], ref.ops[1:201]):
            assert locate(ref, a.cycle_end) is a
            assert locate(ref, b.cycle_start) is b


class TestStructure:
    @pytest.mark.parametrize("preset", sorted(TRACE_PRESETS))
    def test_dense_dominates_relu(self, preset):
        dims, cost = TRACE_PRESETS[preset]
        assert dense_to_relu_cycle_ratio(dims, cost) >= 5.0

    def test_mac_cycle_fraction_dominates(self, ref):
        mac_cycles = sum(op.cycle_end - op.cycle_start + 1
                         for op in ref.ops if op.kind is OpKind.MAC)
        relu_cycles = sum(op.cycle_end - op.cycle_start + 1
                          for op in ref.ops if op.kind is OpKind.RELU_ELEM)
        assert mac_cycles > relu_cycles

    def test_csv_dump(self, ref):
        buf = io.StringIO()
        dump_trace_csv(ref, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "kind,layer,neuron,operand,cycle_start,cycle_end"
        assert lines[1] == "MAC,Dense1,0,0,687,800"  # setup 1 + cost 113
        assert len(lines) == len(ref.ops) + 1
