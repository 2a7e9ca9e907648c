import io

import numpy as np
import pytest

from glitchsim.campaign import CampaignContext
from glitchsim.faults import GlitchConfig, SusceptibilityProfile
from glitchsim.search import (AxisSpec, Evaluation, ObjectiveSpec, SearchMode,
                              SearchSpace, Strategy, export_report_csv,
                              quantize, score, search)
from glitchsim.trace import Layer, OpKind
from helpers import synthetic_result


class TestScore:
    def test_untargeted_example(self):
        result = synthetic_result([1, 0, 2])
        assert score(result, ObjectiveSpec()) == 1.0

    def test_all_reset(self):
        result = synthetic_result([], resets=4)
        assert score(result, ObjectiveSpec()) == -5.0

    def test_targeted_19_of_96(self):
        pairs = [(0, 1)] * 19 + [(0, 2)] * 30 + [(0, 0)] * 46 + [(1, 1)]
        result = synthetic_result([], predictions=pairs)
        assert len(result.trials) == 96
        objective = ObjectiveSpec(mode=SearchMode.TARGETED, target_class=1)
        assert score(result, objective) == 19 / 96

    def test_targeted_ignores_correct_target_trials(self):
        result = synthetic_result([], predictions=[(1, 1)] * 10)
        objective = ObjectiveSpec(mode=SearchMode.TARGETED, target_class=1)
        assert score(result, objective) == 0.0

    def test_bounds_over_random_logs(self):
        rng = np.random.default_rng(3)
        untargeted = ObjectiveSpec()
        targeted = ObjectiveSpec(mode=SearchMode.TARGETED, target_class=7)
        for _ in range(500):
            n_h = int(rng.integers(0, 20))
            hammings = rng.integers(0, 6, size=n_h).tolist()
            resets = int(rng.integers(0, 10))
            if n_h + resets == 0:
                continue
            result = synthetic_result(hammings, resets=resets)
            assert -5.0 <= score(result, untargeted) <= 5.0
            assert -5.0 <= score(result, targeted) <= 1.0

    def test_empty_result_rejected(self):
        with pytest.raises(ValueError):
            score(synthetic_result([]), ObjectiveSpec())

    def test_objective_validation(self):
        with pytest.raises(ValueError):
            ObjectiveSpec(reset_penalty=float("nan"))
        with pytest.raises(ValueError):
            ObjectiveSpec(mode=SearchMode.TARGETED, target_class=None)
        with pytest.raises(ValueError):
            ObjectiveSpec(mode=SearchMode.TARGETED, target_class=32)


class TestQuantize:
    SPACE = SearchSpace(external_offset=AxisSpec(0, 1000, 1))

    def test_round_down_tie(self):
        q = quantize(dict(width=2449, offset=2450, external_offset=500,
                          repeat=2), self.SPACE)
        assert q.width == 2400
        assert q.offset == 2400  # exact tie rounds down

    def test_round_up(self):
        q = quantize(dict(width=2451, offset=0, external_offset=0, repeat=1),
                     self.SPACE)
        assert q.width == 2500

    def test_external_offset_unchanged(self):
        q = quantize(dict(width=0, offset=0, external_offset=777, repeat=1),
                     self.SPACE)
        assert q.external_offset == 777

    def test_out_of_range_clamps_with_warning(self):
        with pytest.warns(UserWarning, match="clamped"):
            q = quantize(dict(width=9000, offset=0, external_offset=0,
                              repeat=1), self.SPACE)
        assert q.width == 4000


@pytest.fixture()
def planted_profile(ref_trace):
    return SusceptibilityProfile(
        width_band=(2400, 2800), offset_band=(2400, 2800),
        corrupt_prob={k: 0.9 for k in OpKind}, reset_coeff=0.15,
        corrupt_window=ref_trace.windows[Layer.RELU1])


class TestSearch:
    def test_budget_one(self, ref_ctx):
        space = SearchSpace.for_trace(ref_ctx.trace)
        report = search(space, ObjectiveSpec(), 1, Strategy.RANDOM, ref_ctx, 1)
        assert len(report.evaluated) == 1
        assert len(report.top_k) == 1

    def test_grid_full_enumeration(self, ref_params, separable_inputs, ref_trace):
        ctx = CampaignContext(
            params=ref_params, inputs=separable_inputs, trace=ref_trace,
            profile=SusceptibilityProfile(width_band=(1, 1), offset_band=(1, 1)),
            reps=1)
        space = SearchSpace(external_offset=AxisSpec(100, 100, 1),
                            repeat=AxisSpec(1, 1, 1))
        report = search(space, ObjectiveSpec(), 2000, Strategy.GRID, ctx, 1)
        assert len(report.evaluated) == 41 * 41
        widths = {e.glitch.width for e in report.evaluated}
        assert widths == set(range(0, 4001, 100))

    def test_strategy_soundness(self, ref_ctx):
        space = SearchSpace.for_layer(ref_ctx.trace, Layer.RELU1)
        for strategy in (Strategy.RANDOM, Strategy.ADAPTIVE):
            report = search(space, ObjectiveSpec(), 40, strategy, ref_ctx, 9)
            for ev in report.evaluated:
                assert space.contains(ev.glitch)

    def test_reproducible(self, ref_params, separable_inputs, ref_trace,
                          planted_profile):
        space = SearchSpace.for_trace(ref_trace)
        reports = []
        for _ in range(2):
            ctx = CampaignContext(params=ref_params, inputs=separable_inputs,
                                  trace=ref_trace, profile=planted_profile)
            buf = io.StringIO()
            export_report_csv(
                search(space, ObjectiveSpec(), 60, Strategy.ADAPTIVE, ctx, 21),
                buf)
            reports.append(buf.getvalue())
        assert reports[0] == reports[1]

    def test_layer_filter_restricts_offsets(self, ref_ctx):
        space = SearchSpace.for_layer(ref_ctx.trace, Layer.RELU1)
        report = search(space, ObjectiveSpec(), 30, Strategy.ADAPTIVE, ref_ctx, 2)
        for ev in report.evaluated:
            assert 14048 <= ev.glitch.external_offset <= 15602

    def test_planted_adaptive_finds_fault(self, ref_params, separable_inputs,
                                          ref_trace, planted_profile):
        ctx = CampaignContext(params=ref_params, inputs=separable_inputs,
                              trace=ref_trace, profile=planted_profile)
        space = SearchSpace.for_trace(ref_trace)
        report = search(space, ObjectiveSpec(), 200, Strategy.ADAPTIVE, ctx, 0)
        assert report.first_fault_index is not None
        faulting = max(report.evaluated, key=lambda e: e.fault_count)
        assert faulting.fault_count >= 1
        assert 2400 <= faulting.glitch.width <= 2800
        assert 2400 <= faulting.glitch.offset <= 2800
        lo, hi = ref_trace.windows[Layer.RELU1]
        first = faulting.glitch.external_offset
        assert first <= hi and first + faulting.glitch.repeat - 1 >= lo

    def test_adaptive_never_beats_exhaustive(self, ref_params, separable_inputs,
                                             ref_trace, planted_profile):
        ctx = CampaignContext(params=ref_params, inputs=separable_inputs,
                              trace=ref_trace, profile=planted_profile, reps=1)
        lo, hi = ref_trace.windows[Layer.RELU1]
        space = SearchSpace(
            width=AxisSpec(2400, 2600, 100), offset=AxisSpec(2400, 2600, 100),
            external_offset=AxisSpec(lo, lo + 2, 1), repeat=AxisSpec(1, 2, 1))
        exhaustive = search(space, ObjectiveSpec(), 10_000, Strategy.GRID, ctx, 5)
        assert len(exhaustive.evaluated) == 3 * 3 * 3 * 2
        adaptive = search(space, ObjectiveSpec(), 30, Strategy.ADAPTIVE, ctx, 5)
        assert adaptive.best.score <= exhaustive.best.score

    def test_empty_window_rejected(self):
        with pytest.raises(ValueError):
            AxisSpec(100, 50, 1)
        with pytest.raises(ValueError):
            SearchSpace(external_offset=AxisSpec(10, 5, 1))

    def test_rank_tie_breaking(self):
        evals = [
            Evaluation(1, GlitchConfig(0, 0, 500, 1), 1.0, 3, 2),
            Evaluation(2, GlitchConfig(0, 0, 100, 1), 1.0, 3, 0),
            Evaluation(3, GlitchConfig(0, 0, 50, 1), 1.0, 3, 2),
            Evaluation(4, GlitchConfig(0, 0, 900, 1), 2.0, 5, 0),
        ]
        from glitchsim.search import _rank
        ranked = _rank(evals)
        assert [e.index for e in ranked] == [4, 2, 3, 1]

    def test_report_csv_layout(self, ref_ctx):
        space = SearchSpace.for_trace(ref_ctx.trace)
        report = search(space, ObjectiveSpec(), 3, Strategy.RANDOM, ref_ctx, 4)
        buf = io.StringIO()
        export_report_csv(report, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "rank,width,offset,external_offset,repeats,faults,resets,score"
        assert len(lines) == 4
