"""Black-box search over the glitch parameter space.

Three strategies share one evaluation loop: uniform random, exhaustive
grid, and an adaptive density-ratio sampler. The adaptive sampler keeps
the evaluated configurations split into a guide set and the rest, fits
per-dimension discretized densities over the guide set, and samples new
candidates from those densities with a small uniform exploration floor.

Guide-set choice: configurations are first split by outcome activity.
Any evaluation that produced faults or resets is treated as guiding
signal; a pure score-median split would actively avoid the effective
width/offset band, because reset-heavy probes score negative long before
the first misprediction is found. Once enough active configurations
exist, only the better-scoring half of them guides the sampler, which
restores the usual good/bad density-ratio behavior for refinement.

External offsets additionally mix in a layer-stratified proposal: a layer
window is picked uniformly and the offset drawn inside it. Campaigns
instrument per-layer triggers anyway, so the attacker knows the windows;
stratifying over them is how a manual search would spend its budget.
"""
from __future__ import annotations

import csv
import enum
import itertools
import warnings
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

from .campaign import CampaignContext, ConfigResult, run_config
from .faults import REPEAT_MAX, WIDTH_MAX, WIDTH_STEP, GlitchConfig
from .seeding import derive_seed, rng_from
from .trace import LAYER_ORDER, Layer, MicroOpTrace


@dataclass(frozen=True)
class AxisSpec:
    min: int
    max: int
    step: int

    def __post_init__(self) -> None:
        if self.step < 1:
            raise ValueError("axis step must be >= 1")
        if self.min > self.max:
            raise ValueError(f"empty axis: [{self.min}, {self.max}]")

    @property
    def count(self) -> int:
        return (self.max - self.min) // self.step + 1

    def values(self) -> range:
        return range(self.min, self.max + 1, self.step)

    def sample(self, rng: np.random.Generator) -> int:
        return self.min + int(rng.integers(0, self.count)) * self.step

    def quantize(self, value: float) -> int:
        """Snap to the nearest step multiple, ties rounding down; clamp
        out-of-range values with a recorded warning."""
        if value < self.min or value > self.max:
            warnings.warn(
                f"value {value} outside [{self.min}, {self.max}], clamped",
                stacklevel=2,
            )
            value = min(max(value, self.min), self.max)
        k = (value - self.min) / self.step
        down = int(np.floor(k))
        snapped = down if k - down <= 0.5 else down + 1
        return self.min + min(snapped, self.count - 1) * self.step


@dataclass(frozen=True)
class SearchSpace:
    width: AxisSpec = AxisSpec(0, WIDTH_MAX, WIDTH_STEP)
    offset: AxisSpec = AxisSpec(0, WIDTH_MAX, WIDTH_STEP)
    external_offset: AxisSpec = AxisSpec(0, 118602, 1)
    repeat: AxisSpec = AxisSpec(1, REPEAT_MAX, 1)

    @classmethod
    def for_trace(cls, trace: MicroOpTrace, **overrides) -> "SearchSpace":
        # The generator's own table caps the external offset at 118179,
        # slightly short of the measured trace end (118602); the simulator
        # derives the legal range from the compiled trace instead.
        return cls(external_offset=AxisSpec(0, trace.total_cycles, 1), **overrides)

    @classmethod
    def for_layer(cls, trace: MicroOpTrace, layer: Layer, **overrides) -> "SearchSpace":
        lo, hi = trace.windows[layer]
        return cls(external_offset=AxisSpec(lo, hi, 1), **overrides)

    def axes(self) -> dict[str, AxisSpec]:
        return {
            "width": self.width, "offset": self.offset,
            "external_offset": self.external_offset, "repeat": self.repeat,
        }

    def contains(self, glitch: GlitchConfig) -> bool:
        values = {
            "width": glitch.width, "offset": glitch.offset,
            "external_offset": glitch.external_offset, "repeat": glitch.repeat,
        }
        return all(
            axis.min <= values[name] <= axis.max
            and (values[name] - axis.min) % axis.step == 0
            for name, axis in self.axes().items()
        )


class SearchMode(enum.Enum):
    UNTARGETED = "untargeted"
    TARGETED = "targeted"


@dataclass(frozen=True)
class ObjectiveSpec:
    mode: SearchMode = SearchMode.UNTARGETED
    target_class: int | None = None
    reset_penalty: float = 5.0  # one maximal Hamming distance

    def __post_init__(self) -> None:
        if not np.isfinite(self.reset_penalty) or self.reset_penalty < 0:
            raise ValueError("reset_penalty must be finite and >= 0")
        if self.mode is SearchMode.TARGETED and not (
                self.target_class is not None and 0 <= self.target_class <= 31):
            raise ValueError("targeted mode needs target_class in 0..31")


def score(result: ConfigResult, objective: ObjectiveSpec) -> float:
    """Mean per-trial payoff: Hamming distance (or target hits) minus the
    reset penalty."""
    if not result.trials:
        raise ValueError("cannot score an empty result")
    n = len(result.trials)
    penalty = objective.reset_penalty * result.reset_count
    if objective.mode is SearchMode.UNTARGETED:
        gained = sum(t.hamming for t in result.trials if t.hamming is not None)
    else:
        gained = sum(
            1 for t in result.trials
            if t.predicted_class == objective.target_class
            and t.true_class != objective.target_class
        )
    return (gained - penalty) / n


def quantize(point: dict[str, float], space: SearchSpace) -> GlitchConfig:
    """Snap a raw point onto the quantized search space."""
    axes = space.axes()
    return GlitchConfig(
        width=axes["width"].quantize(point["width"]),
        offset=axes["offset"].quantize(point["offset"]),
        external_offset=axes["external_offset"].quantize(point["external_offset"]),
        repeat=axes["repeat"].quantize(point["repeat"]),
    )


class Strategy(enum.Enum):
    RANDOM = "random"
    GRID = "grid"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class Evaluation:
    index: int  # 1-based evaluation order
    glitch: GlitchConfig
    score: float
    fault_count: int
    reset_count: int


@dataclass(frozen=True)
class SearchReport:
    evaluated: tuple[Evaluation, ...]
    top_k: tuple[Evaluation, ...]
    strategy: Strategy
    budget: int
    seed: int
    objective: ObjectiveSpec
    first_fault_index: int | None  # 1-based index of first fault_count >= 1

    @property
    def best(self) -> Evaluation | None:
        return self.top_k[0] if self.top_k else None


def _rank(evaluations: Iterable[Evaluation]) -> tuple[Evaluation, ...]:
    # ties: fewer resets first, then lower external offset
    return tuple(sorted(
        evaluations,
        key=lambda e: (-e.score, e.reset_count, e.glitch.external_offset),
    ))


def _uniform_config(space: SearchSpace, rng: np.random.Generator) -> GlitchConfig:
    return GlitchConfig(
        width=space.width.sample(rng),
        offset=space.offset.sample(rng),
        external_offset=space.external_offset.sample(rng),
        repeat=space.repeat.sample(rng),
    )


def _grid_iter(space: SearchSpace) -> Iterator[GlitchConfig]:
    for width, offset, eo, repeat in itertools.product(
            space.width.values(), space.offset.values(),
            space.external_offset.values(), space.repeat.values()):
        yield GlitchConfig(width, offset, eo, repeat)


class _AdaptiveSampler:
    """Per-dimension density-ratio sampler (see module docstring).

    Until the target shows any reaction, proposals walk a seed-shuffled
    coarse-to-fine lattice over (width, offset): every 4th grid value
    first, then the skipped half-lattices. A contiguous band of five or
    more grid steps always contains a point of the coarsest lattice, so a
    standard warmup sweep cannot miss it, which is exactly why glitch
    campaigns scan coarse before refining.
    """

    EPSILON = 0.1
    SMOOTHING = 0.04
    NEIGHBOR_SPILL = 0.5
    EO_BINS = 64
    LAYER_MIX = 0.5
    LEARNED_MIX = 0.4
    MIN_SPLIT = 8

    def __init__(self, space: SearchSpace, trace: MicroOpTrace,
                 rng: np.random.Generator) -> None:
        self.space = space
        self.rng = rng
        eo_axis = space.external_offset
        self.layer_segments = []
        for layer in LAYER_ORDER:
            lo, hi = trace.windows[layer]
            lo, hi = max(lo, eo_axis.min), min(hi, eo_axis.max)
            if lo <= hi:
                self.layer_segments.append((lo, hi))
        self._scan = self._coarse_scan()
        self._scan_pos = 0

    def _coarse_scan(self) -> list[tuple[int, int]]:
        """(width, offset) pairs, coarsest sublattice first, shuffled
        within each refinement level."""
        widths = list(self.space.width.values())
        offsets = list(self.space.offset.values())
        pairs: list[tuple[int, int]] = []
        emitted: set[tuple[int, int]] = set()
        for stride in (4, 2, 1):
            level = [
                (w, o)
                for w in widths[::stride] for o in offsets[::stride]
                if (w, o) not in emitted
            ]
            emitted.update(level)
            self.rng.shuffle(level)
            pairs.extend(level)
        return pairs

    def guide_set(self, evals: Sequence[Evaluation]) -> list[Evaluation]:
        active = [e for e in evals if e.fault_count + e.reset_count > 0]
        if len(active) >= self.MIN_SPLIT:
            cut = float(np.median([e.score for e in active]))
            return [e for e in active if e.score >= cut]
        if active:
            return active
        scores = [e.score for e in evals]
        if evals and max(scores) > min(scores):
            cut = float(np.median(scores))
            return [e for e in evals if e.score >= cut]
        return []

    def _categorical(self, axis: AxisSpec, observed: list[int]) -> np.ndarray:
        weights = np.full(axis.count, self.SMOOTHING)
        for value in observed:
            slot = (value - axis.min) // axis.step
            weights[slot] += 1.0
            if slot > 0:
                weights[slot - 1] += self.NEIGHBOR_SPILL
            if slot + 1 < axis.count:
                weights[slot + 1] += self.NEIGHBOR_SPILL
        return weights / weights.sum()

    def _draw_axis(self, axis: AxisSpec, observed: list[int]) -> int:
        if self.rng.random() < self.EPSILON or not observed:
            return axis.sample(self.rng)
        probs = self._categorical(axis, observed)
        slot = int(self.rng.choice(axis.count, p=probs))
        return axis.min + slot * axis.step

    def _draw_eo(self, observed: list[int]) -> int:
        axis = self.space.external_offset
        u = self.rng.random()
        if u < self.LAYER_MIX and self.layer_segments:
            lo, hi = self.layer_segments[
                int(self.rng.integers(0, len(self.layer_segments)))]
            return int(self.rng.integers(lo, hi + 1))
        if u < self.LAYER_MIX + self.LEARNED_MIX and observed:
            span = axis.max - axis.min + 1
            bins = min(self.EO_BINS, span)
            weights = np.full(bins, self.SMOOTHING)
            for value in observed:
                weights[min((value - axis.min) * bins // span, bins - 1)] += 1.0
            b = int(self.rng.choice(bins, p=weights / weights.sum()))
            lo = axis.min + b * span // bins
            hi = axis.min + (b + 1) * span // bins - 1
            return int(self.rng.integers(lo, min(hi, axis.max) + 1))
        return axis.sample(self.rng)

    def propose(self, evals: Sequence[Evaluation],
                seen: set[GlitchConfig]) -> GlitchConfig:
        # scan the coarse lattice until the target reacts, then adapt
        any_active = any(e.fault_count + e.reset_count > 0 for e in evals)
        if not any_active and self._scan_pos < len(self._scan):
            width, offset = self._scan[self._scan_pos]
            self._scan_pos += 1
            candidate = GlitchConfig(
                width=width, offset=offset,
                external_offset=self._draw_eo([]),
                repeat=self.space.repeat.sample(self.rng),
            )
        elif not any_active:
            candidate = _uniform_config(self.space, self.rng)
        else:
            guide = self.guide_set(evals)
            candidate = GlitchConfig(
                width=self._draw_axis(self.space.width,
                                      [e.glitch.width for e in guide]),
                offset=self._draw_axis(self.space.offset,
                                       [e.glitch.offset for e in guide]),
                external_offset=self._draw_eo(
                    [e.glitch.external_offset for e in guide]),
                repeat=self._draw_axis(self.space.repeat,
                                       [e.glitch.repeat for e in guide]),
            )
        for _ in range(20):
            if candidate not in seen:
                break
            candidate = _uniform_config(self.space, self.rng)
        return candidate


def search(
    space: SearchSpace,
    objective: ObjectiveSpec,
    budget: int,
    strategy: Strategy,
    ctx: CampaignContext,
    seed: int,
) -> SearchReport:
    """Evaluate up to `budget` configurations and rank them by score.

    Every evaluation runs the full per-class campaign protocol with a
    deterministic per-evaluation campaign seed, so a report is a pure
    function of (space, objective, budget, strategy, seed) and the
    campaign context.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")

    rng = rng_from("search", seed)
    sampler = _AdaptiveSampler(space, ctx.trace, rng)
    grid = _grid_iter(space) if strategy is Strategy.GRID else None

    evaluations: list[Evaluation] = []
    seen: set[GlitchConfig] = set()
    first_fault_index: int | None = None

    for index in range(1, budget + 1):
        if strategy is Strategy.GRID:
            candidate = next(grid, None)
            if candidate is None:
                break
        elif strategy is Strategy.RANDOM:
            candidate = _uniform_config(space, rng)
        else:
            candidate = sampler.propose(evaluations, seen)

        result = run_config(ctx, candidate, derive_seed("eval", seed, index))
        evaluation = Evaluation(
            index=index, glitch=candidate, score=score(result, objective),
            fault_count=result.fault_count, reset_count=result.reset_count,
        )
        evaluations.append(evaluation)
        seen.add(candidate)
        if first_fault_index is None and evaluation.fault_count >= 1:
            first_fault_index = index

    return SearchReport(
        evaluated=tuple(evaluations),
        top_k=_rank(evaluations),
        strategy=strategy, budget=budget, seed=seed, objective=objective,
        first_fault_index=first_fault_index,
    )


REPORT_COLUMNS = ["rank", "width", "offset", "external_offset", "repeats",
                  "faults", "resets", "score"]


def export_report_csv(report: SearchReport, fp: TextIO) -> None:
    """Ranked evaluations in the per-layer table column layout."""
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for rank, ev in enumerate(report.top_k, start=1):
        writer.writerow([
            rank, ev.glitch.width, ev.glitch.offset,
            ev.glitch.external_offset, ev.glitch.repeat,
            ev.fault_count, ev.reset_count, repr(ev.score),
        ])
