"""Trial protocol: reboot, feed one input, arm the glitch, log the outcome.

A reboot is simulated as fresh state per trial; nothing persists between
trials except the log. Per-trial seeds derive from the campaign seed and
the trial index (see seeding.derive_seed), so trials are order-independent
and can run concurrently while the merged log stays deterministic.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from .analysis import hamming
from .faults import (GlitchConfig, PlanKind, SusceptibilityProfile,
                     apply_plan, resolve_glitch)
from .model import NUM_CLASSES, ForwardResult, ModelParams, forward, predict_bits
from .seeding import derive_seed
from .trace import MicroOpTrace

VERDICT_CORRECT = "Correct"
VERDICT_MISPREDICTION = "Misprediction"
VERDICT_RESET = "ResetOrHang"


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    input_id: int
    true_class: int
    glitch: GlitchConfig
    verdict: str  # Correct | Misprediction | ResetOrHang
    predicted: int | None  # set iff Misprediction
    hamming: int | None    # None iff ResetOrHang
    bit_flips: tuple[bool, ...] | None
    seed: int

    @property
    def predicted_class(self) -> int | None:
        """Predicted class for classified trials (equals truth when Correct)."""
        if self.verdict == VERDICT_RESET:
            return None
        if self.verdict == VERDICT_CORRECT:
            return self.true_class
        return self.predicted


@dataclass(frozen=True)
class ConfigResult:
    glitch: GlitchConfig
    trials: tuple[TrialRecord, ...]
    fault_count: int
    reset_count: int

    @property
    def correct_count(self) -> int:
        return len(self.trials) - self.fault_count - self.reset_count


def run_trial(
    params: ModelParams,
    x: np.ndarray,
    true_class: int,
    trace: MicroOpTrace,
    glitch: GlitchConfig,
    profile: SusceptibilityProfile,
    trial_seed: int,
    input_id: int = 0,
    trial_index: int = 0,
    clean: ForwardResult | None = None,
    trigger_shift: int = 0,
) -> TrialRecord:
    """One rebooted trial. `clean` optionally caches this input's clean
    forward so identity glitches do not recompute it."""
    plan = resolve_glitch(glitch, profile, trace, trial_seed,
                          trigger_shift=trigger_shift)
    if plan.kind is PlanKind.NO_EFFECT and clean is not None:
        result: ForwardResult | None = clean
    else:
        result = apply_plan(params, x, plan)

    if result is None:
        return TrialRecord(
            trial_index=trial_index, input_id=input_id, true_class=true_class,
            glitch=glitch, verdict=VERDICT_RESET, predicted=None,
            hamming=None, bit_flips=None, seed=trial_seed,
        )
    true_bits = predict_bits(true_class)
    pred_bits = result.predicted_bits
    flips = tuple(t != p for t, p in zip(true_bits, pred_bits))
    dist = hamming(true_bits, pred_bits)
    correct = result.predicted_class == true_class
    return TrialRecord(
        trial_index=trial_index, input_id=input_id, true_class=true_class,
        glitch=glitch,
        verdict=VERDICT_CORRECT if correct else VERDICT_MISPREDICTION,
        predicted=None if correct else result.predicted_class,
        hamming=dist, bit_flips=flips, seed=trial_seed,
    )


@dataclass
class CampaignContext:
    """Everything one campaign evaluation needs, with a clean-pass cache."""

    params: ModelParams
    inputs: list[tuple[int, int, np.ndarray]]  # (input_id, true_class, x)
    trace: MicroOpTrace
    profile: SusceptibilityProfile
    reps: int = 3
    jobs: int = 1
    clean_cache: dict[int, ForwardResult] = field(default_factory=dict)

    def clean_result(self, input_id: int, x: np.ndarray) -> ForwardResult:
        cached = self.clean_cache.get(input_id)
        if cached is None:
            cached = forward(self.params, x)
            self.clean_cache[input_id] = cached
        return cached


def run_config(
    ctx: CampaignContext,
    glitch: GlitchConfig,
    campaign_seed: int,
) -> ConfigResult:
    """Run the 32-class protocol: every class once, `reps` repetitions.

    Trials are ordered by (class, repetition); trial seeds derive from
    (campaign_seed, trial_index) so any execution order gives the same
    records.
    """
    by_class = {true_class: (input_id, x)
                for input_id, true_class, x in ctx.inputs}
    missing = sorted(set(range(NUM_CLASSES)) - set(by_class))
    if missing:
        raise ValueError(f"campaign slice is missing classes {missing}")
    if len(ctx.inputs) != NUM_CLASSES:
        raise ValueError("campaign slice must hold exactly one input per class")

    jobs_args = []
    for pos, true_class in enumerate(sorted(by_class)):
        input_id, x = by_class[true_class]
        for rep in range(ctx.reps):
            trial_index = pos * ctx.reps + rep
            jobs_args.append((trial_index, input_id, true_class, x))

    def one(arg) -> TrialRecord:
        trial_index, input_id, true_class, x = arg
        return run_trial(
            ctx.params, x, true_class, ctx.trace, glitch, ctx.profile,
            trial_seed=derive_seed("trial", campaign_seed, trial_index),
            input_id=input_id, trial_index=trial_index,
            clean=ctx.clean_result(input_id, x),
        )

    if ctx.jobs > 1:
        with ThreadPoolExecutor(max_workers=ctx.jobs) as pool:
            trials = tuple(pool.map(one, jobs_args))
    else:
        trials = tuple(one(arg) for arg in jobs_args)

    fault_count = sum(1 for t in trials if t.verdict == VERDICT_MISPREDICTION)
    reset_count = sum(1 for t in trials if t.verdict == VERDICT_RESET)
    return ConfigResult(glitch, trials, fault_count, reset_count)


def run_batch(
    ctx: CampaignContext,
    inputs: Sequence[tuple[int, int, np.ndarray]],
    glitch: GlitchConfig,
    campaign_seed: int,
) -> list[TrialRecord]:
    """Free-form trial loop over arbitrary inputs (no per-class protocol)."""
    records = []
    for trial_index, (input_id, true_class, x) in enumerate(inputs):
        records.append(run_trial(
            ctx.params, x, true_class, ctx.trace, glitch, ctx.profile,
            trial_seed=derive_seed("trial", campaign_seed, trial_index),
            input_id=input_id, trial_index=trial_index,
            clean=ctx.clean_result(input_id, x),
        ))
    return records


# --- JSON-lines log ------------------------------------------------------
#
# One TrialRecord per line with exactly the record's field names; the
# verdict is "Correct", "ResetOrHang", or {"Misprediction": <class>}. A
# trailing object summarizes the ConfigResult. No timestamps: logs must be
# byte-identical across reruns.


def _glitch_json(glitch: GlitchConfig) -> dict:
    return {
        "width": glitch.width, "offset": glitch.offset,
        "external_offset": glitch.external_offset, "repeat": glitch.repeat,
    }


def _record_json(rec: TrialRecord) -> dict:
    verdict: object = rec.verdict
    if rec.verdict == VERDICT_MISPREDICTION:
        verdict = {VERDICT_MISPREDICTION: rec.predicted}
    return {
        "trial_index": rec.trial_index,
        "input_id": rec.input_id,
        "true_class": rec.true_class,
        "glitch": _glitch_json(rec.glitch),
        "verdict": verdict,
        "hamming": rec.hamming,
        "bit_flips": list(rec.bit_flips) if rec.bit_flips is not None else None,
        "seed": rec.seed,
    }


def write_log(result: ConfigResult, fp: TextIO) -> None:
    for rec in result.trials:
        fp.write(json.dumps(_record_json(rec), separators=(",", ":")))
        fp.write("\n")
    summary = {
        "glitch": _glitch_json(result.glitch),
        "n_trials": len(result.trials),
        "fault_count": result.fault_count,
        "reset_count": result.reset_count,
    }
    fp.write(json.dumps(summary, separators=(",", ":")))
    fp.write("\n")


def _record_from_json(obj: dict) -> TrialRecord:
    verdict = obj["verdict"]
    predicted = None
    if isinstance(verdict, dict):
        predicted = verdict[VERDICT_MISPREDICTION]
        verdict = VERDICT_MISPREDICTION
    bit_flips = obj["bit_flips"]
    return TrialRecord(
        trial_index=obj["trial_index"], input_id=obj["input_id"],
        true_class=obj["true_class"], glitch=GlitchConfig(**obj["glitch"]),
        verdict=verdict, predicted=predicted, hamming=obj["hamming"],
        bit_flips=tuple(bit_flips) if bit_flips is not None else None,
        seed=obj["seed"],
    )


def read_log(fp: TextIO) -> ConfigResult:
    lines = [json.loads(line) for line in fp if line.strip()]
    if not lines or "trial_index" in lines[-1]:
        raise ValueError("campaign log is missing its summary line")
    summary = lines[-1]
    trials = tuple(_record_from_json(obj) for obj in lines[:-1])
    return ConfigResult(
        glitch=GlitchConfig(**summary["glitch"]), trials=trials,
        fault_count=summary["fault_count"], reset_count=summary["reset_count"],
    )
