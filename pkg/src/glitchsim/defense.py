"""Countermeasures evaluated against the same simulated attacker.

Five policies: redundant inference with majority voting, output entropy
checking, activation range checking, randomized execution timing, and
cross-checking against a nearest-centroid reference discriminator.
Evaluation pairs defended and undefended campaigns on identical trial
seeds so the comparison is coupling-tight.
"""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence, TextIO

import numpy as np

from .campaign import CampaignContext
from .faults import (GlitchConfig, RunStatus, SusceptibilityProfile,
                     faulted_forward)
from .model import ForwardResult, ModelParams
from .seeding import derive_seed, rng_from
from .trace import MicroOpTrace


@dataclass(frozen=True)
class MajorityVote:
    shots: int = 3

    def __post_init__(self) -> None:
        if self.shots < 3 or self.shots % 2 == 0:
            raise ValueError("shots must be an odd integer >= 3")


@dataclass(frozen=True)
class EntropyCheck:
    threshold: float  # natural-log entropy; log(32) can never trip

    def __post_init__(self) -> None:
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")


@dataclass(frozen=True)
class ActivationRangeCheck:
    # layer name ("z1", "a1", "z2", "a2", "zo") -> inclusive (lo, hi)
    bounds: Mapping[str, tuple[float, float]]


@dataclass(frozen=True)
class TimingJitter:
    max_jitter: int  # cycles

    def __post_init__(self) -> None:
        if self.max_jitter < 0:
            raise ValueError("max_jitter must be >= 0")


@dataclass(frozen=True)
class CrossCheck:
    centroids: np.ndarray  # (32, d) reference points, nearest wins

    def __post_init__(self) -> None:
        arr = np.asarray(self.centroids, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != 32:
            raise ValueError("centroids must be a (32, d) array")
        object.__setattr__(self, "centroids", arr)


PolicyKind = MajorityVote | EntropyCheck | ActivationRangeCheck | TimingJitter | CrossCheck

ACTION_REJECT = "reject"
ACTION_RETRY = "retry"


@dataclass(frozen=True)
class DefensePolicy:
    kind: PolicyKind
    action_on_flag: str = ACTION_REJECT

    def __post_init__(self) -> None:
        if self.action_on_flag not in (ACTION_REJECT, ACTION_RETRY):
            raise ValueError("action_on_flag must be 'reject' or 'retry'")


@dataclass(frozen=True)
class AttackSpec:
    """Per-shot attack: every inference the defense issues gets glitched."""

    glitch: GlitchConfig
    profile: SusceptibilityProfile
    trace: MicroOpTrace


def hardware_monitor_flag(status: RunStatus, detection_prob: float,
                          seed: int) -> bool:
    """Brown-out / glitch detector oracle.

    A board-level monitor flags a reset-or-hang with the given detection
    probability; there is no analog modeling behind it, and it never
    fires on a completed inference.
    """
    if not 0.0 <= detection_prob <= 1.0:
        raise ValueError("detection_prob must be in [0, 1]")
    if status is not RunStatus.RESET:
        return False
    return bool(rng_from("monitor", seed).random() < detection_prob)


def output_entropy(probs: np.ndarray) -> float:
    """Natural-log entropy of a (possibly corrupted) output vector.

    Negative entries are clamped and the vector renormalized first, since
    a run-time check must cope with whatever the faulted pass produced.
    """
    p = np.clip(np.asarray(probs, dtype=np.float64), 0.0, None)
    total = p.sum()
    if total <= 0 or not np.isfinite(total):
        return float("inf")
    p = p / total
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def plurality(classes: Sequence[int]) -> int | None:
    """Plurality class; None on full disagreement or no votes.

    Full disagreement means no class reached two votes. Count ties break
    to the lower class index.
    """
    if not classes:
        return None
    counts = Counter(classes)
    winner, count = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if count < 2 and len(classes) > 1:
        return None
    return winner


def _one_shot(
    params: ModelParams, x: np.ndarray, attack: AttackSpec | None,
    seed: int, trigger_shift: int = 0,
) -> tuple[RunStatus, ForwardResult | None]:
    if attack is None:
        from .model import forward
        return RunStatus.COMPLETED, forward(params, x)
    return faulted_forward(
        params, x, attack.trace, attack.glitch, attack.profile, seed,
        trigger_shift=trigger_shift,
    )


def _check_bounds(result: ForwardResult,
                  bounds: Mapping[str, tuple[float, float]]) -> list[str]:
    flags = []
    for name, (lo, hi) in bounds.items():
        arr = getattr(result, name)
        if not np.isfinite(arr).all() or arr.min() < lo or arr.max() > hi:
            flags.append(f"range:{name}")
    return flags


def defended_predict(
    policy: DefensePolicy,
    params: ModelParams,
    x: np.ndarray,
    attack: AttackSpec | None,
    seed: int,
) -> tuple[int | None, list[str]]:
    """Run one defended inference.

    Returns (class, flags); class is None on rejection. Shot 0 of a
    majority vote reuses the bare seed so the first shot replicates the
    undefended trial exactly.
    """
    kind = policy.kind
    flags: list[str] = []

    if isinstance(kind, MajorityVote):
        votes = []
        for shot in range(kind.shots):
            shot_seed = seed if shot == 0 else derive_seed("shot", seed, shot)
            status, result = _one_shot(params, x, attack, shot_seed)
            if status is RunStatus.RESET:
                flags.append(f"reset:shot{shot}")
            else:
                votes.append(result.predicted_class)
        winner = plurality(votes)
        if winner is None:
            flags.append("vote:no-majority")
        return winner, flags

    if isinstance(kind, TimingJitter):
        jitter = int(rng_from("jitter", seed).integers(0, kind.max_jitter + 1))
        status, result = _one_shot(params, x, attack, seed, trigger_shift=jitter)
        if status is RunStatus.RESET:
            return None, ["reset"]
        return result.predicted_class, flags

    status, result = _one_shot(params, x, attack, seed)
    if status is RunStatus.RESET:
        return None, ["reset"]

    if isinstance(kind, EntropyCheck):
        if output_entropy(result.probs) > kind.threshold:
            flags.append("entropy")
    elif isinstance(kind, ActivationRangeCheck):
        flags.extend(_check_bounds(result, kind.bounds))
    elif isinstance(kind, CrossCheck):
        dists = ((kind.centroids - x) ** 2).sum(axis=1)
        if int(np.argmin(dists)) != result.predicted_class:
            flags.append("crosscheck")

    if flags:
        if policy.action_on_flag == ACTION_RETRY:
            retry = DefensePolicy(kind, ACTION_REJECT)
            cls, retry_flags = defended_predict(
                retry, params, x, attack, derive_seed("retry", seed))
            return cls, flags + retry_flags
        return None, flags
    return result.predicted_class, flags


@dataclass(frozen=True)
class DefenseReport:
    policy: str
    baseline_fault_rate: float
    defended_fault_rate: float  # accepted wrong outputs / trials
    flagged_rate: float
    overhead_factor: float


def overhead_factor(policy: DefensePolicy, params: ModelParams) -> float:
    """Nominal defended inference cost relative to one bare inference."""
    kind = policy.kind
    if isinstance(kind, MajorityVote):
        return float(kind.shots)
    if isinstance(kind, CrossCheck):
        d = params.dims
        model_macs = d.h1 * d.d + d.h2 * d.h1 + d.c * d.h2
        return 1.0 + (d.c * d.d) / model_macs
    return 1.0


def calibrate_bounds(
    params: ModelParams, inputs: Sequence[np.ndarray], margin: float = 0.5
) -> dict[str, tuple[float, float]]:
    """Activation bounds from clean forwards, widened by a margin."""
    from .model import forward
    mins: dict[str, float] = {}
    maxs: dict[str, float] = {}
    for x in inputs:
        result = forward(params, x)
        for name in ("z1", "a1", "z2", "a2", "zo"):
            arr = getattr(result, name)
            mins[name] = min(mins.get(name, np.inf), float(arr.min()))
            maxs[name] = max(maxs.get(name, -np.inf), float(arr.max()))
    return {
        name: (mins[name] - margin, maxs[name] + margin) for name in mins
    }


def evaluate_defense(
    policy: DefensePolicy,
    attack: AttackSpec,
    ctx: CampaignContext,
    seed: int,
) -> DefenseReport:
    """Paired campaigns with and without the policy on identical seeds."""
    n = 0
    baseline_wrong = 0
    defended_wrong = 0
    flagged = 0
    for pos, (input_id, true_class, x) in enumerate(ctx.inputs):
        for rep in range(ctx.reps):
            trial_seed = derive_seed("trial", seed, pos * ctx.reps + rep)
            n += 1

            status, result = faulted_forward(
                ctx.params, x, attack.trace, attack.glitch, attack.profile,
                trial_seed)
            if status is not RunStatus.RESET and result.predicted_class != true_class:
                baseline_wrong += 1

            cls, flags = defended_predict(policy, ctx.params, x, attack, trial_seed)
            if flags:
                flagged += 1
            if cls is not None and cls != true_class:
                defended_wrong += 1

    return DefenseReport(
        policy=type(policy.kind).__name__,
        baseline_fault_rate=baseline_wrong / n,
        defended_fault_rate=defended_wrong / n,
        flagged_rate=flagged / n,
        overhead_factor=overhead_factor(policy, ctx.params),
    )


def export_defense_csv(reports: Sequence[DefenseReport], fp: TextIO) -> None:
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(["policy", "baseline_fault_rate", "defended_fault_rate",
                     "flagged_rate", "overhead_factor"])
    for r in reports:
        writer.writerow([
            r.policy, repr(r.baseline_fault_rate), repr(r.defended_fault_rate),
            repr(r.flagged_rate), repr(r.overhead_factor),
        ])
