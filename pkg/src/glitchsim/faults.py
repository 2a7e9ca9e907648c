"""Glitch-to-corruption resolution and faulted forward execution.

A glitch configuration (width, intra-cycle offset, external offset,
repeat) is mapped to concrete corruptions of in-flight forward-pass state
through a configurable susceptibility profile that stands in for device
physics. Width and offset act as a band-pass gate: outside the profile's
bands a glitch does nothing. Inside the bands the glitch may reset the
target outright, otherwise each glitched cycle's micro-op is corrupted
with a per-kind probability.

All draws for one resolution come from a single stream seeded by
(seed, glitch), so a fault plan is a pure function of its inputs.
"""
from __future__ import annotations

import enum
import struct
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Mapping, TextIO

import numpy as np

from .model import ForwardResult, ModelParams, softmax
from .seeding import rng_from
from .trace import Layer, MicroOp, MicroOpTrace, OpKind

WIDTH_MAX = 4000
WIDTH_STEP = 100
REPEAT_MAX = 5


@dataclass(frozen=True)
class GlitchConfig:
    """The four fault parameters of the generator's search space.

    Width and offset are generator units quantized to steps of 100 in
    [0, 4000]; external_offset counts cycles after the trigger; repeat is
    the number of consecutive glitched cycles (1..5).
    """

    width: int
    offset: int
    external_offset: int
    repeat: int = 1

    def __post_init__(self) -> None:
        for name in ("width", "offset"):
            v = getattr(self, name)
            if not 0 <= v <= WIDTH_MAX or v % WIDTH_STEP != 0:
                raise ValueError(
                    f"{name} must be a multiple of {WIDTH_STEP} in [0, {WIDTH_MAX}]"
                )
        if self.external_offset < 0:
            raise ValueError("external_offset must be >= 0")
        if not 1 <= self.repeat <= REPEAT_MAX:
            raise ValueError(f"repeat must be in [1, {REPEAT_MAX}]")


#: Disarmed generator: width 0 never falls inside a susceptibility band,
#: so campaigns run with this config reproduce the clean forward exactly.
IDENTITY_GLITCH = GlitchConfig(width=0, offset=0, external_offset=0, repeat=1)


class CorruptionKind(enum.Enum):
    BIT_FLIP_ACC = "BIT_FLIP_ACC"
    SKIP_OP = "SKIP_OP"
    ZERO_OPERAND = "ZERO_OPERAND"
    RELU_PASSTHROUGH = "RELU_PASSTHROUGH"


# Which corruption kinds the resolver may draw for each op kind. The
# execution engine itself accepts any (kind, op) pairing except
# RELU_PASSTHROUGH off a ReLU element.
ALLOWED_CORRUPTIONS: dict[OpKind, tuple[CorruptionKind, ...]] = {
    OpKind.MAC: (
        CorruptionKind.BIT_FLIP_ACC,
        CorruptionKind.SKIP_OP,
        CorruptionKind.ZERO_OPERAND,
    ),
    OpKind.BIAS_ADD: (CorruptionKind.BIT_FLIP_ACC, CorruptionKind.SKIP_OP),
    OpKind.RELU_ELEM: (CorruptionKind.RELU_PASSTHROUGH, CorruptionKind.SKIP_OP),
    OpKind.EXP_ELEM: (CorruptionKind.BIT_FLIP_ACC,),
    OpKind.NORM_ELEM: (CorruptionKind.BIT_FLIP_ACC,),
}


@dataclass(frozen=True)
class Corruption:
    kind: CorruptionKind
    op_index: int
    op: MicroOp
    bit: int | None = None  # BIT_FLIP_ACC only, 0..63

    def __post_init__(self) -> None:
        if self.kind is CorruptionKind.BIT_FLIP_ACC:
            if self.bit is None or not 0 <= self.bit <= 63:
                raise ValueError("BIT_FLIP_ACC needs a bit index in [0, 63]")
        if (self.kind is CorruptionKind.RELU_PASSTHROUGH
                and self.op.kind is not OpKind.RELU_ELEM):
            raise ValueError("RELU_PASSTHROUGH only targets RELU_ELEM ops")


class PlanKind(enum.Enum):
    NO_EFFECT = "NoEffect"
    CORRUPT = "Corruptions"
    RESET = "Reset"


@dataclass(frozen=True)
class FaultPlan:
    kind: PlanKind
    corruptions: tuple[Corruption, ...] = ()

    def __post_init__(self) -> None:
        if self.kind is PlanKind.CORRUPT and not self.corruptions:
            raise ValueError("a corruption plan must carry corruptions")


@dataclass(frozen=True)
class SusceptibilityProfile:
    """Configurable surrogate for glitch physics.

    corrupt_window optionally confines corruption draws to a cycle
    interval (resets are unaffected; a supply glitch can brown out the
    part regardless of which op is in flight). Used to plant faults in a
    known region for search validation.
    """

    width_band: tuple[int, int] = (2400, 2800)
    offset_band: tuple[int, int] = (2400, 2800)
    corrupt_prob: Mapping[OpKind, float] = field(
        default_factory=lambda: {kind: 0.25 for kind in OpKind}
    )
    reset_coeff: float = 0.02
    corruption_mix: Mapping[CorruptionKind, float] = field(
        default_factory=lambda: {
            CorruptionKind.BIT_FLIP_ACC: 1.0,
            CorruptionKind.SKIP_OP: 1.0,
            CorruptionKind.ZERO_OPERAND: 0.0,
            CorruptionKind.RELU_PASSTHROUGH: 1.0,
        }
    )
    corrupt_window: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        for name in ("width_band", "offset_band"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: [{lo}, {hi}]")
        for kind, p in self.corrupt_prob.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"corrupt_prob[{kind.value}] must be in [0, 1]")
        if self.reset_coeff < 0:
            raise ValueError("reset_coeff must be >= 0")
        weights = list(self.corruption_mix.values())
        if any(w < 0 for w in weights) or not any(w > 0 for w in weights):
            raise ValueError("corruption_mix weights must be >= 0, not all zero")


def default_profile() -> SusceptibilityProfile:
    return SusceptibilityProfile()


def _in_band(value: int, band: tuple[int, int]) -> bool:
    return band[0] <= value <= band[1]


def reset_probability(profile: SusceptibilityProfile, glitch: GlitchConfig) -> float:
    return min(1.0, profile.reset_coeff * (glitch.width / WIDTH_MAX) * glitch.repeat)


def resolve_glitch(
    glitch: GlitchConfig,
    profile: SusceptibilityProfile,
    trace: MicroOpTrace,
    seed: int,
    trigger_shift: int = 0,
) -> FaultPlan:
    """Translate a glitch into a fault plan against one trace execution.

    trigger_shift delays the trace by that many cycles (timing-jitter
    defense); the glitch cycles then land trigger_shift earlier in trace
    coordinates. Draw order is fixed: one reset draw, then per affected
    cycle in ascending order a corruption draw, a kind draw, and a bit
    draw where applicable.
    """
    first = glitch.external_offset - trigger_shift
    lo = max(first, trace.trigger_cycle)
    hi = min(first + glitch.repeat - 1, trace.total_cycles)
    if lo > hi:
        return FaultPlan(PlanKind.NO_EFFECT)
    if not (_in_band(glitch.width, profile.width_band)
            and _in_band(glitch.offset, profile.offset_band)):
        return FaultPlan(PlanKind.NO_EFFECT)

    rng = rng_from(
        "glitch", seed, glitch.width, glitch.offset,
        glitch.external_offset, glitch.repeat,
    )
    if rng.random() < reset_probability(profile, glitch):
        return FaultPlan(PlanKind.RESET)

    starts = trace._starts
    corruptions: list[Corruption] = []
    for cycle in range(lo, hi + 1):
        if profile.corrupt_window is not None:
            wlo, whi = profile.corrupt_window
            if not wlo <= cycle <= whi:
                continue
        op_index = bisect_right(starts, cycle) - 1
        op = trace.ops[op_index]
        if rng.random() >= profile.corrupt_prob.get(op.kind, 0.0):
            continue
        kinds = ALLOWED_CORRUPTIONS[op.kind]
        weights = np.array([profile.corruption_mix.get(k, 0.0) for k in kinds])
        if weights.sum() <= 0:
            weights = np.ones(len(kinds))
        kind = kinds[int(rng.choice(len(kinds), p=weights / weights.sum()))]
        bit = int(rng.integers(0, 64)) if kind is CorruptionKind.BIT_FLIP_ACC else None
        corruptions.append(Corruption(kind=kind, op_index=op_index, op=op, bit=bit))

    if not corruptions:
        return FaultPlan(PlanKind.NO_EFFECT)
    return FaultPlan(PlanKind.CORRUPT, tuple(corruptions))


def flip_bit(value: float, bit: int) -> float:
    """Flip one bit of the IEEE-754 double pattern."""
    (u,) = struct.unpack("<Q", struct.pack("<d", value))
    return struct.unpack("<d", struct.pack("<Q", u ^ (1 << bit)))[0]


class RunStatus(enum.Enum):
    COMPLETED = "Completed"
    RESET = "ResetOrHang"


def _replay_dense_neuron(
    w_row: np.ndarray,
    x: np.ndarray,
    bias: float,
    mac_corr: Mapping[int, list[Corruption]],
    bias_corr: list[Corruption],
) -> float:
    """Sequential MAC chain for one corrupted neuron.

    Uncorrupted neurons keep their vectorized values; a corrupted neuron
    replays left to right so that a flip of the running accumulator
    cascades through the remaining MACs exactly as it would on the MCU.
    """
    acc = 0.0
    for i in range(len(x)):
        term = float(w_row[i]) * float(x[i])
        skip = False
        for corr in mac_corr.get(i, ()):
            if corr.kind is CorruptionKind.SKIP_OP:
                skip = True
            elif corr.kind is CorruptionKind.ZERO_OPERAND:
                term = float(w_row[i]) * 0.0
        if not skip:
            acc += term
        for corr in mac_corr.get(i, ()):
            if corr.kind is CorruptionKind.BIT_FLIP_ACC:
                acc = flip_bit(acc, corr.bit)
    skip_bias = any(c.kind is CorruptionKind.SKIP_OP for c in bias_corr)
    if not skip_bias:
        acc += bias
    for corr in bias_corr:
        if corr.kind is CorruptionKind.BIT_FLIP_ACC:
            acc = flip_bit(acc, corr.bit)
    return acc


def _group(corruptions: tuple[Corruption, ...]):
    """(layer, op kind, neuron, operand) -> ordered corruption list."""
    grouped: dict[tuple, list[Corruption]] = {}
    for corr in corruptions:
        key = (corr.op.layer, corr.op.kind, corr.op.neuron)
        grouped.setdefault(key, []).append(corr)
    return grouped


def apply_plan(
    params: ModelParams, x: np.ndarray, plan: FaultPlan
) -> ForwardResult | None:
    """Execute the forward pass under a fault plan.

    Returns None when the plan is a reset or when corrupted state turns
    non-finite anywhere downstream (a NaN/Inf hang maps to reset-or-hang).
    Layers without corruption targets keep their vectorized values, so
    every intermediate computed before the first corrupted layer is
    bitwise identical to the clean run.
    """
    if plan.kind is PlanKind.RESET:
        return None
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.dims.d,):
        raise ValueError(f"input has shape {x.shape}, expected ({params.dims.d},)")
    grouped = _group(plan.corruptions)
    if grouped:
        # corrupted values may legitimately overflow; that is the hang path
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return _run_corrupted(params, x, grouped)
    return _run_corrupted(params, x, grouped)


def _run_corrupted(params: ModelParams, x: np.ndarray, grouped) -> ForwardResult | None:

    def dense_with(layer: Layer, w: np.ndarray, b: np.ndarray,
                   x_in: np.ndarray) -> np.ndarray:
        z = (w * x_in).sum(axis=1) + b
        touched = {
            key[2] for key in grouped
            if key[0] is layer and key[1] in (OpKind.MAC, OpKind.BIAS_ADD)
        }
        for j in touched:
            mac_corr: dict[int, list[Corruption]] = {}
            for corr in grouped.get((layer, OpKind.MAC, j), ()):
                mac_corr.setdefault(corr.op.operand, []).append(corr)
            bias_corr = grouped.get((layer, OpKind.BIAS_ADD, j), [])
            z[j] = _replay_dense_neuron(w[j], x_in, float(b[j]), mac_corr, bias_corr)
        return z

    def relu_with(layer: Layer, z: np.ndarray) -> np.ndarray:
        a = np.maximum(0.0, z)
        for j in range(len(z)):
            for corr in grouped.get((layer, OpKind.RELU_ELEM, j), ()):
                if corr.kind is CorruptionKind.RELU_PASSTHROUGH:
                    a[j] = z[j]
                elif corr.kind is CorruptionKind.SKIP_OP:
                    a[j] = 0.0  # activation buffer stays zero-initialized
        return a

    z1 = dense_with(Layer.DENSE1, params.w1, params.b1, x)
    a1 = relu_with(Layer.RELU1, z1)
    z2 = dense_with(Layer.DENSE2, params.w2, params.b2, a1)
    a2 = relu_with(Layer.RELU2, z2)
    zo = dense_with(Layer.OUTPUT, params.wo, params.bo, a2)

    if not grouped:
        if not np.isfinite(zo).all():
            return None
        probs = softmax(zo)
        return ForwardResult(z1=z1, a1=a1, z2=z2, a2=a2, zo=zo, probs=probs)

    if not np.isfinite(zo).all():
        return None
    # softmax micro-structure: exp block (running max already known), then
    # the normalization block once every exponential is in place
    e = np.exp(zo - zo.max())
    for j in range(len(e)):
        for corr in grouped.get((Layer.OUTPUT, OpKind.EXP_ELEM, j), ()):
            if corr.kind is CorruptionKind.SKIP_OP:
                e[j] = 0.0
            elif corr.kind is CorruptionKind.BIT_FLIP_ACC:
                e[j] = flip_bit(float(e[j]), corr.bit)
    total = e.sum()
    probs = e / total
    for j in range(len(probs)):
        for corr in grouped.get((Layer.OUTPUT, OpKind.NORM_ELEM, j), ()):
            if corr.kind is CorruptionKind.SKIP_OP:
                probs[j] = 0.0
            elif corr.kind is CorruptionKind.BIT_FLIP_ACC:
                probs[j] = flip_bit(float(probs[j]), corr.bit)

    for arr in (z1, a1, z2, a2, zo, probs):
        if not np.isfinite(arr).all():
            return None
    return ForwardResult(z1=z1, a1=a1, z2=z2, a2=a2, zo=zo, probs=probs)


def faulted_forward(
    params: ModelParams,
    x: np.ndarray,
    trace: MicroOpTrace,
    glitch: GlitchConfig,
    profile: SusceptibilityProfile,
    seed: int,
    trigger_shift: int = 0,
) -> tuple[RunStatus, ForwardResult | None]:
    """Resolve the glitch and run the (possibly corrupted) forward pass."""
    plan = resolve_glitch(glitch, profile, trace, seed, trigger_shift=trigger_shift)
    result = apply_plan(params, x, plan)
    if result is None:
        return RunStatus.RESET, None
    return RunStatus.COMPLETED, result


# --- profile files -------------------------------------------------------
#
# Structured key-value text, one "key = value" pair per line, '#' comments.
# Keys: width_band, offset_band (two ints), reset_coeff (float),
# corrupt_prob.<OP_KIND>, corruption_mix.<CORRUPTION_KIND>, and the
# optional corrupt_window (two ints).


def save_profile(profile: SusceptibilityProfile, fp: TextIO) -> None:
    fp.write(f"width_band = {profile.width_band[0]} {profile.width_band[1]}\n")
    fp.write(f"offset_band = {profile.offset_band[0]} {profile.offset_band[1]}\n")
    fp.write(f"reset_coeff = {profile.reset_coeff!r}\n")
    for kind in OpKind:
        fp.write(f"corrupt_prob.{kind.value} = "
                 f"{profile.corrupt_prob.get(kind, 0.0)!r}\n")
    for kind in CorruptionKind:
        fp.write(f"corruption_mix.{kind.value} = "
                 f"{profile.corruption_mix.get(kind, 0.0)!r}\n")
    if profile.corrupt_window is not None:
        fp.write(f"corrupt_window = {profile.corrupt_window[0]} "
                 f"{profile.corrupt_window[1]}\n")


def load_profile(fp: TextIO) -> SusceptibilityProfile:
    fields: dict[str, str] = {}
    for raw in fp:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"malformed profile line: {raw.rstrip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        fields[key] = value

    def band(key: str, default: tuple[int, int]) -> tuple[int, int]:
        if key not in fields:
            return default
        lo, hi = fields[key].split()
        return (int(lo), int(hi))

    corrupt_prob = {
        kind: float(fields.get(f"corrupt_prob.{kind.value}", 0.25))
        for kind in OpKind
    }
    base_mix = default_profile().corruption_mix
    corruption_mix = {
        kind: float(fields.get(f"corruption_mix.{kind.value}", base_mix[kind]))
        for kind in CorruptionKind
    }
    window = None
    if "corrupt_window" in fields:
        lo, hi = fields["corrupt_window"].split()
        window = (int(lo), int(hi))
    return SusceptibilityProfile(
        width_band=band("width_band", (2400, 2800)),
        offset_band=band("offset_band", (2400, 2800)),
        corrupt_prob=corrupt_prob,
        reset_coeff=float(fields.get("reset_coeff", 0.02)),
        corruption_mix=corruption_mix,
        corrupt_window=window,
    )
