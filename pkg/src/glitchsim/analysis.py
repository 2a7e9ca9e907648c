"""Bitstring-level statistics over campaign logs.

Resets carry no classified output, so they are excluded from bit and
class statistics and reported as separate counts, mirroring how the
hardware campaign figures show only classified outputs.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence, TextIO

from scipy.stats import chisquare

from .model import NUM_CLASSES, NUM_QUBITS

if TYPE_CHECKING:  # pragma: no cover
    from .campaign import TrialRecord
    from .search import SearchReport


def hamming(a: str, b: str) -> int:
    """Hamming distance between two 5-bit strings."""
    for s in (a, b):
        if len(s) != NUM_QUBITS or any(ch not in "01" for ch in s):
            raise ValueError(f"malformed 5-bit string: {s!r}")
    return sum(1 for x, y in zip(a, b) if x != y)


@dataclass(frozen=True)
class BitFlipStats:
    per_bit_flip_rate: tuple[float, ...] | None  # None when every trial reset
    mean_hamming: float | None
    hamming_histogram: tuple[int, ...]  # counts indexed by distance 0..5
    n_reset: int
    n_trials: int


def bit_flip_stats(log: Sequence["TrialRecord"]) -> BitFlipStats:
    """Per-bit flip rates and Hamming histogram over non-reset trials."""
    if not log:
        raise ValueError("empty campaign log")
    flips = [0] * NUM_QUBITS
    histogram = [0] * (NUM_QUBITS + 1)
    n_reset = 0
    total_hamming = 0
    for rec in log:
        if rec.bit_flips is None:
            n_reset += 1
            continue
        h = sum(rec.bit_flips)
        histogram[h] += 1
        total_hamming += h
        for i, flipped in enumerate(rec.bit_flips):
            flips[i] += int(flipped)
    n_classified = len(log) - n_reset
    if n_classified == 0:
        return BitFlipStats(None, None, tuple(histogram), n_reset, len(log))
    return BitFlipStats(
        per_bit_flip_rate=tuple(f / n_classified for f in flips),
        mean_hamming=total_hamming / n_classified,
        hamming_histogram=tuple(histogram),
        n_reset=n_reset,
        n_trials=len(log),
    )


@dataclass(frozen=True)
class ClassHistogram:
    counts: tuple[int, ...]  # predicted-class counts over non-reset trials
    total: int               # all matching trials, resets included

    @property
    def n_reset(self) -> int:
        return self.total - sum(self.counts)


def class_histogram(
    log: Sequence["TrialRecord"], true_class: int | None = None
) -> ClassHistogram:
    """Distribution of predicted classes, optionally filtered by truth."""
    if not log:
        raise ValueError("empty campaign log")
    counts = [0] * NUM_CLASSES
    total = 0
    for rec in log:
        if true_class is not None and rec.true_class != true_class:
            continue
        total += 1
        predicted = rec.predicted_class
        if predicted is not None:
            counts[predicted] += 1
    return ClassHistogram(tuple(counts), total)


def chi_square_uniformity(stats: BitFlipStats) -> tuple[float, float]:
    """Chi-square test of per-bit flip counts against a uniform spread.

    Distinguishes structured corruption (some bits flip far more often)
    from noise that hits all bit positions alike.
    """
    if stats.per_bit_flip_rate is None:
        raise ValueError("no classified trials to test")
    n = stats.n_trials - stats.n_reset
    counts = [rate * n for rate in stats.per_bit_flip_rate]
    if sum(counts) == 0:
        return 0.0, 1.0
    stat, p = chisquare(counts)
    return float(stat), float(p)


def top_k_table(report: "SearchReport", k: int) -> list[dict]:
    """First k ranked rows in the per-layer table layout."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rows = []
    for rank, ev in enumerate(report.top_k[:k], start=1):
        rows.append({
            "rank": rank,
            "width": ev.glitch.width,
            "offset": ev.glitch.offset,
            "external_offset": ev.glitch.external_offset,
            "repeats": ev.glitch.repeat,
            "faults": ev.fault_count,
            "resets": ev.reset_count,
            "score": ev.score,
        })
    return rows


TOPK_COLUMNS = ["rank", "width", "offset", "external_offset", "repeats",
                "faults", "resets", "score"]


def export_topk_csv(report: "SearchReport", k: int, fp: TextIO) -> None:
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(TOPK_COLUMNS)
    for row in top_k_table(report, k):
        writer.writerow([row[c] if c != "score" else repr(row[c])
                         for c in TOPK_COLUMNS])


def export_histogram_csv(hist: ClassHistogram, fp: TextIO) -> None:
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(["class", "count"])
    for k, count in enumerate(hist.counts):
        writer.writerow([k, count])


def export_bitflips_csv(stats: BitFlipStats, fp: TextIO) -> None:
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(["bit", "rate"])
    rates = stats.per_bit_flip_rate or (0.0,) * NUM_QUBITS
    for i, rate in enumerate(rates):
        writer.writerow([i, repr(rate)])

