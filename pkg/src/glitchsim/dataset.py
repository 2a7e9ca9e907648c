"""Synthetic labeled IQ feature generator for the 32 readout classes.

Each class centroid places every qubit's feature block at +scale (bit 1)
or -scale (bit 0); samples add axis-aligned Gaussian noise. An optional
noisy-bit-1 channel redraws qubit 1's block from the opposite bit's
centroid while keeping the label, reproducing the label/feature mismatch
seen on readout hardware where bit 1 is unreliable.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .model import NUM_CLASSES, NUM_QUBITS, predict_bits


@dataclass(frozen=True)
class GenConfig:
    d: int = 10
    centroid_scale: float = 1.0
    noise_sigma: float = 0.3
    bit1_flip_prob: float = 0.0
    samples_per_class: int = 200

    def __post_init__(self) -> None:
        if self.d < NUM_QUBITS or self.d % NUM_QUBITS != 0:
            raise ValueError(f"d must be a positive multiple of {NUM_QUBITS}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.bit1_flip_prob <= 1.0:
            raise ValueError("bit1_flip_prob must be in [0, 1]")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")

    @property
    def block(self) -> int:
        """Features per qubit (2 by default: I and Q)."""
        return self.d // NUM_QUBITS


@dataclass
class Dataset:
    train_features: np.ndarray
    train_labels: np.ndarray
    test_features: np.ndarray
    test_labels: np.ndarray
    config: GenConfig


def qubit_bit(class_index: int, qubit: int) -> int:
    """Bit of the class for one qubit; qubit 4 is the leftmost string bit."""
    return (class_index >> qubit) & 1


def centroid(class_index: int, config: GenConfig) -> np.ndarray:
    """Noise-free feature vector for a class."""
    if not 0 <= class_index < NUM_CLASSES:
        raise ValueError(f"class index {class_index} out of range 0..31")
    out = np.empty(config.d)
    for q in range(NUM_QUBITS):
        sign = 1.0 if qubit_bit(class_index, q) else -1.0
        out[q * config.block:(q + 1) * config.block] = sign * config.centroid_scale
    return out


def _sample_block(
    config: GenConfig, rng: np.random.Generator, count: int
) -> tuple[np.ndarray, np.ndarray]:
    features = np.empty((count * NUM_CLASSES, config.d))
    labels = np.empty(count * NUM_CLASSES, dtype=np.int64)
    b = config.block
    q1 = slice(1 * b, 2 * b)
    for k in range(NUM_CLASSES):
        base = centroid(k, config)
        block = base + rng.normal(0.0, config.noise_sigma, size=(count, config.d))
        # flipped rows keep their noise draw; only the mean moves to the
        # opposite bit's centroid
        flipped = rng.random(count) < config.bit1_flip_prob
        block[flipped, q1] -= 2.0 * base[q1]
        rows = slice(k * count, (k + 1) * count)
        features[rows] = block
        labels[rows] = k
    return features, labels


def generate(config: GenConfig, seed: int) -> Dataset:
    """Deterministic stratified dataset: samples_per_class in each split."""
    rng = np.random.default_rng(seed)
    train_x, train_y = _sample_block(config, rng, config.samples_per_class)
    test_x, test_y = _sample_block(config, rng, config.samples_per_class)
    return Dataset(train_x, train_y, test_x, test_y, config)


def sample_class(config: GenConfig, class_index: int, count: int,
                 seed: int) -> np.ndarray:
    """Fresh feature draws for one class (marginally distributed exactly
    like the class's rows in generate). Used for calibration sweeps that
    need many inputs of a single class."""
    if not 0 <= class_index < NUM_CLASSES:
        raise ValueError(f"class index {class_index} out of range 0..31")
    rng = np.random.default_rng(seed)
    base = centroid(class_index, config)
    b = config.block
    q1 = slice(1 * b, 2 * b)
    block = base + rng.normal(0.0, config.noise_sigma, size=(count, config.d))
    flipped = rng.random(count) < config.bit1_flip_prob
    block[flipped, q1] -= 2.0 * base[q1]
    return block


def one_per_class(dataset: Dataset, seed: int) -> list[tuple[int, int, np.ndarray]]:
    """Pick one test input per class: (input_id, true_class, features).

    input_id is the row index in the test split.
    """
    rng = np.random.default_rng(seed)
    picks = []
    for k in range(NUM_CLASSES):
        rows = np.flatnonzero(dataset.test_labels == k)
        idx = int(rows[rng.integers(0, len(rows))])
        picks.append((idx, k, dataset.test_features[idx]))
    return picks


def save_split_csv(features: np.ndarray, labels: np.ndarray, fp: TextIO) -> None:
    """CSV with header class,f0,...,f{d-1}; one row per sample."""
    d = features.shape[1]
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(["class"] + [f"f{i}" for i in range(d)])
    for label, row in zip(labels, features):
        writer.writerow([int(label)] + [repr(float(v)) for v in row])


def load_split_csv(fp: TextIO) -> tuple[np.ndarray, np.ndarray]:
    reader = csv.reader(fp)
    header = next(reader)
    if not header or header[0] != "class":
        raise ValueError("dataset CSV must start with a 'class' column")
    labels, rows = [], []
    for line in reader:
        labels.append(int(line[0]))
        rows.append([float(v) for v in line[1:]])
    if not rows:
        raise ValueError("dataset CSV holds no samples")
    return np.array(rows), np.array(labels, dtype=np.int64)


def class_bits_table() -> dict[int, str]:
    """Convenience map class -> 5-bit string for reports."""
    return {k: predict_bits(k) for k in range(NUM_CLASSES)}
