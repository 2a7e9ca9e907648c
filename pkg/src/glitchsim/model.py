"""Five-layer readout-correction network: dense/ReLU/dense/ReLU/softmax.

The classifier maps per-qubit IQ features to one of 32 classes (5 readout
bits). Inference is double-precision throughout so that bit-level
corruption of in-flight values is well defined on the 64-bit float
pattern. The single-vector forward pass avoids BLAS reductions on purpose:
elementwise multiply plus numpy pairwise sum gives bit-stable results
regardless of the BLAS build or thread count.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

NUM_CLASSES = 32
NUM_QUBITS = 5


@dataclass(frozen=True)
class ModelDims:
    """Layer widths. The class count is pinned to 32 (5 readout bits)."""

    d: int = 10
    h1: int = 16
    h2: int = 32
    c: int = 32

    def __post_init__(self) -> None:
        if self.c != NUM_CLASSES:
            raise ValueError(f"class count must be {NUM_CLASSES}, got {self.c}")
        for name in ("d", "h1", "h2"):
            if getattr(self, name) < 1:
                raise ValueError(f"dimension {name} must be >= 1")


@dataclass
class ModelParams:
    """Weight and bias tensors for the five-layer network."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    dims: ModelDims

    def __post_init__(self) -> None:
        d, h1, h2, c = self.dims.d, self.dims.h1, self.dims.h2, self.dims.c
        expected = {
            "w1": (h1, d), "b1": (h1,),
            "w2": (h2, h1), "b2": (h2,),
            "wo": (c, h2), "bo": (c,),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite entries")
            setattr(self, name, arr)


@dataclass
class ForwardResult:
    """All intermediates of one forward pass plus the decoded prediction.

    For a faulted pass the usual invariants (a1 = max(0, z1), probs summing
    to one) may not hold; the fields simply record what the corrupted
    execution produced.
    """

    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    zo: np.ndarray
    probs: np.ndarray
    predicted_class: int = field(init=False)
    predicted_bits: str = field(init=False)

    def __post_init__(self) -> None:
        # argmax with lowest-index tie-break (numpy argmax already does this)
        self.predicted_class = int(np.argmax(self.probs))
        self.predicted_bits = predict_bits(self.predicted_class)


def predict_bits(class_index: int) -> str:
    """Render a class index as its 5-bit string, qubit 4 leftmost."""
    if not 0 <= class_index < NUM_CLASSES:
        raise ValueError(f"class index {class_index} out of range 0..31")
    return format(class_index, "05b")


def bits_to_class(bits: str) -> int:
    """Inverse of predict_bits."""
    if len(bits) != NUM_QUBITS or any(ch not in "01" for ch in bits):
        raise ValueError(f"malformed 5-bit string: {bits!r}")
    return int(bits, 2)


def softmax(z: np.ndarray) -> np.ndarray:
    """Stabilized softmax; invariant under adding a constant to all entries."""
    z = np.asarray(z, dtype=np.float64)
    if not np.isfinite(z).all():
        raise ValueError("softmax input must be finite")
    e = np.exp(z - z.max())
    return e / e.sum()


def dense(w: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    # BLAS-free on purpose: see module docstring.
    return (w * x).sum(axis=1) + b


def forward(params: ModelParams, x: np.ndarray) -> ForwardResult:
    """Clean forward pass. Pure and deterministic."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.dims.d,):
        raise ValueError(f"input has shape {x.shape}, expected ({params.dims.d},)")
    z1 = dense(params.w1, x, params.b1)
    a1 = np.maximum(0.0, z1)
    z2 = dense(params.w2, a1, params.b2)
    a2 = np.maximum(0.0, z2)
    zo = dense(params.wo, a2, params.bo)
    probs = softmax(zo)
    return ForwardResult(z1=z1, a1=a1, z2=z2, a2=a2, zo=zo, probs=probs)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 30
    batch_size: int = 32
    h1: int = 16
    h2: int = 32


def _init_params(dims: ModelDims, rng: np.random.Generator) -> ModelParams:
    def layer(n_out: int, n_in: int) -> np.ndarray:
        return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_out, n_in))

    return ModelParams(
        w1=layer(dims.h1, dims.d), b1=np.zeros(dims.h1),
        w2=layer(dims.h2, dims.h1), b2=np.zeros(dims.h2),
        wo=layer(dims.c, dims.h2), bo=np.zeros(dims.c),
        dims=dims,
    )


def train(
    features: np.ndarray,
    labels: np.ndarray,
    hyper: TrainConfig | None = None,
    seed: int = 0,
) -> ModelParams:
    """Train with plain minibatch SGD on softmax cross-entropy.

    Deterministic given the seed: initialization and epoch shuffles come
    from one PCG64 stream. Zero epochs returns the initialization
    unchanged.
    """
    hyper = hyper or TrainConfig()
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or len(features) != len(labels) or len(features) == 0:
        raise ValueError("features must be (n, d) with matching labels")
    present = set(labels.tolist())
    missing = sorted(set(range(NUM_CLASSES)) - present)
    if missing:
        raise ValueError(f"training set is missing classes {missing}")

    dims = ModelDims(d=features.shape[1], h1=hyper.h1, h2=hyper.h2)
    rng = np.random.default_rng(seed)
    p = _init_params(dims, rng)
    n = len(features)
    onehot = np.eye(NUM_CLASSES)[labels]

    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            xb, yb = features[idx], onehot[idx]
            m = len(idx)

            z1 = xb @ p.w1.T + p.b1
            a1 = np.maximum(0.0, z1)
            z2 = a1 @ p.w2.T + p.b2
            a2 = np.maximum(0.0, z2)
            zo = a2 @ p.wo.T + p.bo
            zo -= zo.max(axis=1, keepdims=True)
            e = np.exp(zo)
            probs = e / e.sum(axis=1, keepdims=True)

            dzo = (probs - yb) / m
            da2 = dzo @ p.wo
            dz2 = da2 * (z2 > 0)
            da1 = dz2 @ p.w2
            dz1 = da1 * (z1 > 0)

            lr = hyper.learning_rate
            p.wo -= lr * (dzo.T @ a2)
            p.bo -= lr * dzo.sum(axis=0)
            p.w2 -= lr * (dz2.T @ a1)
            p.b2 -= lr * dz2.sum(axis=0)
            p.w1 -= lr * (dz1.T @ xb)
            p.b1 -= lr * dz1.sum(axis=0)

    return p


def accuracy(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> float:
    z1 = features @ params.w1.T + params.b1
    a1 = np.maximum(0.0, z1)
    z2 = a1 @ params.w2.T + params.b2
    a2 = np.maximum(0.0, z2)
    zo = a2 @ params.wo.T + params.bo
    return float((zo.argmax(axis=1) == labels).mean())


# --- MLPv1 weights file -------------------------------------------------
#
# First line: "MLPv1 d h1 h2 32". Then whitespace-separated decimal floats
# in row-major order for w1, b1, w2, b2, wo, bo. Floats are written with
# repr() so a load/save round trip is bit exact.

_MAGIC = "MLPv1"


def save_params(params: ModelParams, fp: TextIO) -> None:
    d = params.dims
    fp.write(f"{_MAGIC} {d.d} {d.h1} {d.h2} {d.c}\n")
    for arr in (params.w1, params.b1, params.w2, params.b2, params.wo, params.bo):
        fp.write(" ".join(repr(float(v)) for v in arr.ravel()))
        fp.write("\n")


def load_params(fp: TextIO) -> ModelParams:
    header = fp.readline().split()
    if len(header) != 5 or header[0] != _MAGIC:
        raise ValueError("not an MLPv1 weights file")
    d, h1, h2, c = (int(v) for v in header[1:])
    dims = ModelDims(d=d, h1=h1, h2=h2, c=c)
    values = fp.read().split()
    counts = [h1 * d, h1, h2 * h1, h2, c * h2, c]
    if len(values) != sum(counts):
        raise ValueError(
            f"weights file holds {len(values)} values, expected {sum(counts)}"
        )
    arrays = []
    pos = 0
    for count in counts:
        arrays.append(np.array([float(v) for v in values[pos:pos + count]]))
        pos += count
    w1, b1, w2, b2, wo, bo = arrays
    return ModelParams(
        w1=w1.reshape(h1, d), b1=b1, w2=w2.reshape(h2, h1), b2=b2,
        wo=wo.reshape(c, h2), bo=bo, dims=dims,
    )
