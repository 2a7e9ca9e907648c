"""Synthetic log builders shared across test modules."""
from glitchsim.analysis import hamming
from glitchsim.campaign import (VERDICT_CORRECT, VERDICT_MISPREDICTION,
                                VERDICT_RESET, ConfigResult, TrialRecord)
from glitchsim.faults import GlitchConfig, IDENTITY_GLITCH
from glitchsim.model import predict_bits


def record(true_class, predicted, index=0, reset=False):
    """Synthetic TrialRecord the way run_trial would build it."""
    if reset:
        return TrialRecord(index, index, true_class, IDENTITY_GLITCH,
                           VERDICT_RESET, None, None, None, seed=index)
    tb, pb = predict_bits(true_class), predict_bits(predicted)
    flips = tuple(a != b for a, b in zip(tb, pb))
    verdict = VERDICT_CORRECT if predicted == true_class else VERDICT_MISPREDICTION
    return TrialRecord(index, index, true_class, IDENTITY_GLITCH, verdict,
                       None if predicted == true_class else predicted,
                       hamming(tb, pb), flips, seed=index)


def random_log(rng, n=50):
    recs = []
    for i in range(n):
        true = int(rng.integers(0, 32))
        if rng.random() < 0.15:
            recs.append(record(true, 0, index=i, reset=True))
        else:
            recs.append(record(true, int(rng.integers(0, 32)), index=i))
    return recs


def synthetic_result(hammings, resets=0, predictions=None, true_class=0):
    """ConfigResult stand-in with controlled hamming values."""
    recs = []
    i = 0
    for h in hammings:
        predicted = (true_class ^ ((1 << h) - 1)) & 31  # h bits differ
        recs.append(record(true_class, predicted, index=i))
        i += 1
    for _ in range(resets):
        recs.append(record(true_class, 0, index=i, reset=True))
        i += 1
    if predictions:
        for true, pred in predictions:
            recs.append(record(true, pred, index=i))
            i += 1
    trials = tuple(recs)
    faults = sum(1 for t in trials if t.verdict == VERDICT_MISPREDICTION)
    return ConfigResult(GlitchConfig(0, 0, 0, 1), trials, faults, resets)
