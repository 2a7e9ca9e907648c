"""Shared fixtures: small trained models and compiled traces."""
from __future__ import annotations

import pytest

from glitchsim import campaign, dataset, faults, model, trace


@pytest.fixture(scope="session")
def ref_dims():
    return trace.REFERENCE_MCU_DIMS


@pytest.fixture(scope="session")
def ref_trace():
    return trace.compile_trace(*trace.TRACE_PRESETS["reference-mcu"])


@pytest.fixture(scope="session")
def clean_ds():
    """Low-noise dataset: every test input classifies correctly."""
    return dataset.generate(
        dataset.GenConfig(samples_per_class=50, noise_sigma=0.05), seed=7)


@pytest.fixture(scope="session")
def ref_params(clean_ds, ref_dims):
    hyper = model.TrainConfig(epochs=20, h1=ref_dims.h1, h2=ref_dims.h2)
    return model.train(clean_ds.train_features, clean_ds.train_labels, hyper, seed=7)


@pytest.fixture(scope="session")
def separable_inputs(clean_ds):
    return dataset.one_per_class(clean_ds, seed=3)


@pytest.fixture()
def ref_ctx(ref_params, separable_inputs, ref_trace):
    return campaign.CampaignContext(
        params=ref_params, inputs=separable_inputs, trace=ref_trace,
        profile=faults.default_profile(),
    )


def make_context(params, inputs, tr, profile, reps=3):
    return campaign.CampaignContext(
        params=params, inputs=inputs, trace=tr, profile=profile, reps=reps)
