"""glitchsim: deterministic voltage-glitch campaign simulator for an
embedded readout-correction MLP.

Pipeline modules: dataset (synthetic IQ features), model (network and
trainer), trace (cycle-annotated micro-ops), faults (glitch-to-corruption
engine), campaign (trial protocol and logs), search (parameter-space
optimization), analysis (bitstring statistics), defense (countermeasures),
cli (command-line pipeline).
"""

__version__ = "0.1.0"

from .faults import GlitchConfig, IDENTITY_GLITCH, SusceptibilityProfile
from .model import ModelDims, ModelParams, forward, predict_bits, softmax
from .trace import compile_trace, layer_windows, locate

__all__ = [
    "GlitchConfig", "IDENTITY_GLITCH", "SusceptibilityProfile",
    "ModelDims", "ModelParams", "forward", "predict_bits", "softmax",
    "compile_trace", "layer_windows", "locate",
    "__version__",
]
