"""Multi-modal vehicle path prediction at intersections.

A recurrent encoder/decoder with a mixture-density output, a clustering step
that turns the per-step mixtures into ranked candidate paths, kinematic
baselines and the evaluation metrics used to compare them.
"""
from .types import (ManeuverClass, MdnStep, MixtureComponent, ModelConfig, NormStats, PathProposal,
                    PredictionSequence, TrackSnippet, Variant)

__version__ = "0.1.0"

__all__ = ["ManeuverClass", "MdnStep", "MixtureComponent", "ModelConfig", "NormStats", "PathProposal",
           "PredictionSequence", "TrackSnippet", "Variant", "__version__"]
