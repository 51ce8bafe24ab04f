"""Data models: validated domain types, per-frame state and API schemas."""
from .schemas import (
    CodeProfile,
    DecodeMode,
    DecodePolicy,
    DegreeDistribution,
    EstimateResult,
    SearchSpec,
    TrialPlan,
)
from .frame import ERASED, FrameState, InterferenceConfig, Layer, UserTransmission

__all__ = [
    "CodeProfile",
    "DecodeMode",
    "DecodePolicy",
    "DegreeDistribution",
    "EstimateResult",
    "SearchSpec",
    "TrialPlan",
    "ERASED",
    "FrameState",
    "InterferenceConfig",
    "Layer",
    "UserTransmission",
]
