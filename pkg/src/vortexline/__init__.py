"""Nodal lines, X-points and chaos of 3-d Bohmian trajectories."""
from .errors import VortexLineError
from .wavefield import WavefunctionSpec, eval_field, ground_state, probability_current, triple_superposition

__version__ = "0.1.0"

__all__ = [
    "VortexLineError",
    "WavefunctionSpec",
    "eval_field",
    "ground_state",
    "probability_current",
    "triple_superposition",
    "__version__",
]
