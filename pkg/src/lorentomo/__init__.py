"""Lorentz-adapted quantum state tomography and adaptive state tracking."""

__version__ = "0.1.0"

from .errors import TomographyError
from .estimator import CountRecord, MLEResult, efficiency, min_loss, mle_reconstruct, sample_counts
from .protocol import InstrumentalMatrix, lorentz_of_state, lorentz_protocol, mub_protocol
from .qmat import StateGenConfig, fidelity, purify, random_mixed_state
from .tracker import EvolutionConfig, TrackingRecord, run_tracking

__all__ = [
    "CountRecord",
    "EvolutionConfig",
    "InstrumentalMatrix",
    "MLEResult",
    "StateGenConfig",
    "TomographyError",
    "TrackingRecord",
    "efficiency",
    "fidelity",
    "lorentz_of_state",
    "lorentz_protocol",
    "min_loss",
    "mle_reconstruct",
    "mub_protocol",
    "purify",
    "random_mixed_state",
    "run_tracking",
    "sample_counts",
]
