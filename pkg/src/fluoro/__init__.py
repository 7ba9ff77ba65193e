"""Time-bin entangled photon pairs from the resonance fluorescence of a single two-level emitter."""

__version__ = "0.1.0"
