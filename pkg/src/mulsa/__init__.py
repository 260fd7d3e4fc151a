"""Desk-scale multisensory manipulation: synchronized vision/audio/touch
simulators, a modality-temporal self-attention policy trained by behavioral
cloning, and a live teleoperation pathway."""

__version__ = "0.1.0"
