"""Mask-driven MVDR / GEV beamforming with reduced-precision BLSTM mask estimation."""

__version__ = "0.1.0"
