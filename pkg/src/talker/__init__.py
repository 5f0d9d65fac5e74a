"""Instruction-driven editing of audio-conditioned talking radiance fields."""

__version__ = "0.1.0"
