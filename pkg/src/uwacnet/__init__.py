"""
Underwater acoustic channel models, network-coding power bounds and
MAC-level scheme simulation.
"""
from __future__ import annotations

__version__ = "1.0.0"
