"""Reliability of quantum-circuit outcomes under drifting device noise."""

from __future__ import annotations

__version__ = "0.1.0"
