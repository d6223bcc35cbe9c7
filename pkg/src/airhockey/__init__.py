"""Desk-scale air hockey pipeline: hitting-trajectory optimization, puck simulation,
puck tracking, simulator identification and game tactics."""

__version__ = "0.1.0"
