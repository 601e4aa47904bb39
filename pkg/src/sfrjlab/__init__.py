"""Desk-scale solid-fuel ramjet laboratory: quasi-1D engine, adaptive thrust control."""

__version__ = "0.1.0"
