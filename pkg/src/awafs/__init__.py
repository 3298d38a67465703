"""Packet-level leaf-spine simulator with adaptive MLFQ flow scheduling."""

__version__ = "0.1.0"
