"""Desk-scale molecular dynamics, rigid-body docking and parallel-scaling benchmarks."""

__version__ = "0.1.0"
