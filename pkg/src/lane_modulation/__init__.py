"""
Lane Modulation - dense hybrid proposal modulation for lane detection

Differentiable geometric losses over a bank of Bezier lane proposals and a
desk-scale harness that descends them directly on proposal parameters.

Features:
- Availability constraint (shape + endpoint location) on every proposal
- Intra-cluster diversity constraint with a per-cluster upper limit
- Quality-aware soft labels for the confidence loss
- Finite-difference gradient verification, CULane/TuSimple-style metrics
"""

__version__ = "1.0.0"
__schema_version__ = 1
