"""Desk-scale dynamic occupancy grid workbench.

Particle-filter occupancy mapping from a synthetic ray-cast sensor, a small
fully convolutional network classifying occupied cells as moving/non-moving
with per-object heading regression, a velocity-statistics baseline, a
semi-automatic labeling loop, and an ROC evaluation harness.
"""

__version__ = "0.1.0"
