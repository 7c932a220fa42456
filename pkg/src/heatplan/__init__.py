"""Spatial-temporal heatmap planning: collision density maps, a trajectory
post-solver and a closed-loop evaluation harness."""

__version__ = "0.1.0"
