"""Process-level defect analysis for agent execution trajectories."""

__version__ = "0.1.0"
