"""Street-opening planner: collision-risk prediction over a road network and
Q-learning for choosing which segments to open."""

__version__ = "0.1.0"
