"""Stay-region extraction from GNSS trajectories.

Weak stay labels from OpenStreetMap heuristics, a transformer point labeller
trained with a forecasting side task, classical clustering baselines and the
evaluation protocol around them.
"""

__version__ = "0.1.0"
