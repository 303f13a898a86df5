"""spinsight: table-tennis ball flight simulation, synthetic 2D-observation
datasets, and transformer-based recovery of initial spin and 3D trajectory
from monocular 2D tracks."""

__version__ = "0.1.0"
