"""poselab: synthetic dense-pose data generation and sim/real mixture training."""

__version__ = "0.1.0"
