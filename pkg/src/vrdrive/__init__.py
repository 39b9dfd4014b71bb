"""Virtual-to-real reinforcement learning for driving at desk scale."""

__version__ = "0.1.0"
