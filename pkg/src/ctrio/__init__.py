"""Continuous-time radar-inertial odometry toolkit."""

__version__ = "0.1.0"
