"""Energy-harvesting camera network simulator with a deep Q-learning offloading agent."""

__version__ = "0.1.0"
