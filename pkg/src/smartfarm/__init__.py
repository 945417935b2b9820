"""Solar smart-farm sensor-network simulator with DT-guided PPO agents."""

__version__ = "0.1.0"
