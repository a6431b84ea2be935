"""Energy-efficient coordinated multigroup multicast beamforming with antenna selection."""

__version__ = "0.1.0"
