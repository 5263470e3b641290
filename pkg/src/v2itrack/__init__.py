"""EKF-based vehicle tracking over mmWave V2I uplink sounding with SANR-driven RSU selection."""

__version__ = "0.1.0"
