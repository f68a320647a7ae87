"""Voice anomaly analysis from paired glottal flow estimates."""

__version__ = "0.1.0"
