"""Evolution strategies with a learned NICE search distribution."""

__version__ = "0.1.0"
