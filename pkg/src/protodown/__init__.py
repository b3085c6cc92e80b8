"""protodown: downstream proteomics analysis engine."""

__version__ = "0.1.0"
