"""Construction and verification kit for Scherk saddle towers."""

__version__ = "0.1.0"
