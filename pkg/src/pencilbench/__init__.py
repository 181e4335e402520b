"""Matrix-pencil analysis of numerical integration methods for DAEs."""

__version__ = "0.1.0"
