"""Speed planning with an interaction point model."""
__version__ = "0.1.0"
