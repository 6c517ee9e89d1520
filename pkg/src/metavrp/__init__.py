"""Meta-learning construction policies for vehicle routing."""

__version__ = "0.1.0"
