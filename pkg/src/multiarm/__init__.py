"""Multi-manipulator formation control lab with event-triggered safety filtering."""

__version__ = "0.1.0"
