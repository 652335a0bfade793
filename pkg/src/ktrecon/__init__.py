"""Dynamic (2D+time) MRI reconstruction toolkit."""

__version__ = "0.1.0"
