"""Token timelines, sequence models and analytics for CLIF critical-care data."""

__version__ = "0.1.0"
