"""agroforge: expert-tuning corpus synthesis and evaluation for agricultural vision data."""

__version__ = "0.1.0"
