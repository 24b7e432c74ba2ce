"""tagforge: caption parsing, tag vocabularies, annotation cleaning, and tagging metrics."""

__version__ = "0.1.0"
