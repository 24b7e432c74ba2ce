class TagforgeError(Exception):
    """Base class for data and validation errors raised by tagforge."""
