"""Shared exception hierarchy."""


class ElastimapError(Exception):
    """Base class for all errors raised by this package."""
