"""slicetwin: a desk-scale digital twin for joint network/compute slice allocation."""

__version__ = "0.1.0"
