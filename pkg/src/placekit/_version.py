"""Single source of the tool version recorded in output manifests."""

__version__ = "0.1.0"
