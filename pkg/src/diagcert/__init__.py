"""Approximate diagnosability of discrete-time systems via hybrid barrier certificates."""

from importlib import resources

__version__ = "0.1.0"


def data_path(name: str) -> str:
    """Path of a bundled example document."""
    return str(resources.files(__package__) / "data" / name)
