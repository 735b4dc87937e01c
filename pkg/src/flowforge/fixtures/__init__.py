"""Bundled example workflows and the stand-in tools they drive."""

import os


def fixture_path(*parts) -> str:
    """Absolute path of a file shipped under this package."""
    return os.path.join(os.path.dirname(__file__), *parts)
