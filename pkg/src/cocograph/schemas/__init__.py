"""JSON schemas for the files and reports written by the command-line tool."""

import json
from importlib import resources


def load(name):
    """Schema document by short name, e.g. ``load("metrics")``."""
    return json.loads(resources.files(__name__).joinpath(f"{name}.schema.json").read_text())
