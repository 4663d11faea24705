"""Bundled case files."""

from __future__ import annotations

from pathlib import Path

from ..network import Network, load_case

CASE_DIR = Path(__file__).resolve().parent
BUNDLED = ("toy2", "toy3", "study6", "synthetic118")


def case_path(name: str) -> Path:
    """Path of a bundled case by name (with or without the .json suffix)."""
    stem = name[:-5] if name.endswith(".json") else name
    path = CASE_DIR / f"{stem}.json"
    if not path.exists():
        raise FileNotFoundError(f"no bundled case {name!r}; available: {', '.join(BUNDLED)}")
    return path


def load_bundled(name: str) -> Network:
    return load_case(case_path(name))
