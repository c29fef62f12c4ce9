"""Bundled scenario corpus used by the acceptance suite and the demos."""

from __future__ import annotations

from importlib import resources

from .model import Scenario, load_scenario

#: Corpus instances, in the order the acceptance suite reports them.
NAMES = ("nested_2x2", "correlated_2x2", "output_2x2", "nested_4x4", "partial_2x2",
         "partial_4x4")


def text(name: str) -> str:
    return resources.files(__package__).joinpath("scenarios", f"{name}.json").read_text("utf-8")


def path(name: str):
    """Filesystem path of a bundled scenario (for the command-line tool)."""
    return resources.files(__package__).joinpath("scenarios", f"{name}.json")


def load(name: str) -> Scenario:
    return load_scenario(text(name))


def all_scenarios() -> list[Scenario]:
    return [load(name) for name in NAMES]
