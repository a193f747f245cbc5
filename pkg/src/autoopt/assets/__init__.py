"""Packaged data files: demo scenes, prompt templates, annotated corpora."""

import json
from importlib import resources


def asset_text(name: str) -> str:
    return resources.files(__package__).joinpath(name).read_text(encoding="utf-8")


def load_asset_json(name: str) -> dict:
    return json.loads(asset_text(name))
