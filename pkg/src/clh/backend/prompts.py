"""Prompt templates for the four coding agents."""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any

import jinja2
import jinja2.meta

from clh.errors import MissingSlot

TEMPLATE_NAMES = ("evidence", "navigator", "validator", "reconciler")
THINK_OPENER = "<think>"


def custom_tojson(value: Any) -> str:
    return json.dumps(str(value), ensure_ascii=False)


_env = jinja2.Environment(
    undefined=jinja2.StrictUndefined,
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
    autoescape=False,
)
_env.globals["custom_tojson"] = custom_tojson


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    def __post_init__(self) -> None:
        if "<answer>" not in self.body:
            raise ValueError(f"template {self.name!r} has no <answer> instruction")
        if not self.body.rstrip().endswith(THINK_OPENER):
            raise ValueError(f"template {self.name!r} must end with the {THINK_OPENER} opener")

    @property
    def slots(self) -> frozenset[str]:
        return _slots(self.body)

    def compiled(self) -> jinja2.Template:
        return _compile(self.body)


@lru_cache(maxsize=None)
def _compile(body: str) -> jinja2.Template:
    return _env.from_string(body)


@lru_cache(maxsize=None)
def _slots(body: str) -> frozenset[str]:
    return frozenset(jinja2.meta.find_undeclared_variables(_env.parse(body)) - set(_env.globals))


def load_template(name: str, directory: str | Path | None = None) -> PromptTemplate:
    """Load ``<name>.j2`` from ``directory`` or from the bundled templates."""
    if name not in TEMPLATE_NAMES:
        raise ValueError(f"unknown template {name!r}; expected one of {TEMPLATE_NAMES}")
    if directory is not None:
        body = (Path(directory) / f"{name}.j2").read_text(encoding="utf-8")
    else:
        body = resources.files("clh.backend").joinpath("templates", f"{name}.j2").read_text(encoding="utf-8")
    return PromptTemplate(name, body)


def load_templates(directory: str | Path | None = None) -> dict[str, PromptTemplate]:
    return {name: load_template(name, directory) for name in TEMPLATE_NAMES}


def render(template: PromptTemplate, slots: Mapping[str, Any], thinking: bool = True) -> str:
    """Fill the template's slots.

    With ``thinking=False`` (constrained decoding) the trailing ``<think>``
    opener is dropped so the answer starts immediately.
    """
    missing = sorted(template.slots - set(slots))
    if missing:
        raise MissingSlot(f"template {template.name!r} is missing slots: {', '.join(missing)}")
    try:
        text = template.compiled().render(**slots)
    except jinja2.UndefinedError as exc:
        raise MissingSlot(f"template {template.name!r}: {exc}") from exc
    if not thinking:
        stripped = text.rstrip()
        text = stripped[: -len(THINK_OPENER)].rstrip() + "\n"
    return text
