"""Prompt template assets and rendering helpers.

Templates live as plain-text package data with ``<UPPER_SNAKE>`` slots.
Variadic answer lists are written in the templates as numbered entries with a
literal ``...`` row; :func:`render_numbered` expands that block to the actual
answer count.
"""

from __future__ import annotations

import re
from importlib import resources
from typing import Mapping, Sequence

PROMPT_NAMES = (
    "scorer",
    "judge",
    "majority_vote",
    "rollback",
    "refine_feedback",
    "refine_revision",
    "debate_round2",
    "debate_judge",
    "planner",
)

_SLOT_RE = re.compile(r"<([A-Z][A-Z0-9_]*)>")


class UnknownPrompt(KeyError):
    pass


def load_prompt(name: str) -> str:
    if name not in PROMPT_NAMES:
        raise UnknownPrompt(name)
    return (
        resources.files("veriflow").joinpath("templates").joinpath(f"{name}.txt").read_text("utf-8")
    )


def fill(template: str, slots: Mapping[str, str]) -> str:
    """Substitute ``<KEY>`` tokens. Keys absent from ``slots`` are left
    untouched so numbered blocks can be expanded separately."""

    def _sub(match: re.Match[str]) -> str:
        key = match.group(1)
        return slots[key] if key in slots else match.group(0)

    return _SLOT_RE.sub(_sub, template)


def render_numbered(template: str, label: str, answers: Sequence[str]) -> str:
    """Expand the numbered ``<label> i's Answer`` block to ``answers``.

    The template block starts at ``{label} 1's Answer:`` and ends with the
    ``{label} N's Answer: <PREDICTION_N>`` sentinel.
    """
    if not answers:
        raise ValueError("need at least one answer to render")
    start_marker = f"{label} 1's Answer:"
    end_marker = f"{label} N's Answer: <PREDICTION_N>"
    start = template.index(start_marker)
    end = template.index(end_marker) + len(end_marker)
    block = "\n\n".join(
        f"{label} {i}'s Answer: {text}" for i, text in enumerate(answers, start=1)
    )
    return template[:start] + block + template[end:]
