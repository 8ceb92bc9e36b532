"""Render table cells into medical-language sentences via per-feature templates.

A scalar template (numerical / categorical / freetext) carries exactly one
"[value]" placeholder. A binary feature carries two complete sentences and
the cell's truth value selects one of them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

from .errors import ConfigError

PLACEHOLDER = "[value]"

# Sentence substituted for a missing free-text note during imputation.
MISSING_TEXT_SENTINEL = "There is no data available."


@dataclass(frozen=True)
class PromptTemplate:
    """Either a scalar template (text) or a binary pair (positive/negative)."""

    text: Optional[str] = None
    positive_text: Optional[str] = None
    negative_text: Optional[str] = None

    @property
    def is_binary(self) -> bool:
        return self.positive_text is not None

    def validate(self, kind: str, feature_name: str) -> None:
        if kind == "binary":
            if self.positive_text is None or self.negative_text is None:
                raise ConfigError(
                    f"feature '{feature_name}': binary feature needs "
                    "template_pos and template_neg"
                )
            for side in (self.positive_text, self.negative_text):
                if PLACEHOLDER in side:
                    raise ConfigError(
                        f"feature '{feature_name}': binary templates must not "
                        f"contain '{PLACEHOLDER}'"
                    )
        else:
            if self.text is None:
                raise ConfigError(
                    f"feature '{feature_name}': missing 'template'"
                )
            n = self.text.count(PLACEHOLDER)
            if n != 1:
                raise ConfigError(
                    f"feature '{feature_name}': template must contain "
                    f"'{PLACEHOLDER}' exactly once (found {n})"
                )


def default_template(name: str, kind: str) -> PromptTemplate:
    """Fallback phrasing for schemas that ship no template."""
    pretty = name.lower().replace("_", " ")
    if kind == "binary":
        return PromptTemplate(
            positive_text=f"The patient has {pretty}.",
            negative_text=f"The patient does not have {pretty}.",
        )
    if kind == "freetext":
        return PromptTemplate(text=f"{pretty}: {PLACEHOLDER}")
    return PromptTemplate(text=f"The {pretty} of the patient is {PLACEHOLDER}.")


_SHORT_DECIMAL = re.compile(r"^-?\d+\.\d{1,4}$")


def format_value(value) -> str:
    """Format a cell value for substitution into a prompt.

    Integers render without a decimal point; other reals use the shortest
    round-trip decimal capped at 4 fractional digits. Booleans render as
    yes/no (used by the raw-value ablation).
    """
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        if value == int(value) and abs(value) < 1e15:
            return str(int(value))
        r = repr(value)
        if _SHORT_DECIMAL.match(r):
            return r
        s = f"{value:.4f}".rstrip("0").rstrip(".")
        return s
    return str(value)


def render_prompt(spec, cell) -> str:
    """Render one imputed cell through its feature's template."""
    template = spec.template
    if spec.kind == "binary":
        return template.positive_text if cell else template.negative_text
    return template.text.replace(PLACEHOLDER, format_value(cell))


def render_raw(spec, cell) -> str:
    """Ablation variant: the bare formatted cell value, no template."""
    return format_value(cell)


def render_row(schema, row) -> list[str]:
    """Prompts for one imputed row, in schema column order."""
    return [render_prompt(spec, cell) for spec, cell in zip(schema.features, row)]
