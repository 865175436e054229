"""Loader for the versioned prompt assets.

Each asset is a text file with an optional ``<<SYSTEM>>`` block followed by a
``<<USER>>`` block. Placeholders use ``{name}`` syntax; substitution is literal
(no str.format), so braces in embedded JSON examples survive untouched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

_PLACEHOLDER_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")

PROMPT_NAMES = (
    "paper_summary",
    "point_extraction",
    "query_generation",
    "point_comparison",
    "novelty_summary",
    "claim_extraction",
    "claim_dedup",
    "claim_validation",
    "report_correction",
    "report_polish",
    "eval_query_generation",
    "eval_answering",
)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    system: str | None
    user: str

    def placeholders(self) -> set[str]:
        found = set(_PLACEHOLDER_RE.findall(self.user))
        if self.system:
            found |= set(_PLACEHOLDER_RE.findall(self.system))
        return found

    def fill(self, **values: str) -> tuple[str | None, str]:
        """Substitute placeholders; unfilled ones are an error."""

        def _apply(text: str) -> str:
            for key, value in values.items():
                text = text.replace("{" + key + "}", str(value))
            return text

        system = _apply(self.system) if self.system is not None else None
        user = _apply(self.user)
        leftover = set(_PLACEHOLDER_RE.findall(user))
        if system:
            leftover |= set(_PLACEHOLDER_RE.findall(system))
        leftover &= self.placeholders()
        if leftover:
            raise KeyError(f"prompt {self.name!r} missing values for {sorted(leftover)}")
        return system, user


@lru_cache(maxsize=None)
def load_prompt(name: str) -> PromptTemplate:
    raw = (
        resources.files("noveltyscope")
        .joinpath("prompts")
        .joinpath(f"{name}.txt")
        .read_text(encoding="utf-8")
    )
    system: str | None = None
    if raw.startswith("<<SYSTEM>>\n"):
        body = raw[len("<<SYSTEM>>\n") :]
        system_text, _, user_text = body.partition("\n<<USER>>\n")
        system = system_text.rstrip("\n")
    elif raw.startswith("<<USER>>\n"):
        user_text = raw[len("<<USER>>\n") :]
    else:
        raise ValueError(f"prompt asset {name!r} lacks a <<USER>> block")
    return PromptTemplate(name=name, system=system, user=user_text.rstrip("\n"))
