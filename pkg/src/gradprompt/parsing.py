"""Extract the (A)/(B) answer from model output and judge template stickiness."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable

from .dataset import Label
from .prompts import ModFlag, PromptPlan


class TemplateMode(str, enum.Enum):
    FREE = "free"
    LOOSE = "loose"
    STRICT = "strict"

    @classmethod
    def from_plan(cls, plan: PromptPlan) -> "TemplateMode":
        if ModFlag.STRICT in plan.flags:
            return cls.STRICT
        if ModFlag.LOOSE in plan.flags:
            return cls.LOOSE
        return cls.FREE


class Rule(str, enum.Enum):
    TEMPLATE_FINAL = "template_final"
    CHOICE_TOKEN = "choice_token"
    POLARITY_PHRASE = "polarity_phrase"
    NONE = "none"


@dataclass(frozen=True)
class ParsedAnswer:
    label: Label | None
    sticky: bool
    matched_rule: Rule
    raw: str

    def __post_init__(self):
        if (self.label is None) != (self.matched_rule is Rule.NONE):
            raise ValueError("label must be None exactly when no rule matched")
        if self.sticky and self.matched_rule not in (Rule.TEMPLATE_FINAL, Rule.CHOICE_TOKEN):
            raise ValueError("only template or choice-token answers can be sticky")


CHOICES = {"A": Label.GRAD, "B": Label.NON_GRAD}

# the choice letter stays case-sensitive; markdown bold around the label is tolerated
_FINAL_RE = re.compile(r"final answer[\s*]*:[\s*]*this is\s+(?:an?\s+)?\(((?-i:[AB]))\)", re.IGNORECASE)
_CHOICE_RE = re.compile(r"(?<![\w(])\(([AB])\)(?![\w)])")
_REASONING_STEP_RE = re.compile(r"^\W*reasoning step\s*\d+\s*:", re.IGNORECASE | re.MULTILINE)
_PHRASES = {
    "fit for a recent graduate": Label.GRAD,
    "requiring more professional experience": Label.NON_GRAD,
}
_PHRASE_RE = re.compile("|".join(re.escape(p) for p in _PHRASES), re.IGNORECASE)
_NEGATION_RE = re.compile(r"^(?:not|.*n['’]t)\W*$", re.IGNORECASE)
NEGATION_WINDOW = 3


def _template_final(text: str) -> Label | None:
    found = None
    for line in text.splitlines():
        m = _FINAL_RE.search(line)
        if m is None:
            continue
        # Echoed templates list both options; those are not answers.
        choices = {c for c in _CHOICE_RE.findall(line[m.start():])} | {m.group(1)}
        if len(choices) == 1:
            found = CHOICES[m.group(1)]
    return found


def _choice_token(text: str) -> Label | None:
    tokens = _CHOICE_RE.findall(text)
    return CHOICES[tokens[-1]] if tokens else None


def _polarity(text: str) -> Label | None:
    matches = list(_PHRASE_RE.finditer(text))
    if not matches:
        return None
    last = matches[-1]
    label = _PHRASES[last.group(0).lower()]
    preceding = text[:last.start()].split()[-NEGATION_WINDOW:]
    if any(_NEGATION_RE.match(tok) for tok in preceding):
        label = Label.NON_GRAD if label is Label.GRAD else Label.GRAD
    return label


def parse(text: str | bytes, mode: TemplateMode = TemplateMode.FREE) -> ParsedAnswer:
    """Classify a model output; never raises.

    Rules are tried in order and the first hit wins: a ``Final Answer: This is
    a (A)/(B)`` line (STRICT mode also needs ``Reasoning step`` lines), then
    the last standalone ``(A)``/``(B)``, then the polarity phrases with a
    three-token negation window.
    """
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8", errors="replace")
    mode = TemplateMode(mode)

    label = _template_final(text)
    if label is not None and (mode is not TemplateMode.STRICT or _REASONING_STEP_RE.search(text)):
        return ParsedAnswer(label, True, Rule.TEMPLATE_FINAL, text)
    label = _choice_token(text)
    if label is not None:
        return ParsedAnswer(label, mode is TemplateMode.FREE, Rule.CHOICE_TOKEN, text)
    label = _polarity(text)
    if label is not None:
        return ParsedAnswer(label, False, Rule.POLARITY_PHRASE, text)
    return ParsedAnswer(None, False, Rule.NONE, text)


def stickiness_rate(answers: Iterable[ParsedAnswer]) -> float:
    answers = list(answers)
    if not answers:
        raise ValueError("stickiness_rate needs at least one answer")
    return round(100 * sum(a.sticky for a in answers) / len(answers), 1)
