"""Prompt modifications, plan validation and chat message compilation.

A :class:`PromptPlan` is a set of :class:`ModFlag` modifications. :func:`build`
turns a plan plus a job posting into the exact chat message sequence sent to
the model, using the fragment texts of a :class:`PromptPack`.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .exceptions import DataError, PlanError


class Role(str, enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class Message:
    role: Role
    content: str

    def __post_init__(self):
        if not self.content:
            raise ValueError("message content must be non-empty")

    def to_dict(self) -> dict:
        return {"role": self.role.value, "content": self.content}


class ModFlag(str, enum.Enum):
    FEWSHOT_COT = "cot"
    ZERO_COT = "zero-cot"
    RAWINST = "rawinst"
    SYSINST = "sysinst"
    BOTHINST = "bothinst"
    MOCK = "mock"
    REIT = "reit"
    STRICT = "strict"
    LOOSE = "loose"
    RIGHT = "right"
    INFO = "info"
    NAME = "name"
    POS = "pos"

    @classmethod
    def parse(cls, text: str) -> "ModFlag":
        key = text.strip()
        for flag in cls:
            if key.lower() in (flag.value, flag.name.lower()):
                return flag
        raise ValueError(f"unknown modification {text!r}")


# Display and ladder order.
FLAG_ORDER = list(ModFlag)
INSTRUCTION_FLAGS = frozenset({ModFlag.RAWINST, ModFlag.SYSINST, ModFlag.BOTHINST})
TEMPLATE_FLAGS = frozenset({ModFlag.STRICT, ModFlag.LOOSE})
COT_FLAGS = frozenset({ModFlag.FEWSHOT_COT, ModFlag.ZERO_COT})


def parse_flags(spec: str | Iterable[str]) -> frozenset[ModFlag]:
    if isinstance(spec, str):
        spec = [s for s in spec.split(",") if s.strip()]
    return frozenset(ModFlag.parse(s) for s in spec)


@dataclass(frozen=True)
class PromptPlan:
    flags: frozenset[ModFlag] = frozenset()
    assistant_name: str = "Frederick"
    exemplars: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "flags", frozenset(self.flags))
        object.__setattr__(self, "exemplars", tuple(tuple(e) for e in self.exemplars))

    def with_flags(self, *flags: ModFlag) -> "PromptPlan":
        return replace(self, flags=self.flags | set(flags))

    def without_flags(self, *flags: ModFlag) -> "PromptPlan":
        return replace(self, flags=self.flags - set(flags))

    @property
    def ordered_flags(self) -> list[ModFlag]:
        return [f for f in FLAG_ORDER if f in self.flags]

    @property
    def label(self) -> str:
        """Row label in the style of the ablation table, e.g. ``+bothinst+mock``."""
        rest = [f.value for f in self.ordered_flags if f not in COT_FLAGS]
        if rest:
            return "+" + "+".join(rest)
        if ModFlag.FEWSHOT_COT in self.flags:
            return "CoT"
        if ModFlag.ZERO_COT in self.flags:
            return "Zero-CoT"
        return "Baseline"

    @property
    def plan_id(self) -> str:
        payload = {
            "flags": [f.value for f in self.ordered_flags],
            "name": self.assistant_name,
            "exemplars": [list(e) for e in self.exemplars] if ModFlag.FEWSHOT_COT in self.flags else [],
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]

    def to_dict(self) -> dict:
        return {"flags": [f.value for f in self.ordered_flags], "assistant_name": self.assistant_name,
                "exemplars": [list(e) for e in self.exemplars]}

    @classmethod
    def from_dict(cls, d: dict) -> "PromptPlan":
        return cls(flags=parse_flags(d.get("flags", [])), assistant_name=d.get("assistant_name", "Frederick"),
                   exemplars=tuple(tuple(e) for e in d.get("exemplars", [])))


def validate(plan: PromptPlan) -> list[str]:
    """Return every rule the plan violates; an empty list means the plan is valid."""
    flags = plan.flags
    violations = []
    for group, name in ((INSTRUCTION_FLAGS, "RAWINST, SYSINST, BOTHINST"),
                        (TEMPLATE_FLAGS, "STRICT, LOOSE"),
                        (COT_FLAGS, "FEWSHOT_COT, ZERO_COT")):
        if len(flags & group) > 1:
            violations.append(f"at most one of {name} may be set")
    if ModFlag.MOCK in flags and ModFlag.BOTHINST not in flags:
        violations.append("MOCK requires BOTHINST")
    if ModFlag.POS in flags and ModFlag.MOCK not in flags:
        violations.append("POS requires MOCK")
    for flag in (ModFlag.REIT, ModFlag.INFO, ModFlag.NAME):
        if flag in flags and not flags & INSTRUCTION_FLAGS:
            violations.append(f"{flag.name} requires one of RAWINST, SYSINST, BOTHINST")
    if ModFlag.RIGHT in flags and ModFlag.ZERO_COT not in flags:
        violations.append("RIGHT requires ZERO_COT")
    if ModFlag.RIGHT in flags and ModFlag.STRICT in flags:
        violations.append("RIGHT cannot be combined with STRICT (STRICT replaces the step-by-step cue)")
    if ModFlag.FEWSHOT_COT in flags and not plan.exemplars:
        violations.append("FEWSHOT_COT requires at least one exemplar")
    if ModFlag.NAME in flags and not plan.assistant_name.strip():
        violations.append("NAME requires a non-empty assistant_name")
    return violations


@dataclass(frozen=True)
class PromptPack:
    version: str
    fragments: dict[str, str]
    exemplars: tuple[tuple[str, str], ...] = ()
    settings: dict = field(default_factory=dict)

    REQUIRED = (
        "query_intro", "query_separator", "query_question", "answer_prefix", "zero_cot", "right",
        "role", "role_named", "reit_reminder", "task_definition", "info", "task_instruction",
        "task_instruction_reit", "mock_question", "mock_ack", "mock_ack_named", "pos", "loose",
        "strict", "strict_answer",
    )

    def __getitem__(self, key: str) -> str:
        return self.fragments[key]

    @classmethod
    def from_dict(cls, d: dict) -> "PromptPack":
        fragments = d.get("fragments", {})
        missing = [k for k in cls.REQUIRED if not fragments.get(k)]
        if missing:
            raise DataError(f"prompt pack lacks fragment(s): {', '.join(missing)}")
        return cls(version=str(d.get("version", "unversioned")), fragments=dict(fragments),
                   exemplars=tuple(tuple(e) for e in d.get("exemplars", [])),
                   settings=dict(d.get("settings", {})))


@lru_cache(maxsize=None)
def _builtin_pack() -> PromptPack:
    text = resources.files("gradprompt").joinpath("data/builtin_pack.json").read_text(encoding="utf-8")
    return PromptPack.from_dict(json.loads(text))


def load_pack(path=None) -> PromptPack:
    """Load a prompt pack from JSON, or the built-in pack when ``path`` is None.

    Custom packs may omit fragments; missing ones are filled from the built-in pack.
    """
    if path is None:
        return _builtin_pack()
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load prompt pack {path}: {exc}") from exc
    base = _builtin_pack()
    d["fragments"] = {**base.fragments, **d.get("fragments", {})}
    d.setdefault("exemplars", [list(e) for e in base.exemplars])
    d["settings"] = {**base.settings, **d.get("settings", {})}
    return PromptPack.from_dict(d)


@dataclass(frozen=True)
class CompiledPrompt:
    messages: tuple[Message, ...]
    plan: PromptPlan
    posting_id: str = ""

    def to_dicts(self) -> list[dict]:
        return [m.to_dict() for m in self.messages]


def _query(pack: PromptPack, posting: str, answer: str | None) -> list[str]:
    lines = [pack["query_intro"], posting, pack["query_separator"], pack["query_question"]]
    if answer is not None:
        lines.append(answer)
    return lines


def _answer_line(plan: PromptPlan, pack: PromptPack) -> str:
    flags = plan.flags
    if ModFlag.STRICT in flags:
        return f"{pack['answer_prefix']} {pack['strict_answer']}"
    if ModFlag.ZERO_COT in flags:
        cue = pack["right"] if ModFlag.RIGHT in flags else pack["zero_cot"]
        return f"{pack['answer_prefix']} {cue}"
    return pack["answer_prefix"]


def build(plan: PromptPlan, posting_text: str, pack: PromptPack | None = None,
          posting_id: str = "") -> CompiledPrompt:
    """Compile ``plan`` and a posting into the chat message sequence.

    Inside a message, fragments are joined with single newlines. Instructions
    not sent as their own message are prepended to the first user message.
    """
    violations = validate(plan)
    if violations:
        raise PlanError(violations)
    if not posting_text:
        raise DataError("posting text must be non-empty")
    pack = pack or load_pack()
    flags = plan.flags
    named = ModFlag.NAME in flags

    role = pack["role_named"].format(name=plan.assistant_name) if named else pack["role"]
    if ModFlag.REIT in flags and pack.settings.get("reit_system_reminder"):
        role = f"{role} {pack['reit_reminder']}"
    task_tail = [pack["info"]] if ModFlag.INFO in flags else []
    task_tail.append(pack["task_instruction_reit"] if ModFlag.REIT in flags else pack["task_instruction"])
    if ModFlag.MOCK in flags:
        task_tail.append(pack["mock_question"])
    task = pack["task_definition"] + "\n" + " ".join(task_tail)

    messages: list[Message] = []
    prefix: str | None = None
    if ModFlag.RAWINST in flags:
        prefix = role + "\n" + task
    elif ModFlag.SYSINST in flags:
        messages.append(Message(Role.SYSTEM, role + "\n" + task))
    elif ModFlag.BOTHINST in flags:
        messages.append(Message(Role.SYSTEM, role))
        if ModFlag.MOCK in flags:
            ack = pack["mock_ack_named"].format(name=plan.assistant_name) if named else pack["mock_ack"]
            messages += [Message(Role.USER, task), Message(Role.ASSISTANT, ack)]
        else:
            prefix = task

    turns: list[tuple[Role, list[str]]] = []
    if ModFlag.FEWSHOT_COT in flags:
        for user_text, assistant_text in plan.exemplars:
            turns.append((Role.USER, _query(pack, user_text, None)))
            turns.append((Role.ASSISTANT, [assistant_text]))
    query = _query(pack, posting_text, None)
    if ModFlag.LOOSE in flags:
        query.append(pack["loose"])
    elif ModFlag.STRICT in flags:
        query.append(pack["strict"])
    query.append(_answer_line(plan, pack))
    if ModFlag.POS in flags:
        query.insert(0, pack["pos"])
    turns.append((Role.USER, query))

    if prefix is not None:
        turns[0][1].insert(0, prefix)
    messages += [Message(r, "\n".join(lines)) for r, lines in turns]
    return CompiledPrompt(messages=tuple(messages), plan=plan, posting_id=posting_id)


def final_best_plan(assistant_name: str = "Frederick") -> PromptPlan:
    """The best-performing stack: zero-shot CoT plus bothinst, mock, reit, right, info, name, pos."""
    return PromptPlan(
        flags=frozenset({ModFlag.ZERO_COT, ModFlag.BOTHINST, ModFlag.MOCK, ModFlag.REIT,
                         ModFlag.RIGHT, ModFlag.INFO, ModFlag.NAME, ModFlag.POS}),
        assistant_name=assistant_name,
    )


def render_flat(compiled: CompiledPrompt) -> str:
    """Message contents joined by blank lines, for completion-style models."""
    return "\n\n".join(m.content for m in compiled.messages)


@dataclass(frozen=True)
class LadderStep:
    """One ablation step: alternative flag deltas applied on top of the kept stack."""

    name: str
    deltas: tuple[frozenset[ModFlag], ...]

    def plans(self, base: PromptPlan) -> list[PromptPlan]:
        return [replace(base, flags=base.flags | delta) for delta in self.deltas]


def ablation_ladder() -> list[LadderStep]:
    def step(name: str, *alternatives: Sequence[ModFlag]) -> LadderStep:
        return LadderStep(name, tuple(frozenset(a) for a in alternatives))

    F = ModFlag
    return [
        step("baseline", ()),
        step("cot", (F.FEWSHOT_COT,), (F.ZERO_COT,)),
        step("instructions", (F.RAWINST,), (F.SYSINST,), (F.BOTHINST,)),
        step("mock", (F.MOCK,)),
        step("reit", (F.REIT,)),
        step("template", (F.STRICT,), (F.LOOSE,)),
        step("right", (F.RIGHT,)),
        step("info", (F.INFO,)),
        step("name", (F.NAME,)),
        step("pos", (F.POS,)),
    ]


def default_plan(flags: Iterable[ModFlag] = (), pack: PromptPack | None = None,
                 assistant_name: str = "Frederick") -> PromptPlan:
    """A plan whose exemplars come from the pack, so FEWSHOT_COT is usable."""
    pack = pack or load_pack()
    return PromptPlan(flags=frozenset(flags), assistant_name=assistant_name, exemplars=pack.exemplars)
