"""Experiment execution, the greedy keep-or-discard ablation and report rendering."""

from __future__ import annotations

import csv
import io
import json
import logging
import threading
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .dataset import JobPosting, Label, compose_input, fingerprint
from .exceptions import DataError, PlanError, RunAborted
from .llm import DEFAULT_MAX_OUTPUT_TOKENS, ChatClient, ChatRequest, cache_key
from .metrics import ConfusionCounts, Scores, point_precision_at_recall, scores
from .parsing import ParsedAnswer, Rule, TemplateMode, parse, stickiness_rate
from .prompts import LadderStep, PromptPack, PromptPlan, build, default_plan, validate

log = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-3.5-turbo-0301"


@dataclass(frozen=True)
class ExampleRecord:
    posting_id: str
    plan_id: str
    request_hash: str
    raw_output: str
    parsed: ParsedAnswer
    truth: Label
    predicted: Label
    parse_failed: bool

    @property
    def correct(self) -> bool:
        return self.predicted is self.truth

    def to_dict(self) -> dict:
        return {
            "posting_id": self.posting_id,
            "plan_id": self.plan_id,
            "request_hash": self.request_hash,
            "raw_output": self.raw_output,
            "parsed_label": self.parsed.label.value if self.parsed.label else None,
            "sticky": self.parsed.sticky,
            "matched_rule": self.parsed.matched_rule.value,
            "truth": self.truth.value,
            "predicted": self.predicted.value,
            "parse_failed": self.parse_failed,
            "correct": self.correct,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExampleRecord":
        parsed = ParsedAnswer(Label(d["parsed_label"]) if d["parsed_label"] else None, d["sticky"],
                              Rule(d["matched_rule"]), d["raw_output"])
        return cls(d["posting_id"], d["plan_id"], d["request_hash"], d["raw_output"], parsed,
                   Label(d["truth"]), Label(d["predicted"]), d["parse_failed"])


def make_record(posting: JobPosting, plan: PromptPlan, request_hash: str, output: str,
                mode: TemplateMode, fallback: Label = Label.NON_GRAD) -> ExampleRecord:
    """Parse ``output``; unparseable answers get ``fallback`` and are flagged."""
    parsed = parse(output, mode)
    failed = parsed.label is None
    return ExampleRecord(posting.id, plan.plan_id, request_hash, output, parsed, posting.label,
                         fallback if failed else parsed.label, failed)


class ResultStore:
    """Append-only JSONL records, one file per (plan id, dataset fingerprint)."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self._lock = threading.Lock()

    def path(self, plan_id: str, dataset_fp: str) -> Path:
        return self.directory / f"{plan_id}__{dataset_fp}.jsonl"

    def load(self, plan_id: str, dataset_fp: str) -> dict[tuple[str, str], ExampleRecord]:
        path = self.path(plan_id, dataset_fp)
        records = {}
        if not path.exists():
            return records
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                try:
                    rec = ExampleRecord.from_dict(json.loads(line))
                except (ValueError, KeyError):
                    # a torn final line from an interrupted write
                    log.warning("skipping unreadable record in %s", path)
                    continue
                records[rec.posting_id, rec.request_hash] = rec
        return records

    def append(self, dataset_fp: str, record: ExampleRecord) -> None:
        path = self.path(record.plan_id, dataset_fp)
        line = json.dumps(record.to_dict(), sort_keys=True, ensure_ascii=False) + "\n"
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()


@dataclass
class ExperimentResult:
    plan: PromptPlan
    records: list[ExampleRecord]
    counts: ConfusionCounts
    scores: Scores
    stickiness: float
    dispatched: int = 0

    @property
    def parse_failures(self) -> int:
        return sum(r.parse_failed for r in self.records)


def aggregate(plan: PromptPlan, records: Sequence[ExampleRecord], dispatched: int = 0) -> ExperimentResult:
    records = sorted(records, key=lambda r: r.posting_id)
    counts = ConfusionCounts.from_labels([r.predicted for r in records], [r.truth for r in records])
    return ExperimentResult(plan, records, counts, scores(counts),
                            stickiness_rate(r.parsed for r in records), dispatched)


def run_experiment(plan: PromptPlan, dataset: Sequence[JobPosting], client: ChatClient, *,
                   model_id: str = DEFAULT_MODEL, store: ResultStore | None = None,
                   pack: PromptPack | None = None, max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
                   fallback: Label = Label.NON_GRAD) -> ExperimentResult:
    """Evaluate one plan over a labeled dataset.

    Examples whose request hash is already in ``store`` are reused rather than
    dispatched. If the backend fails, the records finished so far stay in the
    store and :class:`RunAborted` is raised.
    """
    violations = validate(plan)
    if violations:
        raise PlanError(violations)
    if not dataset:
        raise DataError("cannot run an experiment on an empty dataset")
    if any(p.label is Label.UNLABELED for p in dataset):
        raise DataError("run_experiment needs a fully labeled dataset")
    mode = TemplateMode.from_plan(plan)
    fp = fingerprint(dataset)
    done = store.load(plan.plan_id, fp) if store is not None else {}

    todo = []
    records: dict[str, ExampleRecord] = {}
    for posting in dataset:
        compiled = build(plan, compose_input(posting), pack, posting_id=posting.id)
        request = ChatRequest(model_id, compiled.messages, 0.0, max_output_tokens)
        key = cache_key(request)
        if (posting.id, key) in done:
            records[posting.id] = done[posting.id, key]
        else:
            todo.append((posting, request, key))

    def work(posting, request, key):
        response = client.complete(request)
        record = make_record(posting, plan, key, response.text, mode, fallback)
        if store is not None:
            store.append(fp, record)
        return record

    if todo:
        with ThreadPoolExecutor(max_workers=client.max_concurrency) as pool:
            futures = [pool.submit(work, *item) for item in todo]
            wait(futures, return_when=FIRST_EXCEPTION)
            failed = next((f for f in futures if f.done() and f.exception() is not None), None)
            if failed is not None:
                for f in futures:
                    f.cancel()
                wait(futures)
                ok = sum(1 for f in futures if not f.cancelled() and f.exception() is None)
                raise RunAborted(len(records) + ok, len(dataset), failed.exception())
            for f in futures:
                rec = f.result()
                records[rec.posting_id] = rec
    return aggregate(plan, list(records.values()), dispatched=len(todo))


@dataclass(frozen=True)
class PointSummary:
    p_at_95: float
    p_at_85: float
    recall: float
    precision: float

    def line(self) -> str:
        return (f"P@95%R {self.p_at_95:.1f} | P@85%R {self.p_at_85:.1f} "
                f"(precision {self.precision:.1f}, recall {self.recall:.1f})")


def evaluate_point(records: Sequence[ExampleRecord]) -> PointSummary:
    """Single-operating-point P@95%R and P@85%R (0 when recall misses the floor)."""
    if not records:
        raise ValueError("evaluate_point needs at least one record")
    c = ConfusionCounts.from_labels([r.predicted for r in records], [r.truth for r in records])
    s = scores(c)
    return PointSummary(point_precision_at_recall(c, 95), point_precision_at_recall(c, 85), s.recall, s.precision)


# --------------------------------------------------------------------------- greedy ablation

@dataclass
class StepResult:
    step: str
    label: str
    flags: list[str]
    precision: float
    recall: float
    f1: float
    stickiness: float
    kept: bool = False
    degenerate: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class AblationReport:
    steps: list[StepResult]
    final_plan: PromptPlan
    dataset_fingerprint: str
    backend: dict
    model_id: str = DEFAULT_MODEL
    skipped: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"steps": [s.to_dict() for s in self.steps], "final_plan": self.final_plan.to_dict(),
                "dataset_fingerprint": self.dataset_fingerprint, "backend": self.backend,
                "model_id": self.model_id, "skipped": self.skipped}

    @classmethod
    def from_dict(cls, d: dict) -> "AblationReport":
        return cls([StepResult(**s) for s in d["steps"]], PromptPlan.from_dict(d["final_plan"]),
                   d["dataset_fingerprint"], d["backend"], d.get("model_id", DEFAULT_MODEL), d.get("skipped", []))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "AblationReport":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise DataError(f"cannot load ablation report {path}: {exc}") from exc


def greedy_ablate(ladder: Sequence[LadderStep], dataset: Sequence[JobPosting], client: ChatClient, *,
                  base_plan: PromptPlan | None = None, **run_kwargs) -> AblationReport:
    """Walk the ladder, keeping a step's best candidate only if it beats the incumbent F1.

    Candidates are compared by F1 in full precision; ties go to the earlier
    candidate, and a step whose best candidate merely ties the incumbent is
    discarded. Candidates that are invalid on top of the kept stack (e.g.
    MOCK after SYSINST won) are skipped and listed in ``report.skipped``.
    """
    if not ladder:
        raise ValueError("ladder must contain at least one step")
    incumbent = base_plan if base_plan is not None else default_plan()
    incumbent_f1: float | None = None
    steps: list[StepResult] = []
    skipped: list[str] = []
    for step in ladder:
        evaluated = []
        for plan in step.plans(incumbent):
            if validate(plan):
                skipped.append(f"{step.name}: {plan.label} ({'; '.join(validate(plan))})")
                continue
            result = run_experiment(plan, dataset, client, **run_kwargs)
            row = StepResult(step.name, plan.label, [f.value for f in plan.ordered_flags],
                             result.scores.precision, result.scores.recall, result.scores.f1,
                             result.stickiness, degenerate=sorted(result.scores.degenerate))
            steps.append(row)
            evaluated.append((plan, row))
        if not evaluated:
            continue
        best_plan, best_row = max(evaluated, key=lambda pr: pr[1].f1)
        if incumbent_f1 is None or best_row.f1 > incumbent_f1:
            best_row.kept = True
            incumbent, incumbent_f1 = best_plan, best_row.f1
        log.info("step %s: best %s F1 %.2f -> %s", step.name, best_row.label, best_row.f1,
                 "kept" if best_row.kept else "discarded")
    backend = client.backend.describe()
    model_id = run_kwargs.get("model_id", DEFAULT_MODEL)
    return AblationReport(steps, incumbent, fingerprint(dataset), backend, model_id, skipped)


# --------------------------------------------------------------------------- rendering

DEGENERATE_MARK = "†"


def _pct(value: float, name: str, row: StepResult) -> str:
    text = f"{value:.1f}"
    return text + DEGENERATE_MARK if name in row.degenerate else text


def render_report(report: AblationReport, format: str = "markdown") -> str:
    """Render the ablation table; discarded rows are italicised in Markdown."""
    fmt = format.lower()
    if fmt in ("md", "markdown"):
        return _render_markdown(report)
    if fmt == "csv":
        return _render_csv(report)
    raise ValueError(f"unknown report format {format!r}")


def _render_markdown(report: AblationReport) -> str:
    lines = [
        f"Model: {report.model_id}  ",
        f"Dataset: {report.dataset_fingerprint}  ",
        f"Backend: {report.backend.get('kind', 'unknown')}",
        "",
        "| Modification | Precision | Recall | F1 | Template Stickiness | Kept |",
        "|:--|--:|--:|--:|--:|:-:|",
    ]
    any_degenerate = False
    for row in report.steps:
        label = row.label if row.kept else f"*{row.label}*"
        any_degenerate |= bool(row.degenerate)
        lines.append(f"| {label} | {_pct(row.precision, 'precision', row)} | {_pct(row.recall, 'recall', row)} "
                     f"| {_pct(row.f1, 'f1', row)} | {row.stickiness:.0f}% | {'yes' if row.kept else 'no'} |")
    lines += ["", f"Final plan: {report.final_plan.label}", "", "Rows in italics were discarded."]
    if any_degenerate:
        lines.append(f"{DEGENERATE_MARK} undefined (zero denominator), reported as 0.")
    return "\n".join(lines) + "\n"


CSV_FIELDS = ("step", "modification", "flags", "precision", "recall", "f1", "stickiness", "kept", "degenerate")


def _render_csv(report: AblationReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for row in report.steps:
        writer.writerow([row.step, row.label, "+".join(row.flags), f"{row.precision:.1f}", f"{row.recall:.1f}",
                         f"{row.f1:.1f}", f"{row.stickiness:.0f}", int(row.kept), "+".join(row.degenerate)])
    return buf.getvalue()


def write_manifest(path, *, plans: Sequence[PromptPlan], dataset: Sequence[JobPosting], backend: dict,
                   model_id: str, extra: dict | None = None) -> None:
    manifest = {
        "harness_version": __version__,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "model_id": model_id,
        "dataset_fingerprint": fingerprint(dataset),
        "dataset_size": len(dataset),
        "backend": backend,
        "plans": [{"plan_id": p.plan_id, "label": p.label, **p.to_dict()} for p in plans],
        **(extra or {}),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")

