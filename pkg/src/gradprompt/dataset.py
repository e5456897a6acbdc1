"""Job posting ingestion, corpus statistics and stratified splitting."""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import DataError


class Label(str, enum.Enum):
    GRAD = "GRAD"
    NON_GRAD = "NON_GRAD"
    UNLABELED = "UNLABELED"


@dataclass(frozen=True)
class JobPosting:
    id: str
    title: str
    description: str
    label: Label = Label.UNLABELED

    def to_dict(self) -> dict:
        d = {"id": self.id, "title": self.title, "description": self.description}
        if self.label is not Label.UNLABELED:
            d["label"] = self.label.value
        return d


REQUIRED_FIELDS = ("id", "title", "description")
CSV_COLUMNS = ("id", "title", "description", "label")


def _parse_label(raw, row: int) -> Label:
    if raw is None or raw == "":
        return Label.UNLABELED
    if raw in ("GRAD", "NON_GRAD"):
        return Label(raw)
    raise DataError(f"unknown label {raw!r} (expected GRAD or NON_GRAD)", row=row, field="label")


def _make_posting(obj: dict, row: int) -> JobPosting:
    for name in REQUIRED_FIELDS:
        value = obj.get(name)
        if value is None:
            raise DataError(f"missing required field {name!r}", row=row, field=name)
        if not isinstance(value, str) or (name != "id" and not value.strip()) or value == "":
            raise DataError(f"field {name!r} must be a non-empty string", row=row, field=name)
    return JobPosting(
        id=obj["id"],
        title=obj["title"],
        description=obj["description"],
        label=_parse_label(obj.get("label"), row),
    )


def _rows_jsonl(path: Path):
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON: {exc.msg}", row=lineno) from None
            if not isinstance(obj, dict):
                raise DataError("expected a JSON object", row=lineno)
            yield lineno, obj


def _rows_csv(path: Path):
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise DataError(f"CSV header lacks column(s) {', '.join(missing)}", row=1)
        # row 1 is the header
        for rowno, obj in enumerate(reader, start=2):
            yield rowno, obj


def ingest(path, format: str | None = None) -> list[JobPosting]:
    """Read postings from a JSONL or CSV file, preserving file order.

    ``format`` is ``"jsonl"`` or ``"csv"``; when omitted it is taken from the
    file suffix. Rows are numbered from 1 (for CSV the header is row 1).
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in ("jsonl", "csv"):
        raise DataError(f"unsupported format {fmt!r}; use jsonl or csv")
    if not path.is_file():
        raise DataError(f"cannot read {path}")
    rows = _rows_jsonl(path) if fmt == "jsonl" else _rows_csv(path)
    postings: list[JobPosting] = []
    seen: dict[str, int] = {}
    try:
        for rowno, obj in rows:
            posting = _make_posting(obj, rowno)
            if posting.id in seen:
                raise DataError(f"duplicate id {posting.id!r} (first seen at row {seen[posting.id]})",
                                row=rowno, field="id")
            seen[posting.id] = rowno
            postings.append(posting)
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return postings


def write_jsonl(postings: Iterable[JobPosting], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in postings:
            fh.write(json.dumps(p.to_dict(), ensure_ascii=False) + "\n")


def compose_input(posting: JobPosting) -> str:
    """Model input text: the title, a newline, then the description."""
    return f"{posting.title}\n{posting.description}"


def whitespace_tokenize(text: str) -> list[str]:
    return text.split()


def token_count(text: str, tokenizer: Callable[[str], Sequence[str]] = whitespace_tokenize) -> int:
    return len(tokenizer(text))


@dataclass(frozen=True)
class TokenStats:
    count: int
    median: int
    std: float


@dataclass(frozen=True)
class DatasetSummary:
    counts: dict[Label, int]
    proportions: dict[Label, float]
    median_tokens: int
    token_std: float
    per_label: dict[Label, TokenStats] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return sum(self.counts.values())

    def format_table(self) -> str:
        lines = [f"{'':<13}{'Example #':>10}{'Proportion':>12}{'Median Token #':>16}{'Token # std':>13}"]
        for label, stats in self.per_label.items():
            lines.append(f"{label.value:<13}{stats.count:>10}{self.proportions[label]:>11.1%}"
                         f"{stats.median:>16}{stats.std:>13.1f}")
        lines.append(f"{'Full Dataset':<13}{self.size:>10}{1:>11.0%}{self.median_tokens:>16}{self.token_std:>13.1f}")
        return "\n".join(lines)


def _token_stats(counts: Sequence[int]) -> TokenStats:
    return TokenStats(count=len(counts), median=statistics.median_low(counts),
                      std=statistics.pstdev(counts) if len(counts) > 1 else 0.0)


def summarize(dataset: Sequence[JobPosting],
              tokenizer: Callable[[str], Sequence[str]] = whitespace_tokenize) -> DatasetSummary:
    """Per-label counts and shares plus token-length statistics.

    Medians use the lower-median convention and the standard deviation is the
    population form.
    """
    if not dataset:
        raise DataError("cannot summarize an empty dataset")
    lengths = [token_count(compose_input(p), tokenizer) for p in dataset]
    counts = Counter(p.label for p in dataset)
    order = [lab for lab in Label if counts[lab]]
    n = len(dataset)
    per_label = {
        lab: _token_stats([t for t, p in zip(lengths, dataset) if p.label is lab]) for lab in order
    }
    overall = _token_stats(lengths)
    return DatasetSummary(
        counts={lab: counts[lab] for lab in order},
        proportions={lab: counts[lab] / n for lab in order},
        median_tokens=overall.median,
        token_std=overall.std,
        per_label=per_label,
    )


def _allocate_train(n_grad: int, n_non: int, train_fraction: float) -> tuple[int, int]:
    n = n_grad + n_non
    total = round(n * train_fraction)
    grad = min(max(round(n_grad * total / n), 1), n_grad - 1)
    non = min(max(total - grad, 1), n_non - 1)
    return grad, non


def stratified_split(dataset: Sequence[JobPosting], train_fraction: float = 0.7,
                     seed: int = 0) -> tuple[list[JobPosting], list[JobPosting]]:
    """Split into train/test preserving the GRAD share, deterministically for a seed.

    The train size is ``round(len(dataset) * train_fraction)`` and each label's
    allotment is its proportional quota rounded to the nearest integer, keeping
    at least one example of each label on both sides. Both halves keep the
    input order of the dataset.
    """
    if not 0 < train_fraction < 1:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    grad_idx = [i for i, p in enumerate(dataset) if p.label is Label.GRAD]
    non_idx = [i for i, p in enumerate(dataset) if p.label is Label.NON_GRAD]
    if len(grad_idx) + len(non_idx) != len(dataset):
        raise DataError("stratified_split requires every posting to be labeled")
    if len(grad_idx) < 2 or len(non_idx) < 2:
        raise DataError("dataset too small to stratify: each label needs at least 2 examples")
    n_grad, n_non = _allocate_train(len(grad_idx), len(non_idx), train_fraction)
    rng = np.random.default_rng(seed)
    train_idx = set(rng.permutation(grad_idx)[:n_grad].tolist())
    train_idx.update(rng.permutation(non_idx)[:n_non].tolist())
    train = [p for i, p in enumerate(dataset) if i in train_idx]
    test = [p for i, p in enumerate(dataset) if i not in train_idx]
    return train, test


def fingerprint(dataset: Iterable[JobPosting]) -> str:
    """Digest over the ordered (id, label) pairs."""
    h = hashlib.sha256()
    for p in dataset:
        h.update(json.dumps([p.id, p.label.value]).encode())
        h.update(b"\n")
    return h.hexdigest()[:16]


def grad_share(postings: Sequence[JobPosting]) -> float:
    if not postings:
        return math.nan
    return sum(p.label is Label.GRAD for p in postings) / len(postings)
