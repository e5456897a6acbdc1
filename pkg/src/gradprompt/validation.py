"""Input validation helpers shared by the estimators."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .dataset import JobPosting, Label, compose_input


def check_texts(X) -> list[str]:
    """Coerce ``X`` (strings or JobPostings, any 1-d iterable) to a list of str."""
    if isinstance(X, (str, bytes)):
        raise ValueError("expected a collection of documents, got a single string")
    if isinstance(X, np.ndarray) and X.ndim != 1:
        raise ValueError(f"expected a 1-d collection of documents, got shape {X.shape}")
    out = []
    for i, x in enumerate(X):
        if isinstance(x, JobPosting):
            out.append(compose_input(x))
        elif isinstance(x, str):
            out.append(x)
        else:
            raise TypeError(f"document {i} has type {type(x).__name__}; expected str or JobPosting")
    return out


def check_postings(X) -> list[JobPosting]:
    """Coerce ``X`` to postings; bare strings are split into title (first line) and body."""
    out = []
    for i, x in enumerate(X):
        if isinstance(x, JobPosting):
            out.append(x)
        elif isinstance(x, str):
            title, _, body = x.partition("\n")
            out.append(JobPosting(id=str(i), title=title, description=body))
        else:
            raise TypeError(f"document {i} has type {type(x).__name__}; expected str or JobPosting")
    return out


def to_label(value) -> Label:
    if isinstance(value, Label):
        return value
    if isinstance(value, str):
        return Label(value)
    if isinstance(value, (bool, np.bool_)):
        return Label.GRAD if value else Label.NON_GRAD
    if isinstance(value, (int, np.integer, float, np.floating)):
        if value in (1, 1.0):
            return Label.GRAD
        if value in (0, -1):
            return Label.NON_GRAD
    raise ValueError(f"cannot interpret {value!r} as a GRAD/NON_GRAD label")


def check_labels(y: Iterable, n: int | None = None) -> list[Label]:
    labels = [to_label(v) for v in y]
    if Label.UNLABELED in labels:
        raise ValueError("training labels must be GRAD or NON_GRAD")
    if n is not None and len(labels) != n:
        raise ValueError(f"got {len(labels)} labels for {n} samples")
    return labels


def labels_to_sign(labels: Iterable[Label]) -> np.ndarray:
    """GRAD -> +1, NON_GRAD -> -1."""
    return np.array([1.0 if lab is Label.GRAD else -1.0 for lab in labels])
