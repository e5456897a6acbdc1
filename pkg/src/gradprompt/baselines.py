"""Non-LLM reference classifiers: keyword rules and tf-idf + linear SVM.

All three estimators follow the scikit-learn API (``fit``/``transform``/
``predict``, ``get_params``) so they drop into pipelines. The linear SVM is
trained with Pegasos (primal stochastic subgradient descent on the
L2-regularised hinge loss).
"""

from __future__ import annotations

import enum
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import JobPosting, Label
from .exceptions import DataError
from .validation import check_labels, check_postings, check_texts, labels_to_sign

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


# --------------------------------------------------------------------------- keywords

class Target(str, enum.Enum):
    TITLE = "TITLE"
    BODY = "BODY"
    EITHER = "EITHER"


@dataclass(frozen=True)
class KeywordRule:
    pattern: str
    target: Target = Target.EITHER
    regex: bool = False

    def __post_init__(self):
        if not self.pattern:
            raise DataError("keyword rule pattern must be non-empty")
        object.__setattr__(self, "target", Target(self.target))
        try:
            self.compiled
        except re.error as exc:
            raise DataError(f"invalid regular expression {self.pattern!r}: {exc}") from exc

    @property
    def compiled(self) -> re.Pattern:
        if self.regex:
            return re.compile(self.pattern, re.IGNORECASE)
        return re.compile(r"(?<!\w)" + re.escape(self.pattern) + r"(?!\w)", re.IGNORECASE)

    def matches(self, posting: JobPosting) -> bool:
        fields = {Target.TITLE: (posting.title,), Target.BODY: (posting.description,),
                  Target.EITHER: (posting.title, posting.description)}[self.target]
        return any(self.compiled.search(f) for f in fields)

    def to_line(self) -> str:
        return f"{'regex' if self.regex else 'literal'}:{self.target.value}:{self.pattern}"


def parse_rules(lines: Iterable[str]) -> list[KeywordRule]:
    """Parse rule-pack lines of the form ``literal:TITLE:Graduate`` or ``regex:BODY:...``.

    Blank lines and ``#`` comments are skipped. All patterns are compiled here,
    so a bad regex fails at load time.
    """
    rules = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(":", 2)
        if len(parts) != 3 or parts[0] not in ("literal", "regex"):
            raise DataError("expected 'literal:TARGET:pattern' or 'regex:TARGET:pattern'", row=lineno)
        kind, target, pattern = parts
        if target.upper() not in Target.__members__:
            raise DataError(f"unknown target {target!r} (TITLE, BODY or EITHER)", row=lineno)
        try:
            rules.append(KeywordRule(pattern, Target(target.upper()), regex=kind == "regex"))
        except DataError as exc:
            raise DataError(str(exc), row=lineno) from None
    return rules


def load_rules(path=None) -> list[KeywordRule]:
    if path is None:
        text = resources.files("gradprompt").joinpath("data/default_rules.txt").read_text(encoding="utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read rule pack {path}: {exc}") from exc
    return parse_rules(text.splitlines())


def keyword_classify(posting: JobPosting, rules: Sequence[KeywordRule]) -> Label:
    if not rules:
        raise ValueError("keyword_classify needs at least one rule")
    return Label.GRAD if any(r.matches(posting) for r in rules) else Label.NON_GRAD


class KeywordClassifier(ClassifierMixin, BaseEstimator):
    """Predict GRAD when any rule matches. ``fit`` only loads and checks the rules."""

    def __init__(self, rules=None):
        self.rules = rules

    def fit(self, X=None, y=None):
        if self.rules is None or isinstance(self.rules, (str, Path)):
            self.rules_ = load_rules(self.rules)
        else:
            self.rules_ = list(self.rules)
        if not self.rules_:
            raise ValueError("KeywordClassifier needs at least one rule")
        self.classes_ = np.array([Label.NON_GRAD.value, Label.GRAD.value])
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "rules_")
        return np.array([keyword_classify(p, self.rules_).value for p in check_postings(X)])


# --------------------------------------------------------------------------- tf-idf

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric runs, dropping single characters."""
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) > 1]


class TfidfVectorizer(TransformerMixin, BaseEstimator):
    """tf-idf with ``idf = ln((1 + N) / (1 + df)) + 1`` and L2-normalised rows.

    Vocabulary terms are those with document frequency >= ``min_df``, indexed
    in sorted order. Unknown terms are ignored; a document with no known term
    becomes an all-zero row.
    """

    def __init__(self, min_df: int = 1):
        self.min_df = min_df

    def fit(self, X, y=None):
        docs = check_texts(X)
        if not docs:
            raise ValueError("cannot fit tf-idf on an empty corpus")
        if self.min_df < 1:
            raise ValueError("min_df must be >= 1")
        df = Counter()
        for doc in docs:
            df.update(set(tokenize(doc)))
        terms = sorted(t for t, c in df.items() if c >= self.min_df)
        self.vocabulary_ = {t: i for i, t in enumerate(terms)}
        self.document_frequency_ = {t: df[t] for t in terms}
        self.n_docs_ = len(docs)
        dfs = np.array([df[t] for t in terms], dtype=float)
        self.idf_ = np.log((1.0 + self.n_docs_) / (1.0 + dfs)) + 1.0
        return self

    def transform(self, X) -> sp.csr_matrix:
        check_is_fitted(self, "vocabulary_")
        docs = check_texts(X)
        indptr, indices, data = [0], [], []
        for doc in docs:
            counts = Counter(t for t in tokenize(doc) if t in self.vocabulary_)
            pairs = sorted((self.vocabulary_[t], c) for t, c in counts.items())
            idx = np.array([i for i, _ in pairs], dtype=np.int64)
            vals = np.array([c for _, c in pairs], dtype=float) * self.idf_[idx]
            norm = np.linalg.norm(vals)
            if norm > 0:
                vals /= norm
            indices.extend(idx.tolist())
            data.extend(vals.tolist())
            indptr.append(len(indices))
        return sp.csr_matrix((data, indices, indptr), shape=(len(docs), len(self.vocabulary_)))

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "vocabulary_")
        return np.array(sorted(self.vocabulary_, key=self.vocabulary_.get), dtype=object)


def fit_tfidf(corpus: Sequence[str], min_df: int = 1) -> TfidfVectorizer:
    return TfidfVectorizer(min_df=min_df).fit(corpus)


def transform(model: TfidfVectorizer, text: str) -> sp.csr_matrix:
    """One document as a 1 x V sparse row (all-zero when every term is unknown)."""
    return model.transform([text])


# --------------------------------------------------------------------------- linear SVM

def _as_csr(X) -> sp.csr_matrix:
    X = sp.csr_matrix(X, dtype=float)
    if not np.all(np.isfinite(X.data)):
        raise ValueError("input contains non-finite values")
    return X


class PegasosSVC(ClassifierMixin, BaseEstimator):
    """Linear SVM trained by Pegasos.

    Minimises ``lam/2 * ||w||^2 + mean(max(0, 1 - y * (w.x + b)))`` with step
    size ``1 / (lam * t)``, one pass over a seeded permutation per epoch. The
    bias is an extra always-one feature and is regularised with the weights.
    With ``project=True`` the iterate is projected onto the ball of radius
    ``1/sqrt(lam)``, which contains the optimum.
    """

    def __init__(self, lam: float = 1e-3, epochs: int = 20, seed: int = 0, project: bool = True):
        self.lam = lam
        self.epochs = epochs
        self.seed = seed
        self.project = project

    def fit(self, X, y):
        if self.lam <= 0 or self.epochs < 1:
            raise ValueError("lam must be > 0 and epochs >= 1")
        X = _as_csr(X)
        labels = check_labels(y, X.shape[0])
        if len(set(labels)) < 2:
            raise ValueError("training data must contain both GRAD and NON_GRAD examples")
        ys = labels_to_sign(labels)
        n, d = X.shape
        rng = np.random.default_rng(self.seed)

        # w = scale * v, so the (1 - eta*lam) shrink is O(1); index d is the bias feature.
        v = np.zeros(d + 1)
        scale, sq_norm = 1.0, 0.0
        radius_sq = 1.0 / self.lam
        t = 0
        history = []
        for _ in range(self.epochs):
            for i in rng.permutation(n):
                t += 1
                eta = 1.0 / (self.lam * t)
                lo, hi = X.indptr[i], X.indptr[i + 1]
                idx = np.append(X.indices[lo:hi], d)
                x = np.append(X.data[lo:hi], 1.0)
                margin = ys[i] * scale * v[idx].dot(x)
                shrink = 1.0 - eta * self.lam
                if shrink <= 0.0:
                    v[:] = 0.0
                    scale, sq_norm = 1.0, 0.0
                else:
                    scale *= shrink
                    sq_norm *= shrink * shrink
                if margin < 1.0:
                    delta = (eta * ys[i] / scale) * x
                    sq_norm += scale * scale * (2.0 * v[idx].dot(delta) + delta.dot(delta))
                    v[idx] += delta
                if self.project and sq_norm > radius_sq:
                    factor = np.sqrt(radius_sq / sq_norm)
                    scale *= factor
                    sq_norm = radius_sq
                if scale < 1e-9:
                    v *= scale
                    scale = 1.0
            w = scale * v
            history.append(self._objective(X, ys, w))
        self.coef_ = w[:d].copy()
        self.intercept_ = float(w[d])
        self.objective_history_ = history
        self.n_features_in_ = d
        self.classes_ = np.array([Label.NON_GRAD.value, Label.GRAD.value])
        return self

    def _objective(self, X, ys, w) -> float:
        margins = ys * (X @ w[:-1] + w[-1])
        return 0.5 * self.lam * float(w.dot(w)) + float(np.maximum(0.0, 1.0 - margins).mean())

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = _as_csr(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return np.asarray(X @ self.coef_ + self.intercept_).ravel()

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0, Label.GRAD.value, Label.NON_GRAD.value)


def train_linear(vectors, truths, lam: float = 1e-3, epochs: int = 20, seed: int = 0) -> PegasosSVC:
    return PegasosSVC(lam=lam, epochs=epochs, seed=seed).fit(vectors, truths)


def score(model: PegasosSVC, vector) -> float:
    """Signed margin ``w.x + b`` of a single vector; higher means more GRAD-like."""
    return float(model.decision_function(sp.csr_matrix(vector).reshape(1, -1))[0])


# --------------------------------------------------------------------------- persistence

def save_model(path, vectorizer: TfidfVectorizer, svc: PegasosSVC) -> None:
    check_is_fitted(vectorizer, "vocabulary_")
    check_is_fitted(svc, "coef_")
    nz = np.flatnonzero(svc.coef_)
    envelope = {
        "format": "gradprompt.tfidf_svm",
        "version": MODEL_FORMAT_VERSION,
        "tfidf": {"min_df": vectorizer.min_df, "n_docs": vectorizer.n_docs_,
                  "vocabulary": vectorizer.vocabulary_, "document_frequency": vectorizer.document_frequency_},
        "linear": {"weights": {str(int(i)): float(svc.coef_[i]) for i in nz}, "bias": svc.intercept_,
                   "config": {"lam": svc.lam, "epochs": svc.epochs, "seed": svc.seed, "project": svc.project}},
    }
    Path(path).write_text(json.dumps(envelope, sort_keys=True), encoding="utf-8")


def load_model(path) -> tuple[TfidfVectorizer, PegasosSVC]:
    try:
        env = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load model {path}: {exc}") from exc
    if env.get("format") != "gradprompt.tfidf_svm" or env.get("version") != MODEL_FORMAT_VERSION:
        raise DataError(f"{path} is not a version-{MODEL_FORMAT_VERSION} tf-idf/SVM model")
    t, lin = env["tfidf"], env["linear"]
    vec = TfidfVectorizer(min_df=t["min_df"])
    vec.vocabulary_ = {k: int(v) for k, v in t["vocabulary"].items()}
    vec.document_frequency_ = {k: int(v) for k, v in t["document_frequency"].items()}
    vec.n_docs_ = int(t["n_docs"])
    terms = sorted(vec.vocabulary_, key=vec.vocabulary_.get)
    dfs = np.array([vec.document_frequency_[k] for k in terms], dtype=float)
    vec.idf_ = np.log((1.0 + vec.n_docs_) / (1.0 + dfs)) + 1.0
    svc = PegasosSVC(**lin["config"])
    svc.coef_ = np.zeros(len(terms))
    for i, w in lin["weights"].items():
        svc.coef_[int(i)] = w
    svc.intercept_ = float(lin["bias"])
    svc.n_features_in_ = len(terms)
    svc.classes_ = np.array([Label.NON_GRAD.value, Label.GRAD.value])
    return vec, svc
