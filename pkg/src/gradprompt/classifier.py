"""scikit-learn wrapper around prompt-based classification."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import Label
from .exceptions import PlanError
from .llm import DEFAULT_MAX_OUTPUT_TOKENS, ChatClient, ChatRequest
from .parsing import TemplateMode, parse
from .prompts import PromptPlan, build, final_best_plan, validate
from .validation import check_texts


class PromptClassifier(ClassifierMixin, BaseEstimator):
    """Zero-training classifier that asks a chat model through a compiled prompt.

    ``fit`` only validates the plan (labels are accepted for API compatibility
    and ignored). Unparseable answers are predicted as ``fallback``.
    """

    def __init__(self, client: ChatClient | None = None, plan: PromptPlan | None = None,
                 model_id: str = "gpt-3.5-turbo-0301", max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
                 fallback: str = Label.NON_GRAD.value):
        self.client = client
        self.plan = plan
        self.model_id = model_id
        self.max_output_tokens = max_output_tokens
        self.fallback = fallback

    def fit(self, X=None, y=None):
        if self.client is None:
            raise ValueError("PromptClassifier needs a ChatClient")
        plan = self.plan if self.plan is not None else final_best_plan()
        violations = validate(plan)
        if violations:
            raise PlanError(violations)
        self.plan_ = plan
        self.mode_ = TemplateMode.from_plan(plan)
        self.classes_ = np.array([Label.NON_GRAD.value, Label.GRAD.value])
        return self

    def _ask(self, text: str):
        compiled = build(self.plan_, text)
        request = ChatRequest(self.model_id, compiled.messages, 0.0, self.max_output_tokens)
        return parse(self.client.complete(request).text, self.mode_)

    def parse_answers(self, X) -> list:
        check_is_fitted(self, "plan_")
        texts = check_texts(X)
        with ThreadPoolExecutor(max_workers=self.client.max_concurrency) as pool:
            return list(pool.map(self._ask, texts))

    def predict(self, X) -> np.ndarray:
        fallback = Label(self.fallback).value
        return np.array([a.label.value if a.label is not None else fallback for a in self.parse_answers(X)])
