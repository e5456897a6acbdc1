"""Prompt-engineering ablation harness for graduate job classification."""

__version__ = "0.1.0"

from .dataset import JobPosting, Label, compose_input, ingest, stratified_split, summarize  # noqa: E402
from .prompts import ModFlag, PromptPlan, build, final_best_plan  # noqa: E402
from .parsing import TemplateMode, parse  # noqa: E402
from .llm import ChatClient, ChatRequest, MockBackend, RemoteBackend, ReplayBackend, ResponseCache  # noqa: E402
from .baselines import KeywordClassifier, PegasosSVC, TfidfVectorizer  # noqa: E402
from .classifier import PromptClassifier  # noqa: E402
from .runner import greedy_ablate, render_report, run_experiment  # noqa: E402

__all__ = [
    "ChatClient", "ChatRequest", "JobPosting", "KeywordClassifier", "Label", "MockBackend", "ModFlag",
    "PegasosSVC", "PromptClassifier", "PromptPlan", "RemoteBackend", "ReplayBackend", "ResponseCache",
    "TemplateMode", "TfidfVectorizer", "build", "compose_input", "final_best_plan", "greedy_ablate",
    "ingest", "parse", "render_report", "run_experiment", "stratified_split", "summarize",
]
