"""Shared test scaffolding: synthetic datasets, scripted outputs and a stub chat server."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from gradprompt.dataset import JobPosting, Label, compose_input
from gradprompt.llm import ChatRequest, cache_key
from gradprompt.parsing import TemplateMode
from gradprompt.prompts import build, default_plan

MODEL = "gpt-3.5-turbo-0301"

# Ablation rows: label, precision, recall, F1, stickiness (percent).
ABLATION_ROWS = [
    ("Baseline", 61.2, 70.6, 65.6, 79),
    ("CoT", 72.6, 85.1, 78.4, 87),
    ("Zero-CoT", 75.5, 88.3, 81.4, 65),
    ("+rawinst", 80.0, 92.4, 85.8, 68),
    ("+sysinst", 77.7, 90.9, 83.8, 69),
    ("+bothinst", 81.9, 93.9, 87.5, 71),
    ("+bothinst+mock", 83.3, 95.1, 88.8, 74),
    ("+bothinst+mock+reit", 83.8, 95.5, 89.3, 75),
    ("+bothinst+mock+reit+strict", 79.9, 93.7, 86.3, 98),
    ("+bothinst+mock+reit+loose", 80.5, 94.8, 87.1, 95),
    ("+bothinst+mock+reit+right", 84.0, 95.9, 89.6, 77),
    ("+bothinst+mock+reit+right+info", 84.9, 96.5, 90.3, 77),
    ("+bothinst+mock+reit+right+info+name", 85.7, 96.8, 90.9, 79),
    ("+bothinst+mock+reit+right+info+name+pos", 86.9, 97.0, 91.7, 81),
]
# the candidate kept at each ladder step in the published ablation (None = step discarded)
PUBLISHED_KEPT = ["Baseline", "Zero-CoT", "+bothinst", "+bothinst+mock", "+bothinst+mock+reit", None,
              "+bothinst+mock+reit+right", "+bothinst+mock+reit+right+info",
              "+bothinst+mock+reit+right+info+name", "+bothinst+mock+reit+right+info+name+pos"]


def synthetic_dataset(n_pos: int, n_neg: int) -> list[JobPosting]:
    grads = [JobPosting(f"g{i:05d}", f"Graduate Analyst {i}", f"Entry role number {i} for new graduates.",
                        Label.GRAD) for i in range(n_pos)]
    nons = [JobPosting(f"n{i:05d}", f"Senior Manager {i}", f"Role number {i} needing ten years of experience.",
                       Label.NON_GRAD) for i in range(n_neg)]
    # interleave so order is not label-sorted
    out = []
    for i in range(max(n_pos, n_neg)):
        if i < n_pos:
            out.append(grads[i])
        if i < n_neg:
            out.append(nons[i])
    return out


def counts_for(precision: float, recall: float, n_pos: int) -> tuple[int, int]:
    """(tp, fp) on ``n_pos`` positives closest to the given percentages."""
    tp = round(recall / 100 * n_pos)
    fp = round(tp * (100 / precision - 1))
    return tp, fp


def answer_text(choice: str, sticky: bool, mode: TemplateMode) -> str:
    """An output that parses to ``choice`` and is sticky or not under ``mode``."""
    phrase = "a job fit for a recent graduate" if choice == "A" else "a job requiring more professional experience"
    if mode is TemplateMode.FREE:
        if sticky:
            return f"The posting was analysed. Therefore, this is ({choice}) {phrase}"
        return f"Looking at the requirements, I would say this is {phrase}."
    if sticky:
        return ("Reasoning step 1: read the posting.\nReasoning step 2: weigh the requirements.\n"
                "Reasoning step 3: conclude.\n"
                f"Final Answer: This is a ({choice}) {phrase.removeprefix('a ')}")
    return f"After thinking it through, ({choice}) {phrase}."


def scripted_outputs(dataset, tp: int, fp: int, sticky: int, mode: TemplateMode) -> dict[str, str]:
    """Per-posting outputs realising exactly the given confusion matrix and sticky count."""
    outputs = {}
    pos_seen = neg_seen = 0
    for idx, p in enumerate(dataset):
        if p.label is Label.GRAD:
            choice = "A" if pos_seen < tp else "B"
            pos_seen += 1
        else:
            choice = "A" if neg_seen < fp else "B"
            neg_seen += 1
        outputs[p.id] = answer_text(choice, idx < sticky, mode)
    return outputs


def table_for(plan, dataset, outputs: dict[str, str], model_id: str = MODEL, pack=None) -> dict[str, str]:
    table = {}
    for p in dataset:
        compiled = build(plan, compose_input(p), pack)
        table[cache_key(ChatRequest(model_id, compiled.messages))] = outputs[p.id]
    return table


def ablation_script(dataset, n_pos: int, pack=None) -> dict[str, str]:
    """Mock table realising every ablation row along the published keep/discard path."""
    from gradprompt.prompts import ablation_ladder

    rows = {r[0]: r for r in ABLATION_ROWS}
    table = {}
    incumbent = default_plan((), pack)
    for step, kept in zip(ablation_ladder(), PUBLISHED_KEPT):
        for plan in step.plans(incumbent):
            _, precision, recall, _, stick = rows[plan.label]
            tp, fp = counts_for(precision, recall, n_pos)
            outs = scripted_outputs(dataset, tp, fp, round(stick / 100 * len(dataset)), TemplateMode.from_plan(plan))
            table.update(table_for(plan, dataset, outs, pack=pack))
            if plan.label == kept:
                incumbent = plan
    return table


class StubChatServer:
    """Local chat-completions endpoint.

    ``statuses`` is consumed one entry per request (an int HTTP status to
    return instead of answering); once empty, requests succeed. While
    ``broken`` is set every request gets HTTP 500.
    """

    def __init__(self, statuses=(), answer=None):
        self.statuses = list(statuses)
        self.answer = answer or (lambda text: "Therefore, this is (A)" if "Graduate" in text else "So (B).")
        self.attempts = 0
        self.successes = 0
        self.broken = False
        self.fail_after: int | None = None
        self.bodies: list[dict] = []
        self.headers: list[dict] = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                with stub._lock:
                    stub.attempts += 1
                    stub.bodies.append(body)
                    stub.headers.append(dict(self.headers))
                    status = stub.statuses.pop(0) if stub.statuses else 200
                    if stub.broken or (stub.fail_after is not None and stub.successes >= stub.fail_after):
                        status = 500
                    if status == 200:
                        stub.successes += 1
                if status != 200:
                    self.send_response(status)
                    self.end_headers()
                    self.wfile.write(b"{}")
                    return
                text = stub.answer(body["messages"][-1]["content"])
                payload = {"choices": [{"message": {"role": "assistant", "content": text},
                                        "finish_reason": "stop"}],
                           "usage": {"prompt_tokens": 10, "completion_tokens": 3}}
                data = json.dumps(payload).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_port}/v1/chat/completions"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def separable_postings(n: int, seed: int = 0) -> list[JobPosting]:
    """Half GRAD, half NON_GRAD; class vocabularies are disjoint, filler words are shared."""
    import random

    rng = random.Random(seed)
    grad_words = ["graduate", "trainee", "junior", "entry", "mentoring", "internship"]
    non_words = ["senior", "director", "principal", "lead", "decade", "seasoned"]
    filler = ["team", "office", "client", "project", "report", "systems", "weekly", "growth", "company"]
    out = []
    for i in range(n):
        grad = i % 2 == 0
        words = rng.sample(grad_words if grad else non_words, 3) + rng.sample(filler, 5)
        rng.shuffle(words)
        out.append(JobPosting(f"s{i:04d}", "Role", " ".join(words), Label.GRAD if grad else Label.NON_GRAD))
    return out
