"""End-to-end acceptance checks, one test per criterion.

Each test carries a ``criterion`` marker; conftest prints a PASS/FAIL line per
criterion in the terminal summary.
"""

import json
import random
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from gradprompt.baselines import KeywordClassifier, PegasosSVC, TfidfVectorizer
from gradprompt.cli import main
from gradprompt.dataset import JobPosting, Label, grad_share, ingest, stratified_split, write_jsonl
from gradprompt.llm import ChatClient, MockBackend
from gradprompt.metrics import (ConfusionCounts, ScoredPrediction, f1_from, point_precision_at_recall,
                                precision_at_recall_from_rates, sweep_precision_at_recall)
from gradprompt.parsing import Rule, TemplateMode, parse
from gradprompt.prompts import ablation_ladder, build, default_plan, final_best_plan
from gradprompt.runner import greedy_ablate, render_report

from helpers import (ABLATION_ROWS, MODEL, PUBLISHED_KEPT, StubChatServer, ablation_script, separable_postings,
                     synthetic_dataset)

FIXTURES = Path(__file__).parent / "fixtures"
G, N = Label.GRAD, Label.NON_GRAD


@pytest.mark.criterion(1, "final prompt matches the golden fixture byte-for-byte (3 postings, < 1 s)")
def test_golden_prompt():
    golden = json.loads((FIXTURES / "final_prompt.json").read_text(encoding="utf-8"))
    postings = ["P", "Graduate Data Analyst\nJoin our graduate scheme in London.", "Café manager – 5 yrs ★"]
    start = time.perf_counter()
    for posting in postings:
        got = build(final_best_plan(), posting).to_dicts()
        expected = [{"role": m["role"], "content": m["content"].replace("{job_posting}", posting)} for m in golden]
        assert json.dumps(got, ensure_ascii=False).encode() == json.dumps(expected, ensure_ascii=False).encode()
    assert time.perf_counter() - start < 1.0


@pytest.mark.criterion(2, "F1 recomputed from every ablation row's precision/recall within 0.06")
@pytest.mark.parametrize("row", ABLATION_ROWS, ids=[r[0] for r in ABLATION_ROWS])
def test_ablation_rows_f1_consistency(row):
    _, p, r, f1, _ = row
    assert abs(f1_from(p, r) - f1) <= 0.06


@pytest.mark.criterion(3, "sweep equals brute-force oracle on 1,000 fuzzed instances (< 10 s)")
def test_sweep_oracle():
    rng = random.Random(20240601)
    start = time.perf_counter()
    for _ in range(1000):
        n = rng.randint(1, 50)
        scores = [rng.choice([rng.randint(-3, 3) / 2, rng.uniform(-2, 2)]) for _ in range(n)]
        truths = [rng.random() < 0.4 for _ in range(n)]
        truths[rng.randrange(n)] = True
        threshold = rng.choice([50, 66.5, 85, 95, 100])
        preds = [ScoredPrediction(s, G if t else N) for s, t in zip(scores, truths)]
        got = sweep_precision_at_recall(preds, threshold)

        # oracle: every distinct cutoff, exact arithmetic, lowest cutoff wins ties
        n_pos = sum(truths)
        best = None
        for cut in sorted(set(scores)):
            tp = sum(s >= cut and t for s, t in zip(scores, truths))
            fp = sum(s >= cut and not t for s, t in zip(scores, truths))
            if Fraction(tp * 100, n_pos) >= Fraction(threshold):
                p = Fraction(tp * 100, tp + fp)
                if best is None or p > best[0]:
                    best = (p, cut)
        assert got.reachable == (best is not None)
        assert got.best_precision == float(best[0])
        assert got.chosen_cutoff == best[1]
    assert time.perf_counter() - start < 10.0


@pytest.mark.criterion(4, "point-threshold rule on the published results fixtures")
def test_point_threshold_rule():
    # gpt-3.5: recall 97, precision 86.9
    assert precision_at_recall_from_rates(86.9, 97.0, 95) == 86.9
    assert point_precision_at_recall(ConfusionCounts(tp=970, fp=146, fn=30), 95) == pytest.approx(86.9, abs=0.05)
    # davinci-002: recall 72.2 misses the 95 floor
    assert precision_at_recall_from_rates(72.6, 72.2, 95) == 0.0
    assert point_precision_at_recall(ConfusionCounts(tp=722, fp=272, fn=278), 95) == 0.0
    # davinci-003: recall 95.6, precision 80.4 at both floors
    assert precision_at_recall_from_rates(80.4, 95.6, 95) == precision_at_recall_from_rates(80.4, 95.6, 85) == 80.4
    # keyword: recall 80.2 misses both floors
    for t in (95, 85):
        assert precision_at_recall_from_rates(70.0, 80.2, t) == 0.0
        assert point_precision_at_recall(ConfusionCounts(tp=802, fp=300, fn=198), t) == 0.0


@pytest.mark.criterion(5, "parser corpus agrees 100%; 10,000 random byte strings keep invariants")
def test_parser_corpus_and_fuzz():
    corpus = json.loads((FIXTURES / "parser_corpus.json").read_text(encoding="utf-8"))
    assert len(corpus) >= 30
    for case in corpus:
        got = parse(case["text"], TemplateMode(case["mode"]))
        expected = None if case["label"] is None else Label(case["label"])
        assert (got.label, got.sticky, got.matched_rule.value) == (expected, case["sticky"], case["rule"]), case

    rng = np.random.default_rng(7)
    alphabet = np.frombuffer(b"(AB) Final Answer: This is a job fit for a recent graduate not\n\xff\xfe", np.uint8)
    modes = list(TemplateMode)
    for i in range(10_000):
        n = int(rng.integers(0, 120))
        raw = (rng.choice(alphabet, n) if i % 2 else rng.integers(0, 256, n, dtype=np.uint8)).tobytes()
        got = parse(raw, modes[i % 3])
        assert isinstance(got.raw, str)
        assert (got.label is None) == (got.matched_rule is Rule.NONE)
        assert got.label in (None, G, N)
        assert not got.sticky or got.matched_rule in (Rule.TEMPLATE_FINAL, Rule.CHOICE_TOKEN)


@pytest.mark.criterion(6, "scripted ablation reproduces the keep/discard pattern and golden report (< 30 s)")
def test_scripted_ablation():
    start = time.perf_counter()
    dataset = synthetic_dataset(500, 500)
    client = ChatClient(MockBackend(ablation_script(dataset, 500)))
    report = greedy_ablate(ablation_ladder(), dataset, client, model_id=MODEL)

    kept = {s.step: s.label for s in report.steps if s.kept}
    for step, published_label in zip([s.name for s in ablation_ladder()], PUBLISHED_KEPT):
        assert kept.get(step) == published_label, step
    discarded = {s.label for s in report.steps if not s.kept}
    assert {"+bothinst+mock+reit+strict", "+bothinst+mock+reit+loose"} <= discarded
    assert report.final_plan.flags == final_best_plan().flags
    assert report.final_plan == default_plan(final_best_plan().flags)

    # every realised row stays within 0.2 of the published row
    published = {r[0]: r for r in ABLATION_ROWS}
    for s in report.steps:
        _, p, r, f1, stick = published[s.label]
        assert abs(s.precision - p) <= 0.2 and abs(s.recall - r) <= 0.2 and abs(s.f1 - f1) <= 0.2
        assert abs(s.stickiness - stick) <= 0.5

    assert render_report(report) == (FIXTURES / "ablation_report.md").read_text(encoding="utf-8")
    assert time.perf_counter() - start < 30.0


@pytest.mark.criterion(7, "SVM reaches P@95%R = 100 on separable data; keyword fixture exact")
def test_baseline_sanity():
    posts = separable_postings(200)
    train, test = stratified_split(posts, 0.7, seed=0)
    vec = TfidfVectorizer().fit(train)
    svc = PegasosSVC().fit(vec.transform(train), [p.label for p in train])
    margins = svc.decision_function(vec.transform(test))
    sweep = sweep_precision_at_recall([ScoredPrediction(float(m), p.label) for m, p in zip(margins, test)], 95)
    assert sweep.reported == 100.0

    path = FIXTURES / "keyword_postings.jsonl"
    expected = [json.loads(line)["keyword_expected"] for line in path.read_text().splitlines()]
    postings = ingest(path)
    assert len(postings) == 20
    assert list(KeywordClassifier().fit().predict(postings)) == expected


def _metric_lines(out: str) -> list[str]:
    return [line for line in out.splitlines() if line.startswith(("precision ", "P@95%R"))]


@pytest.mark.criterion(8, "interrupted run resumes; replay matches uninterrupted aggregates with zero remote calls")
def test_interrupt_resume_replay(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("HARNESS_API_KEY", "acceptance-key")
    data = tmp_path / "data.jsonl"
    write_jsonl(synthetic_dataset(20, 20), data)

    with StubChatServer() as stub:
        def run(cache, results, *extra):
            argv = ["run", "--final", "--data", str(data), "--endpoint", stub.url, "--cache-dir", str(cache),
                    "--results-dir", str(results), "--concurrency", "1", "--max-attempts", "2",
                    "--retry-base-delay", "0", *extra]
            rc = main(argv)
            return rc, capsys.readouterr().out

        rc, reference = run(tmp_path / "ref-cache", tmp_path / "ref-results")
        assert rc == 0
        calls_reference = stub.attempts

        stub.fail_after = stub.successes + 20
        rc, _ = run(tmp_path / "cache", tmp_path / "results")
        assert rc == 3
        stored = sum(len(p.read_text().splitlines()) for p in (tmp_path / "results").glob("*.jsonl"))
        assert stored == 20

        stub.fail_after = None
        before = stub.successes
        rc, resumed = run(tmp_path / "cache", tmp_path / "results")
        assert rc == 0 and stub.successes - before == 20
        assert _metric_lines(resumed) == _metric_lines(reference)

        attempts = stub.attempts
        rc, replayed = run(tmp_path / "cache", tmp_path / "replay-results", "--backend", "replay")
        assert rc == 0
        assert stub.attempts == attempts
        assert _metric_lines(replayed) == _metric_lines(reference)
        assert calls_reference == 40


@pytest.mark.criterion(9, "70/30 split of 10,000 records at 30.8% positives keeps the share within 0.1 pt")
def test_stratified_split():
    posts = [JobPosting(f"r{i:05d}", "T", "D", G if i < 3080 else N) for i in range(10_000)]
    random.Random(1).shuffle(posts)
    share = 100 * grad_share(posts)
    assert share == pytest.approx(30.8)
    for seed in range(5):
        train, test = stratified_split(posts, 0.7, seed)
        assert len(train) == 7000 and len(test) == 3000
        assert abs(100 * grad_share(train) - share) <= 0.1
        assert abs(100 * grad_share(test) - share) <= 0.1
