"""Command-line entry point.

Settings resolve as command-line flag > environment variable
(``HARNESS_<SETTING>``, e.g. ``HARNESS_MODEL_ID``) > JSON config file
(``--config``) > built-in default.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import __version__
from .baselines import KeywordClassifier, PegasosSVC, TfidfVectorizer, load_rules, save_model
from .dataset import JobPosting, Label, compose_input, ingest, stratified_split, summarize, write_jsonl
from .exceptions import DataError, HarnessError, PlanError
from .llm import ChatClient, MockBackend, RemoteBackend, ReplayBackend, ResponseCache, cache_stats
from .metrics import ConfusionCounts, ScoredPrediction, point_precision_at_recall, scores, sweep_precision_at_recall
from .prompts import ablation_ladder, build, default_plan, final_best_plan, load_pack, parse_flags, render_flat, validate
from .runner import AblationReport, ResultStore, evaluate_point, greedy_ablate, render_report, run_experiment, write_manifest

log = logging.getLogger("gradprompt")


@dataclass
class HarnessConfig:
    backend: str = "remote"
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    api_key_env: str = "HARNESS_API_KEY"
    model_id: str = "gpt-3.5-turbo-0301"
    concurrency: int = 4
    cache_dir: str = ".gradprompt/cache"
    results_dir: str = ".gradprompt/results"
    prompt_pack: str | None = None
    rule_pack: str | None = None
    mock_script: str | None = None
    replay_strict: bool = True
    max_output_tokens: int = 512
    max_attempts: int = 6
    retry_base_delay: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.backend not in ("remote", "mock", "replay"):
            raise UsageError(f"unknown backend {self.backend!r} (remote, mock or replay)")
        if self.concurrency < 1:
            raise UsageError("concurrency must be >= 1")
        if self.backend == "mock" and not self.mock_script:
            raise UsageError("the mock backend needs --mock-script")


class UsageError(HarnessError):
    exit_code = 1


def _coerce(value, like):
    if isinstance(like, bool) or like is bool:
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int) and not isinstance(like, bool):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def resolve_config(args: argparse.Namespace, environ=None) -> HarnessConfig:
    environ = os.environ if environ is None else environ
    cfg = HarnessConfig()
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from exc
        known = {f.name for f in fields(HarnessConfig)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        for k, v in data.items():
            setattr(cfg, k, _coerce(v, getattr(cfg, k)) if getattr(cfg, k) is not None else v)
    for f in fields(HarnessConfig):
        env_value = environ.get(f"HARNESS_{f.name.upper()}")
        if env_value is not None:
            default = getattr(cfg, f.name)
            setattr(cfg, f.name, _coerce(env_value, default) if default is not None else env_value)
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            setattr(cfg, f.name, flag_value)
    cfg.validate()
    return cfg


def make_client(cfg: HarnessConfig) -> ChatClient:
    if cfg.backend == "mock":
        backend = MockBackend.from_file(cfg.mock_script)
        cache = ResponseCache(cfg.cache_dir)
    elif cfg.backend == "replay":
        backend = ReplayBackend(cfg.cache_dir, strict=cfg.replay_strict)
        cache = None
    else:
        backend = RemoteBackend(cfg.endpoint, api_key_env=cfg.api_key_env, max_attempts=cfg.max_attempts,
                                base_delay=cfg.retry_base_delay, seed=cfg.seed)
        cache = ResponseCache(cfg.cache_dir)
    return ChatClient(backend, cache, max_concurrency=cfg.concurrency)


def _plan_from_args(args, cfg: HarnessConfig):
    pack = load_pack(cfg.prompt_pack)
    if args.final:
        plan = final_best_plan(args.name or "Frederick")
    else:
        try:
            flags = parse_flags(args.flags or "")
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        plan = default_plan(flags, pack, assistant_name=args.name or "Frederick")
    violations = validate(plan)
    if violations:
        raise PlanError(violations)
    return plan, pack


def _load_data(path, fmt=None) -> list[JobPosting]:
    return ingest(path, fmt)


def _print(text: str = "") -> None:
    sys.stdout.write(text + "\n")


# --------------------------------------------------------------------------- commands

def cmd_ingest(args, cfg):
    postings = _load_data(args.data, args.format)
    if not postings:
        raise DataError(f"{args.data} contains no postings")
    if args.out:
        write_jsonl(postings, args.out)
    _print(summarize(postings).format_table())
    return 0


def cmd_split(args, cfg):
    postings = _load_data(args.data, args.format)
    train, test = stratified_split(postings, args.fraction, cfg.seed)
    write_jsonl(train, args.train_out)
    write_jsonl(test, args.test_out)
    _print(f"train: {len(train)} examples, test: {len(test)} examples (seed {cfg.seed})")
    return 0


def _posting_text(args) -> tuple[str, str]:
    if args.text is not None:
        return "posting", args.text
    if args.posting is None:
        raise UsageError("give --posting FILE or --text TEXT")
    path = Path(args.posting)
    if path.suffix.lower() in (".jsonl", ".csv"):
        postings = ingest(path)
        if args.id:
            matches = [p for p in postings if p.id == args.id]
            if not matches:
                raise DataError(f"no posting with id {args.id!r} in {path}")
            posting = matches[0]
        elif postings:
            posting = postings[0]
        else:
            raise DataError(f"{path} contains no postings")
        return posting.id, compose_input(posting)
    try:
        return path.stem, path.read_text(encoding="utf-8").rstrip("\n")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def cmd_build_prompt(args, cfg):
    plan, pack = _plan_from_args(args, cfg)
    posting_id, text = _posting_text(args)
    compiled = build(plan, text, pack, posting_id=posting_id)
    if args.flat:
        _print(render_flat(compiled))
    elif args.json:
        _print(json.dumps(compiled.to_dicts(), indent=2, ensure_ascii=False))
    else:
        blocks = [f"[{m.role.value}]\n{m.content}" for m in compiled.messages]
        _print("\n\n".join(blocks))
    return 0


def cmd_run(args, cfg):
    plan, pack = _plan_from_args(args, cfg)
    dataset = _load_data(args.data, args.format)
    client = make_client(cfg)
    store = ResultStore(cfg.results_dir)
    write_manifest(Path(cfg.results_dir) / f"manifest-run-{plan.plan_id}.json", plans=[plan], dataset=dataset,
                   backend=client.backend.describe(), model_id=cfg.model_id)
    result = run_experiment(plan, dataset, client, model_id=cfg.model_id, store=store, pack=pack,
                            max_output_tokens=cfg.max_output_tokens)
    s = result.scores
    _print(f"plan {plan.label} ({plan.plan_id}) on {len(dataset)} examples")
    _print(f"precision {s.precision:.1f} | recall {s.recall:.1f} | F1 {s.f1:.1f} | "
           f"stickiness {result.stickiness:.1f}% | parse failures {result.parse_failures}")
    _print(evaluate_point(result.records).line())
    if client.cache is not None:
        st = client.cache.stats()
        _print(f"dispatched {result.dispatched} | cache hits {st.hits} | cache misses {st.misses}")
    else:
        _print(f"dispatched {result.dispatched}")
    return 0


def cmd_ablate(args, cfg):
    dataset = _load_data(args.data, args.format)
    pack = load_pack(cfg.prompt_pack)
    client = make_client(cfg)
    store = ResultStore(cfg.results_dir)
    report = greedy_ablate(ablation_ladder(), dataset, client, base_plan=default_plan((), pack),
                           model_id=cfg.model_id, store=store, pack=pack, max_output_tokens=cfg.max_output_tokens)
    out = Path(args.out) if args.out else Path(cfg.results_dir) / "ablation.md"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_report(report, "markdown"), encoding="utf-8")
    report.save(out.with_suffix(".json"))
    if args.csv:
        Path(args.csv).write_text(render_report(report, "csv"), encoding="utf-8")
    write_manifest(out.with_name(out.stem + ".manifest.json"), plans=[report.final_plan], dataset=dataset,
                   backend=report.backend, model_id=cfg.model_id,
                   extra={"report": str(out), "skipped": report.skipped})
    _print(render_report(report, "markdown").rstrip("\n"))
    return 0


def cmd_report(args, cfg):
    report = AblationReport.load(args.report)
    text = render_report(report, args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _split_for_baseline(args, cfg):
    if args.train and args.test:
        return _load_data(args.train), _load_data(args.test)
    if args.data:
        return stratified_split(_load_data(args.data), 0.7, cfg.seed)
    raise UsageError("give --train and --test, or --data to split 70/30")


def cmd_baseline(args, cfg):
    train, test = _split_for_baseline(args, cfg)
    truth = [p.label for p in test]
    if Label.UNLABELED in truth or any(p.label is Label.UNLABELED for p in train):
        raise DataError("baseline evaluation needs labeled train and test sets")
    if args.svm:
        vec = TfidfVectorizer(min_df=args.min_df).fit(train)
        svc = PegasosSVC(lam=args.lam, epochs=args.epochs, seed=cfg.seed).fit(vec.transform(train),
                                                                             [p.label for p in train])
        margins = svc.decision_function(vec.transform(test))
        preds = [ScoredPrediction(float(m), t) for m, t in zip(margins, truth)]
        if args.save_model:
            save_model(args.save_model, vec, svc)
        predicted = [Label(v) for v in svc.predict(vec.transform(test))]
        c = ConfusionCounts.from_labels(predicted, truth)
        s = scores(c)
        _print(f"svm: precision {s.precision:.1f} | recall {s.recall:.1f} | F1 {s.f1:.1f} (margin >= 0)")
        for t in (95, 85):
            sweep = sweep_precision_at_recall(preds, t)
            _print(f"P@{t}%R {sweep.reported:.1f}" + ("" if sweep.reachable else " (unreachable)"))
    else:
        clf = KeywordClassifier(load_rules(cfg.rule_pack)).fit()
        predicted = [Label(v) for v in clf.predict(test)]
        c = ConfusionCounts.from_labels(predicted, truth)
        s = scores(c)
        _print(f"keyword: precision {s.precision:.1f} | recall {s.recall:.1f} | F1 {s.f1:.1f}")
        _print(f"P@95%R {point_precision_at_recall(c, 95):.1f}")
        _print(f"P@85%R {point_precision_at_recall(c, 85):.1f}")
    return 0


def cmd_cache(args, cfg):
    directory = Path(cfg.cache_dir)
    if args.action == "clear":
        removed = ResponseCache(directory).clear()
        _print(f"removed {removed} entries from {directory}")
        return 0
    st = cache_stats(directory)
    _print(f"entries {st.entries} | bytes {st.bytes}")
    return 0


# --------------------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("harness settings (flag > HARNESS_* env > --config file)")
    g.add_argument("--config", help="JSON config file")
    g.add_argument("--backend", choices=["remote", "mock", "replay"], help="response backend")
    g.add_argument("--endpoint", help="chat-completions URL for the remote backend")
    g.add_argument("--api-key-env", dest="api_key_env", help="name of the env var holding the API key")
    g.add_argument("--model", dest="model_id", help="model id sent with each request")
    g.add_argument("--concurrency", type=int, help="max in-flight backend requests")
    g.add_argument("--cache-dir", dest="cache_dir", help="response cache directory")
    g.add_argument("--results-dir", dest="results_dir", help="result store and report directory")
    g.add_argument("--prompt-pack", dest="prompt_pack", help="JSON prompt pack overriding built-in fragments")
    g.add_argument("--rule-pack", dest="rule_pack", help="keyword rule pack file")
    g.add_argument("--mock-script", dest="mock_script", help="JSON script for the mock backend")
    g.add_argument("--replay-strict", dest="replay_strict", action=argparse.BooleanOptionalAction, default=None,
                   help="fail on replay cache misses")
    g.add_argument("--max-output-tokens", dest="max_output_tokens", type=int, help="completion length cap")
    g.add_argument("--max-attempts", dest="max_attempts", type=int, help="remote attempts per request")
    g.add_argument("--retry-base-delay", dest="retry_base_delay", type=float, help="first backoff delay (s)")
    g.add_argument("--seed", type=int, help="seed for splits, SVM training and jitter")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def _plan_args(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--flags", help="comma-separated modifications, e.g. zero-cot,bothinst,mock")
    g.add_argument("--final", action="store_true", help="use the best-performing final plan")
    p.add_argument("--name", help="assistant name used by the name modification")


def _data_args(p: argparse.ArgumentParser, required=True) -> None:
    p.add_argument("--data", required=required, help="postings file (.jsonl or .csv)")
    p.add_argument("--format", choices=["jsonl", "csv"], help="override format detection")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="gradprompt", description="Prompt-engineering ablation harness for graduate job "
                                                    "classification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="validate a dataset and print its summary")
    _data_args(p)
    p.add_argument("--out", help="write the validated postings as JSONL")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", parents=[common], help="stratified train/test split")
    _data_args(p)
    p.add_argument("--fraction", type=float, default=0.7, help="train fraction (default 0.7)")
    p.add_argument("--train-out", required=True, help="train JSONL output")
    p.add_argument("--test-out", required=True, help="test JSONL output")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("build-prompt", parents=[common], help="print the compiled message sequence")
    _plan_args(p)
    p.add_argument("--posting", help="posting file: .jsonl/.csv (first row or --id) or plain text")
    p.add_argument("--id", help="posting id to pick from a dataset file")
    p.add_argument("--text", help="posting text given inline")
    out = p.add_mutually_exclusive_group()
    out.add_argument("--flat", action="store_true", help="render without roles, for completion models")
    out.add_argument("--json", action="store_true", help="print messages as JSON")
    p.set_defaults(func=cmd_build_prompt)

    p = sub.add_parser("run", parents=[common], help="evaluate one plan over a dataset")
    _plan_args(p)
    _data_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", parents=[common], help="run the greedy keep-or-discard ablation")
    _data_args(p)
    p.add_argument("--out", help="Markdown report path (JSON report saved alongside)")
    p.add_argument("--csv", help="also write the report as CSV")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("baseline", parents=[common], help="evaluate the keyword or tf-idf SVM baseline")
    kind = p.add_mutually_exclusive_group(required=True)
    kind.add_argument("--keyword", action="store_true", help="keyword/regex rules")
    kind.add_argument("--svm", action="store_true", help="tf-idf + Pegasos linear SVM")
    p.add_argument("--train", help="training postings")
    p.add_argument("--test", help="test postings")
    p.add_argument("--data", help="single labeled file, split 70/30 with --seed")
    p.add_argument("--lam", type=float, default=1e-3, help="SVM regularisation (default 1e-3)")
    p.add_argument("--epochs", type=int, default=20, help="SVM epochs (default 20)")
    p.add_argument("--min-df", dest="min_df", type=int, default=1, help="tf-idf minimum document frequency")
    p.add_argument("--save-model", dest="save_model", help="write the fitted tf-idf/SVM as JSON")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("report", parents=[common], help="render a saved ablation report")
    p.add_argument("report", help="JSON report written by ablate")
    p.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("cache", parents=[common], help="inspect or clear the response cache")
    p.add_argument("action", choices=["stats", "clear"])
    p.set_defaults(func=cmd_cache)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help/--version exit 0; argument errors exit 1 via _Parser.error
        return exc.code if isinstance(exc.code, int) else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except HarnessError as exc:
        sys.stderr.write(f"gradprompt: error: {exc}\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(f"gradprompt: error: {exc}\n")
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
