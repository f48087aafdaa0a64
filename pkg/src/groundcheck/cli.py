"""Command-line entry point: ``groundcheck <subcommand>``.

Settings resolve as command-line flag, then ``--config`` JSON file, then
environment (backend URLs and tokens only), then built-in default.

Exit codes: 0 success, 1 validation/config error, 2 backend or transport
error, 3 planted-truth mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from groundcheck import benchgen
from groundcheck.benchgen import DEFAULT_KNOBS, GeneratorConfig, MockKnobs
from groundcheck.errors import BackendError, BudgetExceeded, GroundcheckError, ValidationError
from groundcheck.judge import Judge, LexicalOracle, RemoteJudge, load_refusal_patterns
from groundcheck.metrics import aggregate_corpus, evaluate_corpus
from groundcheck.model import Variant, format_rate, load_benchmark, save_benchmark, save_report
from groundcheck.prompts import MockGenerator, RemoteGenerator, TemplateSet, assemble, default_templates

log = logging.getLogger("groundcheck")

EXIT_OK, EXIT_VALIDATION, EXIT_BACKEND, EXIT_TRUTH = 0, 1, 2, 3

ENV_KEYS = {
    "judge_url": "GROUNDCHECK_JUDGE_URL",
    "judge_token": "GROUNDCHECK_JUDGE_TOKEN",
    "gen_url": "GROUNDCHECK_GEN_URL",
    "gen_token": "GROUNDCHECK_GEN_TOKEN",
}

DEFAULTS = {
    "backend": "mock",
    "judge": "lexical",
    "mode": "micro",
    "jobs": 1,
    "format": "json",
    "evidence_counts": "24,5",
    "page_size": 16,
    "budget_pages": None,
    "records": 100,
    "max_steps": 8,
    "max_concurrent": 2,
    "max_tokens": 512,
    "ux": None,
}


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    config = {}
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(config, dict):
            raise ValidationError("config file must hold a JSON object")
    for key, value in vars(args).items():
        if value is not None or key in ("config", "command", "func"):
            continue
        if key in config:
            setattr(args, key, config[key])
        elif key in ENV_KEYS and os.environ.get(ENV_KEYS[key]):
            setattr(args, key, os.environ[ENV_KEYS[key]])
        elif key in DEFAULTS:
            setattr(args, key, DEFAULTS[key])
    return args


def _load_knobs(path: str | None) -> dict[Variant, MockKnobs]:
    if not path:
        return dict(DEFAULT_KNOBS)
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read knobs file {path}: {exc}") from None
    return {Variant.parse(k): MockKnobs.from_json(v) for k, v in raw.items()}


def _generator_config(args) -> GeneratorConfig:
    base = {}
    if args.generator_config:
        try:
            base = json.loads(Path(args.generator_config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ValidationError(f"cannot read generator config: {exc}") from None
    cfg = GeneratorConfig.from_json(base)
    overrides = {"seed": args.seed, "n_records": args.n, "evidences_per_record": args.evidences}
    if args.relevance is not None:
        overrides["relevance_rate"] = float(args.relevance)
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    cfg.__post_init__()
    return cfg


def _judge(args) -> Judge:
    if args.judge == "remote":
        backend = RemoteJudge.from_env(args.judge_url, args.judge_token)
    elif args.judge == "lexical":
        backend = LexicalOracle()
    else:
        raise ValidationError(f"unknown judge backend {args.judge!r}")
    return Judge(backend, max_workers=max(int(args.jobs), 1))


def _generator(args):
    if args.backend == "remote":
        return RemoteGenerator.from_env(args.gen_url, args.gen_token, max_tokens=int(args.max_tokens))
    if args.backend == "mock":
        return MockGenerator(_load_knobs(args.knobs), int(args.seed or 0))
    raise ValidationError(f"unknown generation backend {args.backend!r}")


def _variants(values) -> list[Variant]:
    if not values:
        return list(Variant)
    out = []
    for v in values:
        out.extend(Variant.parse(x) for x in str(v).split(",") if x)
    return out


# --- subcommands ------------------------------------------------------------


def cmd_gen_bench(args) -> int:
    args.shape = args.shape or "synthetic"
    cfg = _generator_config(args)
    if args.shape not in benchgen.SHAPES:
        raise ValidationError(f"unknown shape {args.shape!r}")
    knobs = None if args.no_responses else _load_knobs(args.knobs)
    gen = benchgen.gen_synthetic if args.shape == "synthetic" else benchgen.gen_noisy
    corpus = gen(cfg, knobs)
    out = Path(args.out or f"{args.shape}.jsonl")
    save_benchmark(corpus.records, out)
    print(f"wrote {len(corpus.records)} records to {out}")
    if knobs is not None:
        truth = benchgen.truth_path_for(out)
        benchgen.save_truth(corpus.truth, truth)
        print(f"wrote planted truth to {truth}")
    return EXIT_OK


def _generate_responses(records, args, templates):
    generator = _generator(args)
    variants = _variants(args.variant)
    out = []
    for rec in records:
        responses = {}
        for v in variants:
            if v in rec.responses and not args.overwrite:
                continue
            responses[v] = generator.generate(assemble(v, rec.query_record, templates))
        out.append(rec.with_responses(responses))
    truth = getattr(generator, "truth", {})
    return out, truth


def cmd_generate(args) -> int:
    records = load_benchmark(args.bench)
    templates = TemplateSet.load(args.templates) if args.templates else default_templates()
    records, truth = _generate_responses(records, args, templates)
    out = Path(args.out or args.bench)
    save_benchmark(records, out)
    print(f"wrote {len(records)} records to {out}")
    if truth:
        benchgen.save_truth(truth, benchgen.truth_path_for(out))
    return EXIT_OK


def _write_report_bundle(reports, out: Path, fmt: str, mode: str) -> None:
    if fmt in ("json", "both"):
        save_report(reports, out, "json", mode)
    if fmt in ("markdown", "both"):
        md = out.with_suffix(".md") if fmt == "both" else out
        save_report(reports, md, "markdown", mode)


def cmd_evaluate(args) -> int:
    records = load_benchmark(args.bench)
    truth = {}
    if args.generate:
        templates = TemplateSet.load(args.templates) if args.templates else default_templates()
        records, truth = _generate_responses(records, args, templates)
    variants = _variants(args.variant)
    if not any(v in rec.responses for rec in records for v in variants):
        if records:
            raise ValidationError("benchmark has no responses to evaluate (use --generate)")
    patterns = load_refusal_patterns(args.refusal_patterns) if args.refusal_patterns else None
    judge = _judge(args)
    reports, failures = evaluate_corpus(records, variants, judge, int(args.jobs), patterns, args.skip_failed)
    out = Path(args.out or "report.json")
    _write_report_bundle(reports, out, args.format, args.mode)
    agg = aggregate_corpus(reports, args.mode) if reports else None
    print(f"evaluated {len(reports)} responses -> {out}")
    if agg is not None:
        print("  " + "  ".join(f"{k.upper()}={_fmt(v)}" for k, v in agg.rates.items()))
    for rec_id, variant, err in failures:
        print(f"  skipped {rec_id}/{variant}: {err}", file=sys.stderr)
    if args.verify_truth:
        if not truth:
            truth_path = Path(args.truth) if args.truth else benchgen.truth_path_for(args.bench)
            if not truth_path.exists():
                raise ValidationError(f"--verify-truth needs a truth sidecar; {truth_path} not found")
            truth = benchgen.load_truth(truth_path)
        problems = benchgen.compare_with_truth(reports, truth)
        if problems:
            for p in problems[:50]:
                print(f"  MISMATCH {p}", file=sys.stderr)
            print(f"truth verification failed: {len(problems)} mismatches", file=sys.stderr)
            return EXIT_TRUTH
        print(f"truth verification passed ({len(reports)} responses)")
    return EXIT_OK


def _fmt(value) -> str:
    return "n/a" if value is None else f"{float(value):.4f}"


def ablation_rows(cfg: GeneratorConfig, counts: list[int], knobs: MockKnobs, shape: str = "noisy",
                  mode: str = "micro", judge: Judge | None = None) -> list[dict]:
    rows = []
    gen = benchgen.gen_synthetic if shape == "synthetic" else benchgen.gen_noisy
    for count in counts:
        cfg_k = GeneratorConfig(cfg.seed, cfg.n_records, count, cfg.relevance_rate, cfg.product_vocabulary)
        corpus = gen(cfg_k, {Variant.CITATION: knobs})
        reports, _ = evaluate_corpus(corpus.records, [Variant.CITATION], judge or Judge())
        agg = aggregate_corpus(reports, mode)
        rows.append({"evidences": count, **{k: format_rate(agg.rates[k]) for k in ("ccr", "scr", "eur")}})
    return rows


def render_ablation(rows: list[dict]) -> str:
    lines = ["| # of evidences | CCR | SCR | EUR |", "|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r['evidences']} | {_fmt(r['ccr'])} | {_fmt(r['scr'])} | {_fmt(r['eur'])} |")
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    try:
        counts = [int(x) for x in str(args.evidence_counts).split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"bad --evidence-counts {args.evidence_counts!r}") from None
    if not counts or any(c < 1 for c in counts):
        raise ValidationError("evidence counts must be integers >= 1")
    args.shape = args.shape or "noisy"
    if args.relevance is None and args.shape == "noisy" and not args.generator_config:
        args.relevance = benchgen.REAL_WORLD_RELEVANCE
    cfg = _generator_config(args)
    knobs = _load_knobs(args.knobs).get(Variant.CITATION, DEFAULT_KNOBS[Variant.CITATION])
    rows = ablation_rows(cfg, counts, knobs, args.shape, args.mode)
    out_dir = Path(args.out or "ablation")
    out_dir.mkdir(parents=True, exist_ok=True)
    table = render_ablation(rows)
    (out_dir / "ablation.md").write_text(table, encoding="utf-8")
    (out_dir / "ablation.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(out_dir / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["evidences", "ccr", "scr", "eur"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    from groundcheck.plotting import plot_ablation

    plot_ablation(rows, out_dir / "ablation.png")
    print(table, end="")
    return EXIT_OK


def cmd_mui_sim(args) -> int:
    from groundcheck.mui import PageAllocator, UxVariant, run_multi_ux

    specs = args.ux or ["chat:cite", "recommend"]
    variants = [UxVariant.parse(s) for s in specs]
    cfg = GeneratorConfig(seed=int(args.seed or 0), n_records=int(args.records),
                          evidences_per_record=int(args.evidences or 24), relevance_rate=1.0)
    records = benchgen.gen_synthetic(cfg).records
    allocator = PageAllocator(int(args.page_size), None if args.budget_pages is None else int(args.budget_pages))
    totals = None
    failures = []
    for rec in records:
        try:
            result = run_multi_ux(rec.query_record, variants, allocator, max_steps=int(args.max_steps),
                                  max_concurrent=int(args.max_concurrent))
        except BudgetExceeded as exc:
            failures.append((rec.id, str(exc)))
            continue
        totals = result.stats if totals is None else totals + result.stats
    doc = {
        "ux": [{"name": v.name, "needs_citation": v.needs_citation} for v in variants],
        "page_size": allocator.page_size,
        "requests": len(records),
        "failed_requests": len(failures),
        "leaked_pages": allocator.live_pages,
        "stats": totals.to_json() if totals else None,
    }
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(doc, sort_keys=True))
    if totals:
        naive, shared = totals.prefill_tokens_naive, totals.prefill_tokens_shared
        print()
        print("| quantity | naive | multi-UX | saved |")
        print("|---|---|---|---|")
        print(f"| prefill tokens | {naive} | {shared} | {naive - shared} |")
        print(f"| prompt pages | {totals.pages_naive} | {totals.pages_allocated} | "
              f"{totals.pages_naive - totals.pages_allocated} |")
    if failures:
        print(f"{len(failures)} of {len(records)} requests failed: {failures[0][1]}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_report(args) -> int:
    from groundcheck.plotting import plot_variant_metrics

    try:
        doc = json.loads(Path(args.report).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read report {args.report}: {exc}") from None
    out_dir = Path(args.out or Path(args.report).with_suffix(""))
    out_dir.mkdir(parents=True, exist_ok=True)
    from groundcheck.model import render_markdown

    (out_dir / "report.md").write_text(render_markdown(doc), encoding="utf-8")
    groups = doc.get("by_variant") or ({"all": doc["aggregate"]} if doc.get("aggregate") else {})
    with open(out_dir / "aggregate.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scope", "mode", "n_records", "cgr", "ccr", "psr", "scr", "eur", "refusal_rate"])
        for scope, agg in groups.items():
            writer.writerow([scope, agg["mode"], agg["n_records"],
                             *(agg[k] for k in ("cgr", "ccr", "psr", "scr", "eur", "refusal_rate"))])
    if groups:
        plot_variant_metrics(groups, out_dir / "metrics.png")
    print(f"wrote report files to {out_dir}")
    return EXIT_OK


# --- argument parsing -------------------------------------------------------


def _add_generation_flags(p):
    p.add_argument("--backend", choices=["mock", "remote"], help="generation backend (default mock)")
    p.add_argument("--knobs", help="JSON file: variant -> mock knobs")
    p.add_argument("--gen-url", help=f"generation endpoint base URL (env {ENV_KEYS['gen_url']})")
    p.add_argument("--gen-token", help=f"generation credential (env {ENV_KEYS['gen_token']})")
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--templates", help="directory with prompt templates")
    p.add_argument("--overwrite", action="store_true", help="replace existing responses")


def _add_corpus_flags(p):
    p.add_argument("--shape", choices=sorted(benchgen.SHAPES))
    p.add_argument("--n", type=int, help="number of records")
    p.add_argument("--seed", type=int)
    p.add_argument("--relevance", type=float, help="fraction of relevant evidences (noisy shape)")
    p.add_argument("--evidences", type=int, help="evidences per record")
    p.add_argument("--generator-config", help="GeneratorConfig JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groundcheck", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with default values for any flag")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-bench", help="generate a synthetic or noisy benchmark")
    _add_corpus_flags(p)
    p.add_argument("--knobs", help="JSON file: variant -> mock knobs")
    p.add_argument("--no-responses", action="store_true", help="skip mock responses and truth sidecar")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_bench)

    p = sub.add_parser("generate", help="fill in responses for a benchmark")
    p.add_argument("--bench", required=True)
    p.add_argument("--out")
    p.add_argument("--variant", action="append", help="variant(s) to generate (default all)")
    p.add_argument("--seed", type=int)
    _add_generation_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score responses and write a report")
    p.add_argument("--bench", required=True)
    p.add_argument("--out", help="report path (default report.json)")
    p.add_argument("--format", choices=["json", "markdown", "both"])
    p.add_argument("--variant", action="append", help="variant(s) to evaluate (default all present)")
    p.add_argument("--judge", choices=["lexical", "remote"])
    p.add_argument("--judge-url", help=f"judge base URL (env {ENV_KEYS['judge_url']})")
    p.add_argument("--judge-token", help=f"judge credential (env {ENV_KEYS['judge_token']})")
    p.add_argument("--mode", choices=["micro", "macro"])
    p.add_argument("--jobs", type=int)
    p.add_argument("--verify-truth", action="store_true")
    p.add_argument("--truth", help="truth sidecar (default <bench>.truth.jsonl)")
    p.add_argument("--skip-failed", action="store_true")
    p.add_argument("--refusal-patterns", help="refusal pattern file")
    p.add_argument("--generate", action="store_true", help="generate responses before evaluating")
    p.add_argument("--seed", type=int)
    _add_generation_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="metrics against the number of evidences")
    _add_corpus_flags(p)
    p.add_argument("--evidence-counts", help="comma-separated list, e.g. 24,5")
    p.add_argument("--knobs")
    p.add_argument("--mode", choices=["micro", "macro"])
    p.add_argument("--out", help="output directory (default ./ablation)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("mui-sim", help="simulate multi-UX inference on a paged cache")
    p.add_argument("--page-size", type=int)
    p.add_argument("--ux", action="append", help="UX variant name[:cite]; repeatable")
    p.add_argument("--budget-pages", type=int)
    p.add_argument("--records", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--evidences", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--max-concurrent", type=int)
    p.add_argument("--out", help="write CacheStats JSON here")
    p.set_defaults(func=cmd_mui_sim)

    p = sub.add_parser("report", help="render tables and figures from a report JSON")
    p.add_argument("--report", required=True)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _resolve(args)
        return args.func(args)
    except BackendError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (GroundcheckError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
