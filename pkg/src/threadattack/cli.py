"""``threadattack`` command-line interface."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .backend import load_backend_config
from .context import ContextPolicy, render_context, select_context
from .dataset_io import (
    Corpus,
    check_ratios,
    dump_corpus,
    load_corpus,
    partition_for_modules,
    read_thread_jsonl,
    split_corpus,
    write_partition,
)
from .errors import BadRatios, ThreadAttackError
from .evaluation import cohen_kappa, evaluate
from .pipeline import Pipeline, PipelineConfig, PipelineOutcome
from .taxonomy import format_distribution, label_distribution
from .thread_model import Coordinate

log = logging.getLogger("threadattack")

DEFAULT_MAX_DEPTH = 64
DEFAULT_MAX_NODES = 100_000


class InputError(Exception):
    pass


def _ratios(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"ratios must be comma-separated numbers, got {text!r}") from None


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _stamp(d: dict) -> dict:
    return {"tool_version": __version__, **d}


def _emit_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")


def _load(args) -> Corpus:
    return load_corpus(
        args.corpus,
        args.format,
        getattr(args, "mapping", None),
        max_depth=args.max_depth,
        max_nodes=args.max_nodes,
    )


# -- subcommands ----------------------------------------------------------------

def cmd_validate(args) -> int:
    problems: list[str] = []
    if args.format == "flat_csv":
        try:
            corpus = _load(args)
            problems = corpus.validate()
        except ThreadAttackError as exc:
            problems = [f"{type(exc).__name__}: {exc}"]
    else:
        seen: set[str] = set()
        with open(args.corpus, encoding="utf-8") as fh:
            for i, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    c = read_thread_jsonl([line], max_depth=args.max_depth, max_nodes=args.max_nodes)
                except ThreadAttackError as exc:
                    found = getattr(exc, "violations", None) or [exc]
                    problems.extend(f"line {i}: {type(exc).__name__}: {v}" for v in found)
                    continue
                bid = c.blocks[0].block_id
                if bid in seen:
                    problems.append(f"line {i}: duplicate block id {bid!r}")
                seen.add(bid)
    for p in problems:
        print(p, file=sys.stderr)
    print(f"{len(problems)} violations")
    return 0 if not problems else 1


def cmd_detect(args) -> int:
    corpus = _load(args)
    config = PipelineConfig(
        backends=load_backend_config(args.backend_config),
        context_policy=args.policy,
        parallelism=args.parallelism,
        strict=args.strict,
        strict_json=args.strict,
        max_context_entries=args.max_context,
        templates_dir=args.templates,
    )
    run = Pipeline(config).detect_corpus(corpus.blocks)
    lines = "".join(
        json.dumps(o.to_json(), ensure_ascii=False, sort_keys=True, separators=(",", ":")) + "\n"
        for o in run.outcomes
    )
    if args.output:
        Path(args.output).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)
    for o in run.diagnostics:
        print(f"diagnostic {o.block_id} {o.coord}: {o.diagnostic}", file=sys.stderr)
    print(json.dumps(_stamp({"summary": run.summary}), sort_keys=True), file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    outcomes = []
    with open(args.outcomes, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    outcomes.append(PipelineOutcome.from_json(json.loads(line)))
                except (ValueError, KeyError) as exc:
                    raise InputError(f"{args.outcomes} line {i}: bad outcome record ({exc})") from None
    gold = _load(args).gold
    report = evaluate(outcomes, gold, attack_only_pearson=args.attack_only_pearson)
    if args.text:
        print(report.format_table())
    else:
        _emit_json(_stamp(report.to_dict()))
    return 0


def _read_columns(path: str, a: str, b: str) -> tuple[list[str], list[str]]:
    xs, ys = [], []
    p = Path(path)
    if p.suffix.lower() in (".jsonl", ".json"):
        with p.open(encoding="utf-8") as fh:
            for i, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                row = json.loads(line)
                if a not in row or b not in row:
                    raise InputError(f"{path} line {i}: missing column {a!r} or {b!r}")
                xs.append(str(row[a]).strip())
                ys.append(str(row[b]).strip())
    else:
        with p.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or a not in reader.fieldnames or b not in reader.fieldnames:
                raise InputError(f"{path}: header lacks column {a!r} or {b!r}")
            for row in reader:
                xs.append((row[a] or "").strip())
                ys.append((row[b] or "").strip())
    return xs, ys


def cmd_kappa(args) -> int:
    xs, ys = _read_columns(args.labels, args.a, args.b)
    kappa, rate = cohen_kappa(xs, ys)
    _emit_json(_stamp({"n": len(xs), "kappa": kappa, "consistency_rate": rate, "columns": [args.a, args.b]}))
    return 0


def cmd_split(args) -> int:
    corpus = _load(args)
    designated = None
    if args.designated_test:
        designated = [s.strip() for s in Path(args.designated_test).read_text(encoding="utf-8").splitlines()
                      if s.strip()]
    parts = split_corpus(corpus, args.ratios, args.seed, designated)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"seed": args.seed, "ratios": args.ratios, "splits": {}}
    for name, part in zip(("train", "val", "test"), parts):
        dump_corpus(part, out / f"{name}.jsonl")
        manifest["splits"][name] = {
            "path": f"{name}.jsonl",
            "blocks": len(part),
            "comments": part.n_comments,
            "block_ids": [b.block_id for b in part.blocks],
        }
    (out / "split_manifest.json").write_text(json.dumps(_stamp(manifest), indent=2) + "\n", encoding="utf-8")
    _emit_json(_stamp(manifest))
    return 0


def cmd_partition(args) -> int:
    corpus = _load(args)
    part = partition_for_modules(corpus, args.policy, args.max_context)
    _emit_json(_stamp(write_partition(part, args.out_dir)))
    return 0


def cmd_context(args) -> int:
    corpus = _load(args)
    try:
        block = corpus.block(args.block_id)
    except KeyError:
        raise InputError(f"no block {args.block_id!r} in {args.corpus}") from None
    window = select_context(block, Coordinate(args.level, args.seq), args.policy, args.max_context)
    text = render_context(window)
    if text:
        print(text)
    if window.truncated:
        print(f"({window.truncated} earlier peer(s) truncated)", file=sys.stderr)
    return 0


def cmd_stats(args) -> int:
    corpus = _load(args)
    dist = label_distribution(corpus.gold[k] for k in sorted(corpus.gold, key=lambda k: (k[0], k[1])))
    if args.json:
        _emit_json(_stamp(dist.to_dict()))
    else:
        print(format_distribution(dist))
    return 0


# -- parser -------------------------------------------------------------------

def _corpus_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("corpus", help="thread-block JSONL (or CSV with --format flat_csv)")
    p.add_argument("--format", choices=["thread_jsonl", "flat_csv"], default="thread_jsonl")
    p.add_argument("--mapping", help="mapping config JSON for flat_csv corpora")
    p.add_argument("--max-depth", type=_positive, default=DEFAULT_MAX_DEPTH)
    p.add_argument("--max-nodes", type=_positive, default=DEFAULT_MAX_NODES)


def _policy_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--policy", choices=[c.value for c in ContextPolicy], default=ContextPolicy.SAME_LEVEL.value)
    p.add_argument("--max-context", type=int, default=None, help="cap on context entries (oldest peers dropped)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="threadattack", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check thread blocks and gold labels")
    _corpus_args(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("detect", help="run the detection pipeline, emit outcome JSONL")
    _corpus_args(p)
    _policy_args(p)
    p.add_argument("--backend-config", required=True)
    p.add_argument("--templates", help="directory of <role>.txt prompt templates")
    p.add_argument("--parallelism", type=_positive, default=1)
    p.add_argument("--strict", action="store_true", help="size-order and reply-parse strictness")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score outcome JSONL against gold labels")
    p.add_argument("outcomes")
    _corpus_args(p)
    p.add_argument("--attack-only-pearson", action="store_true")
    p.add_argument("--text", action="store_true", help="aligned table instead of JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("split", help="seeded train/val/test split by block")
    _corpus_args(p)
    p.add_argument("--ratios", type=_ratios, default=[0.8, 0.1, 0.1])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--designated-test", help="file with one test block id per line")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("partition", help="write the four per-role training sets")
    _corpus_args(p)
    _policy_args(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("context", help="print the context window of one comment")
    _corpus_args(p)
    _policy_args(p)
    p.add_argument("--block-id", required=True)
    p.add_argument("--level", type=_positive, required=True)
    p.add_argument("--seq", type=_positive, required=True)
    p.set_defaults(func=cmd_context)

    p = sub.add_parser("kappa", help="Cohen's kappa between two label columns")
    p.add_argument("labels", help="CSV or JSONL file")
    p.add_argument("--a", required=True, help="first column")
    p.add_argument("--b", required=True, help="second column")
    p.set_defaults(func=cmd_kappa)

    p = sub.add_parser("stats", help="label distribution of a gold corpus")
    _corpus_args(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "ratios", None) is not None:
        try:
            args.ratios = list(check_ratios(args.ratios))
        except BadRatios as exc:
            parser.print_usage(sys.stderr)
            print(f"{parser.prog}: error: {exc}", file=sys.stderr)
            return 2
    if getattr(args, "format", None) == "flat_csv" and not args.mapping:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: --format flat_csv needs --mapping", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except InputError as exc:
        print(json.dumps({"error": "InputError", "message": str(exc)}), file=sys.stderr)
        return 1
    except (ThreadAttackError, OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
