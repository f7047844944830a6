"""Command-line entry point: ``pajama-forge <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error. Progress goes to stderr
(level from ``PAJAMA_FORGE_LOG``); stdout carries only results.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .corpus_io import CorpusManifest
from .errors import PajamaForgeError
from .eval_metrics import VARIANTS, load_scores, rrgs
from .lowlen_filter import FilterPolicy
from .lsh_dedup import LshParams
from .minhash import DEFAULT_NGRAM, ShingleParams
from .mixture import MixtureConfig, build_plan, builtin_config, materialize, write_order
from .pipeline import run_dedup, run_filter, run_pipeline, run_stats
from .ptwd import PtwdSchedule, schedule_table, table_csv
from .token_stats import SubsetRule
from .tokenizer import load_bpe

log = logging.getLogger("pajama_forge")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_manifest(p, required=True):
    p.add_argument("--manifest", required=required, help="corpus manifest JSON")


def _add_out(p, required=True):
    p.add_argument("--out", required=required, help="output directory")


def _add_workers(p):
    p.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")


def _add_dedup_flags(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--rows", type=int, default=None, help="rows per band (default perms / bands, else 8)")
    p.add_argument("--perms", type=int, default=None, help="MinHash permutations k (default bands x rows)")
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--passes", type=int, default=1, help="band passes bounding bucket memory")
    p.add_argument("--ngram", type=int, default=DEFAULT_NGRAM, help="shingle width in words")


def _add_tokenizer_flags(p, required=True):
    p.add_argument("--vocab", required=required, help="vocab.json")
    p.add_argument("--merges", required=required, help="merges.txt")


def _add_subset_flag(p):
    p.add_argument(
        "--subset",
        action="append",
        choices=[r.value for r in SubsetRule],
        help="token subset for KL matrices; repeatable (default: every subset)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pajama-forge", description="Corpus preparation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("filter", help="drop low-length documents")
    _add_manifest(p)
    _add_out(p)
    p.add_argument("--policy", help="policy JSON {min_chars, exempt_sources}")

    p = sub.add_parser("dedup", help="global MinHash-LSH deduplication")
    _add_manifest(p)
    _add_out(p)
    _add_dedup_flags(p)
    _add_workers(p)
    p.add_argument("--local", action="store_true", help="deduplicate within each source only")

    p = sub.add_parser("stats", help="token counts and KL-divergence matrices")
    _add_manifest(p)
    _add_out(p)
    _add_tokenizer_flags(p)
    _add_subset_flag(p)
    _add_workers(p)

    p = sub.add_parser("mix", help="build a mixture sampling plan")
    p.add_argument("--config", required=True, help="builtin name (DC-1..DC-7, LBS) or config JSON")
    p.add_argument("--inventory", help="JSON {source: available tokens}")
    p.add_argument("--seed", type=int, default=None)
    _add_manifest(p, required=False)
    _add_tokenizer_flags(p, required=False)
    _add_out(p, required=False)

    p = sub.add_parser("rrgs", help="risk-of-random-guessing scores")
    p.add_argument("--scores", required=True, help="CSV item,score")
    p.add_argument("--baseline", type=float, default=0.25)

    p = sub.add_parser("schedule", help="three-phase weight-decay schedule")
    p.add_argument("--steps", type=int, help="total steps (default thirds schedule)")
    p.add_argument("--config", help="schedule JSON")
    p.add_argument("--losses", help="loss series for plateau triggering, one value per line")
    p.add_argument("--out", help="CSV path (default stdout)")

    p = sub.add_parser("pipeline", help="filter -> dedup -> stats")
    _add_manifest(p)
    _add_out(p)
    p.add_argument("--policy", help="policy JSON {min_chars, exempt_sources}")
    _add_dedup_flags(p)
    _add_tokenizer_flags(p)
    _add_subset_flag(p)
    _add_workers(p)
    return parser


def _lsh_params(args) -> tuple[ShingleParams, LshParams]:
    bands = args.bands
    if args.rows is None:
        if args.perms is not None:
            if bands < 1 or args.perms % bands:
                raise UsageError(f"--perms {args.perms} is not a multiple of --bands {bands}")
            rows = args.perms // bands
        else:
            rows = 8
    else:
        rows = args.rows
    if args.perms is not None and args.perms != bands * rows:
        raise UsageError(f"--perms must equal --bands x --rows ({bands} x {rows})")
    if args.passes < 1:
        raise UsageError("--passes must be >= 1")
    try:
        return ShingleParams(args.ngram, args.seed), LshParams(bands, rows, args.threshold)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _rules(args) -> list[SubsetRule]:
    if not args.subset:
        return list(SubsetRule)
    return [SubsetRule(s) for s in dict.fromkeys(args.subset)]


def _policy(args) -> FilterPolicy:
    return FilterPolicy.load(args.policy) if args.policy else FilterPolicy()


def _workers(args) -> int:
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    return args.workers


def cmd_filter(args) -> None:
    manifest = CorpusManifest.load(args.manifest)
    _, report = run_filter(manifest, _policy(args), args.out)
    log.info("filter: %.2f%% of documents dropped", report.total_rate * 100)


def cmd_dedup(args) -> None:
    shingle_params, lsh_params = _lsh_params(args)
    manifest = CorpusManifest.load(args.manifest)
    run_dedup(manifest, args.out, shingle_params, lsh_params, args.passes, _workers(args), args.local)


def cmd_stats(args) -> None:
    workers = _workers(args)
    model = load_bpe(args.vocab, args.merges)
    run_stats(CorpusManifest.load(args.manifest), model, args.out, _rules(args), workers)


def _load_mixture(spec: str) -> MixtureConfig:
    path = Path(spec)
    if path.exists():
        return MixtureConfig.load(path)
    try:
        return builtin_config(spec)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None


def cmd_mix(args) -> None:
    config = _load_mixture(args.config)
    doc_tokens = None
    if args.manifest:
        if not (args.vocab and args.merges):
            raise UsageError("--manifest needs --vocab and --merges to count tokens")
        model = load_bpe(args.vocab, args.merges)
        doc_tokens = {}
        for doc in CorpusManifest.load(args.manifest).iter_documents():
            doc_tokens.setdefault(doc.source, {})[doc.doc_id] = len(model.encode(doc.text))
    if args.inventory:
        inventory = json.loads(Path(args.inventory).read_text(encoding="utf-8"))
        if not isinstance(inventory, dict):
            raise PajamaForgeError(f"{args.inventory}: expected an object {{source: tokens}}")
        inventory = {str(k): int(v) for k, v in inventory.items()}
    elif doc_tokens is not None:
        inventory = {s: sum(d.values()) for s, d in doc_tokens.items()}
    else:
        raise UsageError("mix needs --inventory or --manifest")
    plan = build_plan(config, inventory, args.seed)
    text = json.dumps(plan.to_json(), indent=2) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "plan.json").write_text(text, encoding="utf-8")
        if doc_tokens is not None:
            count = write_order(materialize(plan, doc_tokens), out / "order.bin")
            log.info("mix: wrote %d doc ids in training order", count)
    else:
        sys.stdout.write(text)


def cmd_rrgs(args) -> None:
    vector = load_scores(args.scores, args.baseline)
    for variant in VARIANTS:
        try:
            value = f"{rrgs(vector, variant):.6f}"
        except ValueError:
            value = "nan"
        print(f"{variant}={value}")


def _read_losses(path: str) -> list[float]:
    losses = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        field = line.split(",")[-1]
        try:
            losses.append(float(field))
        except ValueError:
            if lineno == 1:
                continue
            raise PajamaForgeError(f"{path}:{lineno}: loss {field!r} is not a number") from None
    return losses


def cmd_schedule(args) -> None:
    if args.config:
        sched = PtwdSchedule.load(args.config)
    elif args.steps is not None:
        try:
            sched = PtwdSchedule(args.steps)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    else:
        raise UsageError("schedule needs --steps or --config")
    losses = _read_losses(args.losses) if args.losses else None
    try:
        text = table_csv(schedule_table(sched, losses))
    except ValueError as exc:
        raise PajamaForgeError(str(exc)) from exc
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_pipeline(args) -> None:
    shingle_params, lsh_params = _lsh_params(args)
    workers = _workers(args)
    policy = _policy(args)
    model = load_bpe(args.vocab, args.merges)
    run_pipeline(
        CorpusManifest.load(args.manifest),
        args.out,
        model,
        policy,
        shingle_params,
        lsh_params,
        args.passes,
        workers,
        _rules(args),
    )


COMMANDS = {
    "filter": cmd_filter,
    "dedup": cmd_dedup,
    "stats": cmd_stats,
    "mix": cmd_mix,
    "rrgs": cmd_rrgs,
    "schedule": cmd_schedule,
    "pipeline": cmd_pipeline,
}


def _setup_logging() -> None:
    level = os.environ.get("PAJAMA_FORGE_LOG", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    _setup_logging()
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pajama-forge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PajamaForgeError, OSError, ValueError, KeyError) as exc:
        print(f"pajama-forge: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
