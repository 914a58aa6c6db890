"""Command-line entry point: generate, transform, mutate, validate, join, run, score, report."""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .extract import ExtractionCache
from .graph import Style, builtin_ruleset, load_ruleset
from .instances import EvalInstance
from .jsonl import MalformedRecord, file_sha256, read_jsonl, write_jsonl
from .metrics import build_report, write_report
from .mutate import SamplerConfig, load_corpus, mutate_corpus, shared_problem_ids, validate_template
from .runner import EndpointConfig, MockReasonerConfig, ResponseStore, run_dataset
from .scoring import ScoredInstance, coverage_items, flatten_records, problem_accuracies, score_responses
from .syndeduct import (
    ConfigError,
    GenParams,
    RawQuestion,
    TransformParams,
    distribution_summary,
    generate_questions,
    hop_summary,
    load_nouns,
    transform_questions,
)

log = logging.getLogger("dedcons")

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL = 0, 1, 2


class CliError(Exception):
    """Bad configuration or input; maps to exit code 1."""


@dataclass
class RunManifest:
    run_id: str
    command: str
    config: dict
    seeds: dict
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    tool_version: str = __version__
    created_at: str = ""


def _write_manifest(output: Path, manifest: RunManifest) -> Path:
    manifest.created_at = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    path = output.with_name(output.name + ".manifest.json")
    path.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def _hashes(paths: Sequence[Path]) -> dict[str, str]:
    return {str(p): file_sha256(p) for p in paths if p.exists() and p.is_file()}


def _config_id(*parts: object) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _flag(parser: argparse.ArgumentParser, name: str, **kw) -> None:
    """Register ``--a_b`` together with its ``--a-b`` spelling."""
    body = name[2:]
    names = [name]
    if "_" in body:
        names.append("--" + body.replace("_", "-"))
    kw.setdefault("dest", name.lstrip("-").replace("-", "_"))
    parser.add_argument(*names, **kw)


def _styles(text: str) -> list[Style]:
    if text == "all":
        return list(Style)
    try:
        return [Style(s.strip()) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _load_instances(path: Path) -> list[EvalInstance]:
    return [EvalInstance.from_dict(r) for r in read_jsonl(path)]


def _ruleset(path: str | None, full: bool = False):
    if path:
        return load_ruleset(path)
    return builtin_ruleset("full" if full else "default")


# -- subcommands -----------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    params = GenParams(
        num_graphs=args.num_graphs,
        m=args.m,
        num_inputs=args.num_inputs,
        unary_ratio=args.unary_ratio,
        naming_mode=args.naming_mode,
        max_hops=args.max_hops,
        max_graphs_per_hop=args.max_graphs,
        value_range=(args.min_value, args.max_value),
        seed=args.seed,
        logic_mode=args.logic_mode,
    )
    ruleset = _ruleset(args.operators_file, args.unary_ratio > 0)
    nouns = load_nouns(args.nouns)
    questions, available = generate_questions(params, ruleset, nouns, workers=args.workers)
    out = Path(args.output_file)
    write_jsonl(out, (q.to_dict(ruleset) for q in questions))
    print(hop_summary(questions, params.max_graphs_per_hop))
    if args.manifest:
        _write_manifest(
            out,
            RunManifest(
                run_id=_config_id("generate", asdict(params)),
                command="generate",
                config={**asdict(params), "available_per_hop": available},
                seeds={"seed": params.seed},
                outputs=_hashes([out]),
            ),
        )
    return EXIT_OK


def cmd_transform(args: argparse.Namespace) -> int:
    t = TransformParams(
        max_hops=args.max_hops,
        max_items_per_hop=args.max_items,
        max_prefixes=args.max_prefixes,
        max_prefix_length=args.max_prefix_length,
        seed=args.seed,
    )
    ruleset = _ruleset(args.operators_file)
    if args.input is None:
        raise CliError("transform needs a questions file (positional or config key 'input')")
    src = Path(args.input)
    questions = [RawQuestion.from_dict(r) for r in read_jsonl(src)]
    dataset, warnings = transform_questions(questions, t, _styles(args.styles), ruleset)
    out = Path(args.output_file)
    write_jsonl(out, (inst.to_dict() for inst in dataset))
    print(distribution_summary(dataset, t))
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.manifest:
        _write_manifest(
            out,
            RunManifest(
                run_id=_config_id("transform", asdict(t), file_sha256(src)),
                command="transform",
                config={**asdict(t), "styles": args.styles, "empty_bins": [str(w) for w in warnings]},
                seeds={"seed": t.seed},
                inputs=_hashes([src]),
                outputs=_hashes([out]),
            ),
        )
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    entries = load_corpus(args.corpus)
    failed = 0
    for e in entries:
        report = validate_template(e.template, e.program, e.answer, e.problem_id)
        status = "ok" if report.ok else "FAIL"
        print(f"{e.problem_id}: {status}" + ("" if report.ok else "  " + "; ".join(report.messages)))
        failed += not report.ok
    print(f"{len(entries) - failed}/{len(entries)} templates pass")
    return EXIT_INVALID if failed and args.strict else EXIT_OK


def cmd_mutate(args: argparse.Namespace) -> int:
    cfg = SamplerConfig(
        min_value=args.min_value,
        max_value=args.max_value,
        max_iter=args.max_iter,
        mutations_per_problem=args.mutations_per_problem,
        seed=args.seed,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise CliError(str(exc)) from None
    entries = load_corpus(args.corpus)
    instances, mutations, reports = mutate_corpus(entries, cfg, _styles(args.styles))
    out = Path(args.output_file)
    write_jsonl(out, (inst.to_dict() for inst in instances))
    outputs = [out]
    if args.mutations_output:
        mpath = Path(args.mutations_output)
        write_jsonl(mpath, (m.to_dict() for m in mutations))
        outputs.append(mpath)
    kept = sum(r.ok for r in reports)
    print(f"{kept}/{len(reports)} problems pass the sanity checks; {len(mutations)} mutations, {len(instances)} instances")
    if args.manifest:
        _write_manifest(
            out,
            RunManifest(
                run_id=_config_id("mutate", asdict(cfg), args.styles),
                command="mutate",
                config={**asdict(cfg), "styles": args.styles, "corpus": args.corpus or "builtin",
                        "failed": [r.to_dict() for r in reports if not r.ok]},
                seeds={"seed": cfg.seed},
                inputs=_hashes([Path(args.corpus)] if args.corpus else []),
                outputs=_hashes(outputs),
            ),
        )
    return EXIT_OK


def cmd_join(args: argparse.Namespace) -> int:
    collections = [list(read_jsonl(p)) for p in args.inputs]
    shared = shared_problem_ids(collections)
    out = Path(args.output_file)
    n = write_jsonl(out, (r for r in collections[0] if str(r["problem_id"]) in shared))
    print(f"{len(shared)} shared problems; {n} records written")
    return EXIT_OK


def _endpoint(args: argparse.Namespace) -> EndpointConfig | None:
    data = {}
    if getattr(args, "endpoint_config", None):
        data = json.loads(Path(args.endpoint_config).read_text(encoding="utf-8"))
    for key in ("base_url", "model_name", "max_tokens", "temperature", "max_concurrency", "max_retries"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if not data:
        return None
    try:
        cfg = EndpointConfig.from_dict(data)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise CliError(f"endpoint config: {exc}") from None
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    dataset = Path(args.dataset)
    instances = _load_instances(dataset)
    if args.limit is not None:
        instances = instances[: args.limit]
    mock = endpoint = None
    if args.mock:
        mock = MockReasonerConfig(p=args.p, error_mode=args.error_mode, seed=args.seed)
        try:
            mock.validate()
        except ValueError as exc:
            raise CliError(str(exc)) from None
    else:
        endpoint = _endpoint(args)
        if endpoint is None:
            raise CliError("give --mock or an endpoint (--endpoint-config / --base-url)")
    backend_cfg = asdict(mock) if mock else {k: v for k, v in endpoint.to_dict().items() if k != "extra_body"}
    run_id = args.run_id or "run-" + _config_id(file_sha256(dataset), backend_cfg, args.limit)
    store = ResponseStore(args.store)
    summary = run_dataset(
        instances,
        store,
        run_id,
        endpoint=endpoint,
        mock=mock,
        ruleset=_ruleset(args.operators_file, full=True),
        overwrite=args.overwrite,
    )
    print(f"run {run_id}: {summary.answered} answered, {summary.skipped} skipped, {summary.failed} failed")
    if args.manifest:
        _write_manifest(
            Path(args.store),
            RunManifest(
                run_id=run_id,
                command="run",
                config={"backend": backend_cfg, "summary": summary.to_dict(), "overwrite": args.overwrite},
                seeds={"seed": args.seed},
                inputs=_hashes([dataset]),
                outputs=_hashes([Path(args.store)]),
            ),
        )
    return EXIT_PARTIAL if summary.failed else EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    dataset = Path(args.dataset)
    instances = _load_instances(dataset)
    store = ResponseStore(args.store)
    endpoint = _endpoint(args) if args.backend != "pattern" else None
    cache = ExtractionCache(args.cache) if args.cache else ExtractionCache()
    try:
        scored = score_responses(
            instances,
            store.records(),
            run_id=args.run_id,
            backend=args.backend,
            endpoint=endpoint,
            cache=cache,
            rel_tol=args.rel_tol,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None
    out = Path(args.output_file)
    write_jsonl(out, (s.to_dict() for s in scored))
    unscored = sum(s.status != "scored" for s in scored)
    print(f"{len(scored) - unscored} scored, {unscored} unscored")
    if args.manifest:
        _write_manifest(
            out,
            RunManifest(
                run_id=args.run_id or "",
                command="score",
                config={"backend": args.backend, "rel_tol": args.rel_tol, "unscored": unscored},
                seeds={},
                inputs=_hashes([dataset, Path(args.store)]),
                outputs=_hashes([out]),
            ),
        )
    return EXIT_PARTIAL if unscored else EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    scored = [ScoredInstance.from_dict(r) for r in read_jsonl(args.scored)]
    if args.style:
        scored = [s for s in scored if s.style == args.style]
    records = flatten_records(scored)
    if not records:
        raise CliError("no scored records to report on")
    unscored = sum(s.status != "scored" for s in scored)
    report = build_report(
        records,
        coverage_items(scored),
        problem_accuracies(scored),
        min_ratio=args.min_ratio,
        reference_prefix=args.reference_prefix,
        metadata={"source": str(args.scored), "unscored_instances": unscored, "style": args.style or "all"},
    )
    paths = write_report(report, args.output_dir, label=args.label)
    pts = ", ".join(f"hop {p.x}: {p.mean:.4f}" for p in report.dc_by_hop.points)
    print(f"DC by hop: {pts}")
    print(f"coverage {report.coverage:.4f}  base {report.base:.4f}  decay {report.decay:.5f}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1 like other invalid input; argparse would use 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dedcons", description="Deductive-consistency evaluation toolkit.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON file of option values (command-line flags win)")
        _flag(p, "--no_manifest", dest="manifest", action="store_false", help="skip the run manifest")

    p = sub.add_parser("generate", help="sample graphs and fixed-hop questions")
    common(p)
    _flag(p, "--num_graphs", type=int, default=100)
    _flag(p, "--m", type=int, default=60, help="nodes per graph")
    _flag(p, "--num_inputs", type=int, default=3)
    _flag(p, "--unary_ratio", type=float, default=0.0)
    _flag(p, "--logic_mode", default=None, help="accepted for compatibility; no effect")
    _flag(p, "--naming_mode", default="noun", choices=["noun", "symbolic"])
    _flag(p, "--nouns", default=None, help="JSON list of node names (default: built-in list)")
    _flag(p, "--operators_file", default=None, help="rule-set JSON (default: add/subtract)")
    _flag(p, "--output_file", default="output.jsonl")
    _flag(p, "--max_hops", type=int, default=24)
    _flag(p, "--max_graphs", type=int, default=4000, help="questions kept per hop")
    _flag(p, "--min_value", type=int, default=1)
    _flag(p, "--max_value", type=int, default=10)
    _flag(p, "--seed", type=int, default=0)
    _flag(p, "--workers", type=int, default=1)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("transform", help="add prefixes and balance (hop, prefix) bins")
    common(p)
    p.add_argument("input", nargs="?", help="questions JSONL from generate")
    _flag(p, "--max_hops", type=int, default=12)
    _flag(p, "--max_items", type=int, default=120, help="instances per hop")
    _flag(p, "--max_prefixes", type=int, default=12)
    _flag(p, "--max_prefix_length", type=int, default=None)
    _flag(p, "--styles", default="original", help="comma list or 'all'")
    _flag(p, "--operators_file", default=None)
    _flag(p, "--output_file", default="transformed.jsonl")
    _flag(p, "--seed", type=int, default=0)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("validate", help="run the template sanity checks")
    common(p)
    _flag(p, "--corpus", default=None, help="template corpus JSONL (default: built-in fixtures)")
    _flag(p, "--strict", action="store_true", help="exit 1 if any template fails")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("mutate", help="sample mutated benchmark problems")
    common(p)
    _flag(p, "--corpus", default=None)
    _flag(p, "--output_file", default="mutated.jsonl")
    _flag(p, "--mutations_output", default=None, help="also write one record per mutation")
    _flag(p, "--min_value", type=int, default=1)
    _flag(p, "--max_value", type=int, default=100)
    _flag(p, "--max_iter", type=int, default=100)
    _flag(p, "--mutations_per_problem", type=int, default=10)
    _flag(p, "--styles", default="original")
    _flag(p, "--seed", type=int, default=0)
    p.set_defaults(func=cmd_mutate)

    p = sub.add_parser("join", help="keep records whose problem id is in every input")
    common(p)
    p.add_argument("inputs", nargs="+")
    _flag(p, "--output_file", required=True)
    p.set_defaults(func=cmd_join)

    def endpoint_flags(p: argparse.ArgumentParser) -> None:
        _flag(p, "--endpoint_config", default=None, help="JSON endpoint settings")
        _flag(p, "--base_url", default=None)
        _flag(p, "--model_name", default=None)
        _flag(p, "--max_tokens", type=int, default=None)
        _flag(p, "--temperature", type=float, default=None)
        _flag(p, "--max_concurrency", type=int, default=None)
        _flag(p, "--max_retries", type=int, default=None)

    p = sub.add_parser("run", help="collect responses from an endpoint or the mock reasoner")
    common(p)
    _flag(p, "--dataset", required=True)
    _flag(p, "--store", required=True)
    _flag(p, "--run_id", default=None)
    _flag(p, "--mock", action="store_true")
    _flag(p, "--p", type=float, default=0.0, help="mock per-step error rate")
    _flag(p, "--error_mode", default="perturb-value", choices=["perturb-value", "propagate", "independent"])
    _flag(p, "--seed", type=int, default=0)
    _flag(p, "--limit", type=int, default=None)
    _flag(p, "--overwrite", action="store_true")
    _flag(p, "--operators_file", default=None)
    endpoint_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("score", help="extract values and score stored responses")
    common(p)
    _flag(p, "--dataset", required=True)
    _flag(p, "--store", required=True)
    _flag(p, "--run_id", default=None)
    _flag(p, "--output_file", default="scored.jsonl")
    _flag(p, "--backend", default="auto", choices=["auto", "pattern", "lm"])
    _flag(p, "--rel_tol", type=float, default=0.05)
    _flag(p, "--cache", default=None, help="extraction cache JSONL")
    endpoint_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="compute metrics and write tables")
    common(p)
    _flag(p, "--scored", required=True)
    _flag(p, "--output_dir", default="report")
    _flag(p, "--min_ratio", type=float, default=0.2)
    _flag(p, "--reference_prefix", type=int, default=1)
    _flag(p, "--style", default=None, help="restrict to one style")
    _flag(p, "--label", default="model")
    p.set_defaults(func=cmd_report)
    return ap


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` become defaults that explicit flags override."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("command", nargs="?")
    known, _ = pre.parse_known_args(argv)
    subparsers = parser._subparsers._group_actions[0].choices  # noqa: SLF001
    if known.config and known.command in subparsers:
        try:
            config = json.loads(Path(known.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"config {known.config}: {exc}") from None
        if not isinstance(config, dict):
            raise CliError(f"config {known.config}: expected a JSON object")
        sub = subparsers[known.command]
        actions = {a.dest: a for a in sub._actions}  # noqa: SLF001
        unknown = sorted(set(config) - set(actions))
        if unknown:
            raise CliError(f"unknown config keys: {unknown}")
        for key in config:
            actions[key].required = False
        sub.set_defaults(**config)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        handler: Callable[[argparse.Namespace], int] = args.func
        return handler(args)
    except (CliError, ConfigError, FileNotFoundError, MalformedRecord) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except KeyError as exc:
        print(f"error: malformed record, missing field {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
