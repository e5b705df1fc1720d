"""Command-line interface: benchmark runs, lexicon building, trace analysis."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backend import RemoteBackend, ToyBackend, ToyModelSpec
from .controller import GenerationConfig
from .harness import ModeSpec, count_trigger_words, load_dataset, run_benchmark, write_reports
from .lexicon import (
    DEFAULT_MIN_COUNT,
    Vocabulary,
    build_from_traces,
    build_trigger_set,
    default_trigger_words,
    load_trigger_config,
    write_frequency_csv,
)


def _build_backend(args: argparse.Namespace):
    spec = args.backend
    if spec.startswith("toy:"):
        return ToyBackend(ToyModelSpec.from_json_file(spec[len("toy:"):]))
    if spec == "remote":
        if not args.remote_vocab:
            raise SystemExit("--remote-vocab <file> is required with --backend remote")
        vocab = Vocabulary.from_json_file(args.remote_vocab)
        return RemoteBackend(vocab=vocab, eos_token=args.remote_eos)
    raise SystemExit(f"unknown backend {spec!r} (expected toy:<spec.json> or remote)")


def _parse_seeds(args: argparse.Namespace) -> list[int]:
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    else:
        seeds = list(range(args.reps))
    if args.reps != len(seeds):
        raise SystemExit(f"--reps {args.reps} does not match {len(seeds)} seeds")
    return seeds


def cmd_run(args: argparse.Namespace) -> int:
    backend = _build_backend(args)
    problems = load_dataset(args.dataset)
    modes = [ModeSpec.parse(m) for m in (args.mode or ["vanilla", "cgrs"])]
    config = GenerationConfig(
        temperature=args.temperature,
        top_p=args.top_p,
        delta=args.delta,
        max_tokens=args.max_tokens,
    )
    trigger_words = (
        load_trigger_config(args.trigger_config)[0]
        if args.trigger_config
        else default_trigger_words()
    )
    seeds = _parse_seeds(args)
    reports = run_benchmark(
        problems,
        backend,
        modes,
        config,
        seeds,
        trigger_words=trigger_words,
        dataset_name=Path(args.dataset).stem,
        parallelism=args.parallelism,
    )
    paths = write_reports(reports, args.out)
    print(f"dataset={Path(args.dataset).stem} problems={len(problems)} reps={len(seeds)}")
    print(f"{'mode':<16}{'acc':>8}{'len':>10}{'lr':>8}")
    for label in sorted(reports):
        r = reports[label]
        lr = "-" if r.length_reduction is None else f"{r.length_reduction:.1f}"
        print(f"{label:<16}{r.accuracy:>8.1f}{r.mean_length:>10.1f}{lr:>8}")
    print("wrote: " + ", ".join(str(p) for p in paths))
    return 0


def _load_trace_files(traces_dir: Path) -> list[list[int]]:
    traces: list[list[int]] = []
    for path in sorted(traces_dir.glob("*.json")) + sorted(traces_dir.glob("*.jsonl")):
        if path.suffix == ".json":
            data = json.loads(path.read_text(encoding="utf-8"))
            rows = data if data and isinstance(data[0], list) else [data]
            traces.extend([int(t) for t in row] for row in rows)
        else:
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        traces.append([int(t) for t in json.loads(line)])
    return traces


def cmd_lexicon_build(args: argparse.Namespace) -> int:
    vocab = Vocabulary.from_json_file(args.vocab)
    traces = _load_trace_files(Path(args.traces))
    if args.config:
        words, config_min = load_trigger_config(args.config)
        min_count = args.min_count if args.min_count is not None else config_min
    else:
        words = default_trigger_words()
        min_count = args.min_count if args.min_count is not None else DEFAULT_MIN_COUNT
    trigger_set, counts = build_from_traces(traces, vocab, words, min_count)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    triggers_path = out / "triggers.json"
    triggers_path.write_text(
        json.dumps(trigger_set.to_json_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    csv_path = out / "frequencies.csv"
    # report all candidates, not only the kept ones, so dropped words show why
    write_frequency_csv(csv_path, build_trigger_set(words, vocab), counts)
    print(
        f"traces={len(traces)} candidates={len(counts)} kept={len(trigger_set)} "
        f"min_count={min_count}"
    )
    print(f"wrote: {triggers_path}, {csv_path}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    data = json.loads(Path(args.trace).read_text(encoding="utf-8"))
    base_words = [w.base for w in default_trigger_words()]
    if "length_distribution" in data:  # a mode report
        lengths = data["length_distribution"]
        print("metric,value")
        print(f"mode,{data.get('mode', '?')}")
        print(f"runs,{len(lengths)}")
        if lengths:
            print(f"mean_length,{sum(lengths) / len(lengths):.2f}")
            print(f"min_length,{min(lengths)}")
            print(f"max_length,{max(lengths)}")
        print()
        print("trigger_word,count")
        for word, count in sorted(data.get("trigger_frequencies", {}).items()):
            print(f"{word},{count}")
        return 0
    # a single decode trace
    counts = count_trigger_words([data.get("text", "")], base_words)
    print("metric,value")
    print(f"token_count,{data.get('token_count', len(data.get('tokens', [])))}")
    print(f"checkpoints,{len(data.get('checkpoint_events', []))}")
    print(f"truncated,{data.get('truncated', False)}")
    certainties = [
        e["probe"]["certainty"]["value"] for e in data.get("checkpoint_events", [])
    ]
    if certainties:
        print(f"final_certainty,{certainties[-1]:.6f}")
        print(f"final_p,{data['checkpoint_events'][-1]['p_after']:.6f}")
    print()
    print("trigger_word,count")
    for word, count in sorted(counts.items()):
        print(f"{word},{count}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cgrs",
        description="Certainty-guided reflection suppression: benchmark and analyze runs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a dataset under one or more decoding modes")
    run.add_argument("--dataset", required=True, help="JSONL problems file")
    run.add_argument("--backend", required=True, help="toy:<spec.json> or remote")
    run.add_argument(
        "--mode",
        action="append",
        help="vanilla | fixed-p=<p> | cgrs (repeatable; default vanilla + cgrs)",
    )
    run.add_argument("--delta", type=float, default=0.9)
    run.add_argument("--temperature", type=float, default=0.6)
    run.add_argument("--top-p", type=float, default=0.95, dest="top_p")
    run.add_argument("--seeds", help="comma-separated repetition seeds")
    run.add_argument("--reps", type=int, default=3)
    run.add_argument("--max-tokens", type=int, default=1024, dest="max_tokens")
    run.add_argument("--trigger-config", help="trigger config JSON")
    run.add_argument("--parallelism", type=int, default=1)
    run.add_argument("--remote-vocab", help="vocabulary file of the served tokenizer")
    run.add_argument("--remote-eos", help="eos token surface in the remote vocabulary")
    run.add_argument("--out", required=True, help="report output directory")
    run.set_defaults(func=cmd_run)

    lexicon = sub.add_parser("lexicon", help="trigger lexicon tools")
    lex_sub = lexicon.add_subparsers(dest="lexicon_command", required=True)
    build = lex_sub.add_parser("build", help="build a trigger set from traces")
    build.add_argument("--traces", required=True, help="directory of token-id trace files")
    build.add_argument("--vocab", required=True, help="vocabulary JSON file")
    build.add_argument("--min-count", type=int, default=None, dest="min_count")
    build.add_argument("--config", help="trigger config JSON (defaults to built-ins)")
    build.add_argument("--out", default=".", help="output directory")
    build.set_defaults(func=cmd_lexicon_build)

    analyze = sub.add_parser("analyze", help="summarize a trace or report JSON")
    analyze.add_argument("--trace", required=True, help="DecodeTrace or report JSON file")
    analyze.set_defaults(func=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
