#!/usr/bin/env python
"""
Keyword-Constrained Decoding CLI

Build and inspect keyword indexes, sample keywords with DISC against any
model backend, evaluate exact oracles and run the PPV/trie benchmarks.
Machine-readable output goes to stdout as CSV; diagnostics go to stderr.

Usage:
    cdk build-index --keywords FILE --out FILE [--bucket-policy {pow2,single}] [--vocab-size N]
    cdk inspect --index FILE
    cdk verify --index FILE --prefix "1" [--tokens "0 3 4"]
    cdk sample --index FILE --model SELECTOR [--K 4] [--M 50] [--temp 1] [--mode eok] [--draws N] [--seed S]
    cdk evaluate --index FILE --model tabular:FILE [--K 1,2,3,4] [--draws N]
    cdk worst-case --p-b 0.5 --eps 0.1
    cdk bench [--kind verify|load|all|quality] [--sizes 1e3,1e4|full] [--M 50,100]
    cdk serve --model SELECTOR [--index FILE] [--listen HOST:PORT]

Examples:
    cdk build-index --keywords config/keywords/shopping.txt --out shopping.idx
    cdk sample --index shopping.idx --model shopping --draws 5 --seed 7
    cdk evaluate --index worst.idx --model worst-case --K 1,2,3
"""

import argparse
import csv
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from bench.harness import bench_load, bench_verify, quality_sweep, write_quality, write_reports
from bench.synthetic import split_sizes
from core.errors import DecodingError, UsageError
from core.tokens import format_tokens, parse_tokens
from corpus.constraint_set import load_keywords
from corpus.index import BUCKET_POLICIES, SortedIndex, build_index, get_bucket_policy
from corpus.index_io import load_index, save_index
from models.base import LanguageModel, TerminationMode
from models.external import ExternalModelClient, make_tcp_server, serve_lines
from models.model_manager import ModelManager, close_models
from models.tabular import worst_case_model
from oracle.divergence import (
    bias_reference,
    disc_kl_bound,
    empirical_distribution,
    expected_steps,
    expected_steps_ceiling,
    kl,
    total_variation,
    worst_case_kl,
)
from oracle.exact import exact_cd, exact_disc, exact_target, p_bad
from sampler.config import DiscConfig
from sampler.disc import DiscSampler, spawn_generators
from utils.config import RunConfig, parse_k, resolve_config, resolve_path
from verifier.ppv import ppv_verify

logger = logging.getLogger("cdk")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
FULL_SWEEP = (10**3, 10**4, 10**5, 10**6)
SAMPLE_FIELDS = ("draw", "sequence", "log_importance", "rounds_used", "total_draws", "accepted_by")
EVALUATE_FIELDS = (
    "K", "p_bad", "kl_exact", "bound", "expected_steps", "steps_ceiling",
    "empirical_mean_rounds", "empirical_mean_draws", "empirical_tv", "status",
)


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit status 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(UsageError.exit_code, f"{self.prog}: error: {message}\n")


def fmt(value: float) -> str:
    return f"{value:.17g}"


def parse_list(text: str, convert=int) -> List:
    try:
        return [convert(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list, got {text!r}") from None


def open_output(path: Optional[str]):
    return open(path, "w", newline="") if path else sys.stdout


def describe_index(idx: SortedIndex, out):
    out.write(f"keywords: {len(idx)}\n")
    out.write(f"vocab_size: {idx.vocab_size}\n")
    out.write(f"prefix_free: {str(idx.prefix_free).lower()}\n")
    out.write("buckets (width,count,min_len,max_len):\n")
    for b in idx.describe():
        out.write(f"  {b['width']},{b['count']},{b['min_len']},{b['max_len']}\n")


def load_model(manager: ModelManager, selector: str, idx: SortedIndex) -> LanguageModel:
    model = manager.get_model(selector, idx.vocab_size, idx.max_len + 1)
    if model.vocab_size != idx.vocab_size:
        raise UsageError(f"model vocabulary {model.vocab_size} does not match index vocabulary {idx.vocab_size}")
    return model


def termination_mode(run: RunConfig, model: LanguageModel) -> Optional[TerminationMode]:
    """The configured mode, else the one the model declares, else the index default."""
    return run.mode if run.mode is not None else model.mode


def sampler_config(args, run: RunConfig, idx: SortedIndex, model: LanguageModel, **overrides) -> DiscConfig:
    # the configured M is capped at the vocabulary unless given explicitly
    M = args.M if getattr(args, "M", None) is not None else min(run.M, idx.vocab_size)
    params = dict(K=run.K, M=M, temperature=run.temperature, seed=run.seed)
    params.update(overrides)
    return DiscConfig.for_index(idx, termination_mode(run, model), **params)


def cmd_build_index(args, run: RunConfig, config: Dict[str, Any]) -> int:
    constraints = load_keywords(resolve_path(args.keywords), args.vocab_size)
    idx = build_index(constraints, get_bucket_policy(run.bucket_policy))
    save_index(idx, args.out)
    describe_index(idx, sys.stdout)
    return 0


def cmd_inspect(args, run: RunConfig, config: Dict[str, Any]) -> int:
    describe_index(load_index(args.index), sys.stdout)
    return 0


def cmd_verify(args, run: RunConfig, config: Dict[str, Any]) -> int:
    idx = load_index(args.index)
    try:
        prefix = parse_tokens(args.prefix)
        candidates = parse_tokens(args.tokens) if args.tokens is not None else tuple(range(idx.vocab_size))
    except ValueError:
        raise UsageError("prefix and tokens must be space-separated token ids") from None
    mask = ppv_verify(idx, prefix, candidates)
    print(mask.format(candidates))
    return 0


def cmd_sample(args, run: RunConfig, config: Dict[str, Any]) -> int:
    idx = load_index(args.index)
    manager = ModelManager(timeout=run.model_timeout, concentration=run.seeded_concentration)
    model = load_model(manager, args.model, idx)
    sampler = DiscSampler(model, idx, sampler_config(args, run, idx, model))
    workers = run.workers
    if isinstance(model, ExternalModelClient) and workers > 1:
        logger.warning("External models serve one request at a time; sampling with one worker")
        workers = 1
    generators = spawn_generators(run.seed, run.draws)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(sampler.disc_sample, generators))
    out = open_output(args.out)
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(SAMPLE_FIELDS)
        for i, o in enumerate(outcomes):
            writer.writerow([i, format_tokens(o.sequence), fmt(o.log_importance), o.rounds_used, o.total_draws, o.accepted_by.value])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_evaluate(args, run: RunConfig, config: Dict[str, Any]) -> int:
    idx = load_index(args.index)
    constraints = idx.to_constraint_set()
    model = load_model(ModelManager(), args.model, idx)
    ks = [parse_k(k) for k in args.ks.split(",")] if args.ks else [parse_k(k) for k in config["evaluate"]["ks"]]
    draws = args.draws if args.draws is not None else int(config["evaluate"]["draws"])
    base = DiscConfig.exact(idx, termination=termination_mode(run, model), temperature=run.temperature, seed=run.seed)
    mode = base.termination

    pb = max(p_bad(model, constraints, mode, run.temperature), 0.0)
    target = exact_target(model, constraints, mode, run.temperature)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        target.save(Path(args.out) / "target.tsv")

    rows = []
    for K in ks:
        disc = exact_disc(model, constraints, K, mode, run.temperature)
        divergence = kl(target, disc)
        bound = disc_kl_bound(pb, K)
        row = {
            "K": "inf" if K is None else K,
            "p_bad": fmt(pb),
            "kl_exact": fmt(divergence),
            "bound": fmt(bound),
            "expected_steps": fmt(expected_steps(pb, K)),
            "steps_ceiling": fmt(expected_steps_ceiling(pb)),
            "empirical_mean_rounds": "",
            "empirical_mean_draws": "",
            "empirical_tv": "",
            "status": "PASS" if divergence <= bound + 1e-12 else "FAIL",
        }
        if draws:
            sampler = DiscSampler(model, idx, base.with_k(K))
            outcomes = [sampler.disc_sample(rng) for rng in spawn_generators(run.seed, draws)]
            row["empirical_mean_rounds"] = fmt(sum(o.rounds_used for o in outcomes) / draws)
            row["empirical_mean_draws"] = fmt(sum(o.total_draws for o in outcomes) / draws)
            row["empirical_tv"] = fmt(total_variation(target, empirical_distribution(o.sequence for o in outcomes)))
        if args.out:
            disc.save(Path(args.out) / f"disc_K{row['K']}.tsv")
        rows.append(row)

    writer = csv.DictWriter(sys.stdout, fieldnames=EVALUATE_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return 0 if all(r["status"] == "PASS" for r in rows) else 1


def cmd_worst_case(args, run: RunConfig, config: Dict[str, Any]) -> int:
    model, constraints = worst_case_model(args.p_b, args.eps)
    target = exact_target(model, constraints)
    cd = exact_cd(model, constraints)
    out = sys.stdout
    out.write("keyword\tP_S\tP_CD\n")
    for seq in constraints.sorted():
        out.write(f"{model.vocab.decode(seq)}\t{fmt(target[seq])}\t{fmt(cd[seq])}\n")
    out.write(f"closed_form_kl\t{fmt(worst_case_kl(args.p_b, args.eps))}\n")
    out.write(f"generic_kl\t{fmt(kl(target, cd))}\n")
    out.write(f"bias_reference\t{fmt(bias_reference(args.p_b))}\n")
    return 0


def cmd_bench(args, run: RunConfig, config: Dict[str, Any]) -> int:
    bench = config["bench"]
    if args.sizes == "full":
        sizes = FULL_SWEEP
    elif args.sizes:
        sizes = split_sizes(args.sizes)
    else:
        sizes = tuple(int(s) for s in bench["sizes"])
    ms = parse_list(args.ms) if args.ms else [int(m) for m in bench["ms"]]
    queries = args.queries if args.queries is not None else int(bench["queries"])
    vocab_size = int(bench["vocab_size"])
    out = open_output(args.out)
    try:
        if args.kind == "quality":
            if not (args.index and args.model):
                raise UsageError("quality sweeps need --index and --model")
            idx = load_index(args.index)
            model = load_model(ModelManager(), args.model, idx)
            ks = [parse_k(k) for k in args.ks.split(",")] if args.ks else [parse_k(k) for k in config["evaluate"]["ks"]]
            rows = quality_sweep(model, idx.to_constraint_set(), ks, ms, run.draws, run.seed, termination_mode(run, model))
            write_quality(rows, out)
            return 0
        reports = []
        if args.kind in ("verify", "all"):
            backends = tuple(args.backends.split(","))
            reports += bench_verify(sizes, ms, backends, queries, run.seed, vocab_size, run.bucket_policy)
        if args.kind in ("load", "all"):
            reports += bench_load(sizes, run.seed, vocab_size)
        write_reports(reports, out)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0 if all(r.status == "ok" for r in reports) else 1


def cmd_serve(args, run: RunConfig, config: Dict[str, Any]) -> int:
    manager = ModelManager(concentration=run.seeded_concentration)
    if args.index:
        idx = load_index(args.index)
        model = load_model(manager, args.model, idx)
    else:
        model = manager.get_model(args.model, args.vocab_size, args.max_len)
    if not args.listen:
        serve_lines(model, sys.stdin.buffer, sys.stdout.buffer)
        return 0
    host, _, port = args.listen.rpartition(":")
    if not port.isdigit():
        raise UsageError(f"--listen needs HOST:PORT, got {args.listen!r}")
    server = make_tcp_server(model, host or "127.0.0.1", int(port))
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="cdk", description="Keyword-constrained decoding with PPV and DISC")
    parser.add_argument("--config", help="YAML or JSON config file (default: $CDK_CONFIG)")
    parser.add_argument("--log-level", dest="log_level", help="Logging level (default: WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_sampling(p, k_help="Acceptance rounds, or 'inf' (default: 4)"):
        p.add_argument("--K", dest="K", help=k_help)
        p.add_argument("--M", dest="M", type=int, help="Top candidates verified per step (default: 50, capped at the vocabulary)")
        p.add_argument("--temp", dest="temperature", type=float, help="Model temperature (default: 1.0)")
        p.add_argument("--mode", choices=[m.value for m in TerminationMode],
                       help="Termination (default: prefixfree for prefix-free sets, else eok)")
        p.add_argument("--seed", type=int, help="Random seed (default: 0)")

    p = sub.add_parser("build-index", help="Build a binary index from a keyword file")
    p.add_argument("--keywords", required=True, help="One keyword per line, space-separated token ids")
    p.add_argument("--out", required=True, help="Index file to write")
    p.add_argument("--bucket-policy", dest="bucket_policy", choices=sorted(BUCKET_POLICIES), help="Length bucketing (default: pow2)")
    p.add_argument("--vocab-size", dest="vocab_size", type=int, help="Vocabulary size (default: largest token + 1)")
    p.set_defaults(handler=cmd_build_index)

    p = sub.add_parser("inspect", help="Print keyword count, buckets and prefix-freeness of an index")
    p.add_argument("--index", required=True)
    p.set_defaults(handler=cmd_inspect)

    p = sub.add_parser("verify", help="Verify candidate tokens after a prefix")
    p.add_argument("--index", required=True)
    p.add_argument("--prefix", default="", help="Space-separated token ids (default: empty)")
    p.add_argument("--tokens", help="Candidate token ids (default: whole vocabulary)")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("sample", help="Sample keywords with DISC, one CSV row per draw")
    p.add_argument("--index", required=True)
    p.add_argument("--model", required=True, help="tabular:<path>, seeded:<seed>, external:<endpoint> or a preset")
    add_sampling(p)
    p.add_argument("--draws", type=int, help="Number of draws (default: 1)")
    p.add_argument("--workers", type=int, help="Parallel draws (default: 1)")
    p.add_argument("--out", help="CSV file (default: stdout)")
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("evaluate", help="Exact KL, bound and expected steps per K")
    p.add_argument("--index", required=True)
    p.add_argument("--model", required=True, help="A tabular model selector or preset")
    p.add_argument("--K", dest="ks", help="Comma-separated K values (default: 1,2,3,4)")
    p.add_argument("--temp", dest="temperature", type=float, help="Model temperature (default: 1.0)")
    p.add_argument("--mode", choices=[m.value for m in TerminationMode])
    p.add_argument("--draws", type=int, help="Monte Carlo draws per K, 0 to skip (default: 10000)")
    p.add_argument("--seed", type=int, help="Random seed (default: 0)")
    p.add_argument("--out", help="Directory for exact distribution exports")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("worst-case", help="Report the two-token worst case for constrained decoding")
    p.add_argument("--p-b", dest="p_b", type=float, required=True, help="Mass outside the keyword set, in (0, 1)")
    p.add_argument("--eps", type=float, required=True, help="P(v1 | v2), in (0, 1)")
    p.set_defaults(handler=cmd_worst_case)

    p = sub.add_parser("bench", help="PPV vs trie benchmarks or a DISC quality sweep")
    p.add_argument("--kind", choices=("verify", "load", "all", "quality"), default="all")
    p.add_argument("--sizes", help="Comma-separated set sizes, or 'full' for 1e3..1e6 (default: 1e3,1e4)")
    p.add_argument("--M", dest="ms", help="Comma-separated M values (default: 50,100,500,1000)")
    p.add_argument("--backends", default="ppv,trie")
    p.add_argument("--queries", type=int, help="Queries per scenario (default: 10000)")
    p.add_argument("--bucket-policy", dest="bucket_policy", choices=sorted(BUCKET_POLICIES))
    p.add_argument("--index", help="Index for quality sweeps")
    p.add_argument("--model", help="Tabular model for quality sweeps")
    p.add_argument("--K", dest="ks", help="K values for quality sweeps (default: 1,2,3,4)")
    p.add_argument("--draws", type=int, help="Draws per quality row")
    p.add_argument("--mode", choices=[m.value for m in TerminationMode])
    p.add_argument("--seed", type=int, help="Random seed (default: 0)")
    p.add_argument("--out", help="CSV file (default: stdout)")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("serve", help="Serve a model over the line-delimited JSON protocol")
    p.add_argument("--model", required=True)
    p.add_argument("--index", help="Index giving vocabulary size and max_len")
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--listen", help="HOST:PORT to accept TCP connections (default: stdio)")
    p.set_defaults(handler=cmd_serve)
    return parser


def setup_logging(level: str):
    logging.basicConfig(level=getattr(logging, level.upper(), logging.WARNING), format=LOG_FORMAT, stream=sys.stderr, force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return its exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else UsageError.exit_code
    overrides = {
        key: getattr(args, key, None)
        for key in ("M", "temperature", "mode", "draws", "seed", "bucket_policy", "workers", "log_level")
    }
    overrides["K"] = getattr(args, "K", None)
    try:
        config = resolve_config(args.config, overrides)
        run = RunConfig.from_dict(config)
        setup_logging(run.log_level)
        return args.handler(args, run, config)
    except DecodingError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    finally:
        close_models()


if __name__ == "__main__":
    sys.exit(main())
