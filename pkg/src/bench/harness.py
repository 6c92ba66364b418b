"""PPV vs trie benchmarks and DISC quality sweeps.

Timings are wall-clock per query via ``time.perf_counter_ns``. Every
verify scenario checks that both backends produce identical masks before
it reports; a scenario that fails is reported with status ``failed`` and
empty timing columns.
"""

import csv
import logging
import tempfile
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, TextIO

import numpy as np

from bench.synthetic import DEFAULT_VOCAB_SIZE, synthetic_keywords, verify_workload
from corpus.constraint_set import ConstraintSet
from corpus.index import build_index, get_bucket_policy
from corpus.index_io import load_index, save_index
from models.base import TerminationMode
from models.tabular import TabularModel
from oracle.divergence import empirical_distribution, total_variation
from oracle.exact import exact_target
from sampler.config import DiscConfig
from sampler.disc import DiscSampler
from verifier.ppv import ComparisonCounter, ppv_verify, search_cost_bound
from verifier.trie import load_trie, save_trie, trie_build, trie_verify

logger = logging.getLogger(__name__)

CSV_FIELDS = (
    "scenario", "backend", "set_size", "M", "queries",
    "median_ns", "p95_ns", "load_ms", "comparisons_mean", "seed",
)
MIN_REPETITIONS = 20


@dataclass
class BenchReport:
    scenario: str
    backend: str
    set_size: int
    M: int
    queries: int
    median_ns: Optional[float] = None
    p95_ns: Optional[float] = None
    load_ms: Optional[float] = None
    comparisons_mean: Optional[float] = None
    seed: int = 0
    vocab_size: int = DEFAULT_VOCAB_SIZE
    status: str = "ok"

    def row(self) -> dict:
        values = asdict(self)
        return {k: "" if values[k] is None else values[k] for k in CSV_FIELDS}


def _percentiles(latencies: Sequence[int]):
    if len(latencies) < MIN_REPETITIONS:
        return None, None
    median, p95 = np.percentile(np.asarray(latencies, dtype=np.float64), [50, 95])
    return float(median), float(p95)


def _failed(scenario: str, backend: str, size: int, M: int, seed: int, reason: str) -> BenchReport:
    logger.error(f"Scenario {scenario} ({backend}, |S|={size}, M={M}) failed: {reason}")
    return BenchReport(f"{scenario}:failed", backend, size, M, 0, seed=seed, status="failed")


def bench_verify(
    sizes: Iterable[int],
    ms: Iterable[int],
    backends: Sequence[str] = ("ppv", "trie"),
    queries: int = 10_000,
    seed: int = 0,
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    bucket_policy: str = "pow2",
) -> List[BenchReport]:
    """Per-query verification latency for each (|S|, M, backend).

    Args:
        sizes: Keyword set sizes.
        ms: Candidate counts per query.
        backends: Any of ``"ppv"`` and ``"trie"``.
        queries: Queries per scenario.
        seed: Seed for keyword sets and workloads.
        vocab_size: Synthetic vocabulary size.
        bucket_policy: Index bucketing policy.

    Returns:
        One report per scenario and backend, in sweep order.
    """
    reports: List[BenchReport] = []
    policy = get_bucket_policy(bucket_policy)
    ms = list(ms)
    for size in sizes:
        logger.info(f"Generating {size} synthetic keywords")
        s = synthetic_keywords(size, vocab_size, seed)
        idx = build_index(s, policy)
        trie = trie_build(s)
        for M in ms:
            scenario = f"verify-{size}-{M}"
            workload = verify_workload(s, queries, M, seed)
            counter = ComparisonCounter()
            timings = {"ppv": [], "trie": []}
            try:
                for q in workload:
                    query_counter = ComparisonCounter()
                    t0 = time.perf_counter_ns()
                    ppv_mask = ppv_verify(idx, q.prefix, q.candidates, query_counter)
                    t1 = time.perf_counter_ns()
                    trie_mask = trie_verify(trie, q.prefix, q.candidates)
                    t2 = time.perf_counter_ns()
                    if ppv_mask != trie_mask:
                        raise AssertionError(f"masks differ at prefix {list(q.prefix)}")
                    bound = len(q.candidates) * search_cost_bound(idx, len(q.prefix))
                    timings["ppv"].append(t1 - t0)
                    timings["trie"].append(t2 - t1)
                    if query_counter.comparisons > bound:
                        raise AssertionError("comparison count exceeds the binary-search bound")
                    counter.add(query_counter.comparisons, query_counter.candidates, 1)
            except Exception as e:
                reports.extend(_failed(scenario, b, size, M, seed, str(e)) for b in backends)
                continue
            for backend in backends:
                median, p95 = _percentiles(timings[backend])
                reports.append(BenchReport(
                    scenario, backend, size, M, len(workload), median, p95,
                    comparisons_mean=counter.mean_per_query if backend == "ppv" else None,
                    seed=seed, vocab_size=vocab_size,
                ))
            logger.info(f"Finished {scenario}")
    return reports


def bench_load(
    sizes: Iterable[int],
    seed: int = 0,
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    workdir: Optional[Path] = None,
    check_queries: int = 100,
) -> List[BenchReport]:
    """Time loading the binary index against loading the JSON trie.

    The loaded structures must answer ``check_queries`` sample queries
    identically before the timings are reported.
    """
    reports: List[BenchReport] = []
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        for size in sizes:
            scenario = f"load-{size}"
            s = synthetic_keywords(size, vocab_size, seed)
            index_path, trie_path = Path(tmp) / "index.bin", Path(tmp) / "trie.json"
            save_index(build_index(s), index_path)
            save_trie(trie_build(s), trie_path)
            try:
                t0 = time.perf_counter_ns()
                idx = load_index(index_path)
                t1 = time.perf_counter_ns()
                trie = load_trie(trie_path)
                t2 = time.perf_counter_ns()
                for q in verify_workload(s, check_queries, 50, seed):
                    if ppv_verify(idx, q.prefix, q.candidates) != trie_verify(trie, q.prefix, q.candidates):
                        raise AssertionError(f"loaded structures disagree at prefix {list(q.prefix)}")
            except Exception as e:
                reports.extend(_failed(scenario, b, size, 0, seed, str(e)) for b in ("ppv", "trie"))
                continue
            ppv_ms, trie_ms = (t1 - t0) / 1e6, (t2 - t1) / 1e6
            logger.info(f"{scenario}: index {ppv_ms:.1f} ms, trie {trie_ms:.1f} ms")
            reports.append(BenchReport(scenario, "ppv", size, 0, 0, load_ms=ppv_ms, seed=seed, vocab_size=vocab_size))
            reports.append(BenchReport(scenario, "trie", size, 0, 0, load_ms=trie_ms, seed=seed, vocab_size=vocab_size))
    return reports


def write_reports(reports: Iterable[BenchReport], out: TextIO):
    writer = csv.DictWriter(out, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for report in reports:
        writer.writerow(report.row())


@dataclass
class QualityRow:
    method: str
    K: str
    M: int
    draws: int
    tv: float
    mean_rounds: float
    mean_draws: float
    p_bad_empirical: Optional[float] = None


QUALITY_FIELDS = tuple(f.name for f in fields(QualityRow))


def quality_sweep(
    m: TabularModel,
    s: ConstraintSet,
    ks: Iterable[Optional[int]],
    ms: Iterable[int],
    draws: int,
    seed: int = 0,
    mode: Optional[TerminationMode] = None,
) -> List[QualityRow]:
    """Empirical TV distance to P_S for DISC over a (K, M) grid.

    Also reports the constrained-decoding baseline per M and an
    unconstrained reference whose in-set draws are exact samples of P_S;
    its ``p_bad_empirical`` is the fraction of draws outside S.

    Raises:
        EnumerationBudgetExceeded: From the exact target.
    """
    idx = build_index(s)
    base = DiscConfig.for_index(idx, mode if mode is not None else m.mode)
    target = exact_target(m, s, base.termination)
    ms = sorted({min(M, m.vocab_size) for M in ms})
    rows: List[QualityRow] = []

    def fmt_k(K):
        return "inf" if K is None else str(K)

    for M in ms:
        cfg = DiscConfig.for_index(idx, base.termination, M=M, K=None, seed=seed)
        sampler = DiscSampler(m, idx, cfg)
        rng = np.random.default_rng(seed)
        samples = [sampler.cd_sample(rng) for _ in range(draws)]
        rows.append(QualityRow("cd", "1", M, draws, total_variation(target, empirical_distribution(samples)), 1.0, 1.0))
        for K in ks:
            sampler = DiscSampler(m, idx, cfg.with_k(K))
            rng = np.random.default_rng(seed)
            outcomes = [sampler.disc_sample(rng) for _ in range(draws)]
            tv = total_variation(target, empirical_distribution(o.sequence for o in outcomes))
            rows.append(QualityRow(
                "disc", fmt_k(K), M, draws, tv,
                float(np.mean([o.rounds_used for o in outcomes])),
                float(np.mean([o.total_draws for o in outcomes])),
            ))
            logger.info(f"quality K={fmt_k(K)} M={M}: tv={tv:.4g}")

    sampler = DiscSampler(m, idx, DiscConfig.exact(idx, termination=base.termination))
    rng = np.random.default_rng(seed)
    vanilla = [sampler.vanilla_sample(rng) for _ in range(draws)]
    hits = [v.sequence for v in vanilla if v.in_set]
    tv = total_variation(target, empirical_distribution(hits)) if hits else 1.0
    rows.append(QualityRow("vanilla", "", m.vocab_size, draws, tv, 1.0, 1.0, 1.0 - len(hits) / draws))
    return rows


def write_quality(rows: Iterable[QualityRow], out: TextIO):
    writer = csv.DictWriter(out, fieldnames=QUALITY_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(asdict(row))
