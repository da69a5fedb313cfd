"""Seeded benchmark runs: sample, generate, score, persist."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import random
import re
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import requests

from kgsparql.agent import SessionAborted, SessionConfig, SessionTrace, run_session
from kgsparql.catalog import Catalog
from kgsparql.chat import ChatModel, TransportError
from kgsparql.evaluation import BenchmarkSample, EvalScore, ResultCache, score_sample
from kgsparql.sparql import SparqlClient
from kgsparql.toolbox import Toolbox

logger = logging.getLogger(__name__)

LAYOUT_VERSION = 1
DEFAULT_SAMPLES = 200

ModelFactory = Callable[[BenchmarkSample], tuple[ChatModel, ChatModel | None]]


class DatasetError(ValueError):
    pass


class EndpointUnreachable(RuntimeError):
    pass


def _qald_question(q: dict) -> str:
    texts = q.get("question")
    if isinstance(texts, str):
        return texts
    if isinstance(texts, list) and texts:
        for t in texts:
            if t.get("language") == "en":
                return t.get("string", "")
        return texts[0].get("string", "")
    raise KeyError("question")


def _sample_from_record(rec: dict, default_kg: str | None, where: str) -> BenchmarkSample:
    try:
        sparql = rec.get("sparql") or rec.get("query")
        if isinstance(sparql, dict):
            sparql = sparql.get("sparql")
        question = rec["question"] if isinstance(rec.get("question"), str) else _qald_question(rec)
        kg = rec.get("kg") or default_kg
        if not kg:
            raise KeyError("kg")
        return BenchmarkSample(str(rec["id"]), question, sparql or "", kg, rec.get("split"))
    except KeyError as e:
        raise DatasetError(f"{where}: missing field {e}") from None
    except ValueError as e:
        raise DatasetError(f"{where}: {e}") from None


def load_dataset(path: str | Path, default_kg: str | None = None) -> list[BenchmarkSample]:
    """Read line-delimited records (id, question, sparql[, kg, split]) or a QALD-style JSON file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetError(f"cannot read dataset {path}: {e}") from None
    samples: list[BenchmarkSample] = []
    try:
        data = json.loads(text)
    except ValueError:
        data = None
    if isinstance(data, list) or (isinstance(data, dict) and "questions" in data):
        records = data["questions"] if isinstance(data, dict) else data
        for i, rec in enumerate(records):
            samples.append(_sample_from_record(rec, default_kg, f"{path} record {i}"))
    else:
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except ValueError as e:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {e}") from None
            samples.append(_sample_from_record(rec, default_kg, f"{path}:{lineno}"))
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"{path}: duplicate sample ids")
    if not samples:
        raise DatasetError(f"{path}: no samples")
    return samples


def draw_samples(samples: Sequence[BenchmarkSample], n: int, seed: int) -> list[BenchmarkSample]:
    """Uniform sample of min(n, len) items, in dataset order."""
    picks = random.Random(seed).sample(range(len(samples)), min(n, len(samples)))
    return [samples[i] for i in sorted(picks)]


def session_seed(seed: int, sample_id: str) -> int:
    # independent of scheduling order, so parallel runs stay reproducible
    return int.from_bytes(hashlib.sha256(f"{seed}:{sample_id}".encode()).digest()[:8], "big")


def check_endpoints(catalog: Catalog, names: Sequence[str], timeout: float = 10.0) -> None:
    for name in sorted(set(names)):
        kg = catalog.lookup(name)
        try:
            requests.get(kg.endpoint, timeout=timeout, headers=dict(kg.headers))
        except requests.RequestException as e:
            raise EndpointUnreachable(f"endpoint of {name!r} ({kg.endpoint}) is unreachable: {e}") from None


def _safe_name(sample_id: str) -> str:
    return re.sub(r"[^\w.-]", "_", sample_id)


@dataclass
class SampleResult:
    sample: BenchmarkSample
    trace: SessionTrace
    score: EvalScore
    outcome: str
    seconds: float

    def score_record(self) -> dict:
        """Per-sample line of scores.jsonl; contains no timings so reruns are byte-identical."""
        o = self.trace.outcome
        sparql = getattr(o, "sparql", None) or (getattr(o, "best_attempt", None) or {}).get("sparql")
        return {
            "id": self.sample.id,
            "kg": self.sample.kg,
            "question": self.sample.question,
            "outcome": self.outcome,
            "sparql": sparql,
            **self.score.to_dict(),
            "turns": self.trace.turns,
            "function_calls": self.trace.function_calls,
            "feedback_loops": self.trace.feedback_loops,
            "calls": dict(sorted(self.trace.calls_by_name().items())),
        }


@dataclass
class BenchmarkReport:
    benchmark: str
    results: list[SampleResult] = field(default_factory=list)
    wall_seconds: float = 0.0

    @property
    def mean_f1(self) -> float | None:
        scored = [r.score.f1 for r in self.results if r.score.counted]
        return sum(scored) / len(scored) if scored else None

    def counts(self) -> dict[str, int]:
        """Session outcomes (answered/cancelled/exhausted/aborted) and scoring failures."""
        c = {k: 0 for k in ("answered", "cancelled", "exhausted", "aborted", "error", "excluded", "invalid")}
        for r in self.results:
            c[r.outcome] += 1
            if r.score.path in ("excluded", "invalid", "error"):
                c[r.score.path] += 1
        return c

    def to_dict(self) -> dict:
        secs = [r.seconds for r in self.results]
        calls: dict[str, int] = {}
        for r in self.results:
            for k, v in r.trace.calls_by_name().items():
                calls[k] = calls.get(k, 0) + v
        return {
            "layout_version": LAYOUT_VERSION,
            "benchmark": self.benchmark,
            "samples": len(self.results),
            "scored": sum(1 for r in self.results if r.score.counted),
            "mean_f1": self.mean_f1,
            "counts": self.counts(),
            "best_attempts_scored": sum(1 for r in self.results if "best attempt" in r.score.notes),
            "runtime": {
                "wall_seconds": self.wall_seconds,
                "session_seconds_mean": statistics.fmean(secs) if secs else 0.0,
                "session_seconds_median": statistics.median(secs) if secs else 0.0,
            },
            "calls": dict(sorted(calls.items())),
            "mean_turns": statistics.fmean([r.trace.turns for r in self.results]) if self.results else 0.0,
        }


def _outcome_name(trace: SessionTrace, aborted: bool) -> str:
    if aborted or trace.outcome is None:
        return "aborted"
    return trace.outcome.type


def run_one(
    sample: BenchmarkSample,
    config: SessionConfig,
    catalog: Catalog,
    toolbox: Toolbox,
    models: ModelFactory,
    client: SparqlClient,
    cache: ResultCache | None,
) -> SampleResult:
    start = time.perf_counter()
    aborted = False
    cfg = dataclasses.replace(config, seed=session_seed(config.seed, sample.id),
                              few_shot_kg=config.few_shot_kg or sample.kg)
    try:
        model, feedback_model = models(sample)
        trace = run_session(sample.question, cfg, catalog, toolbox, model, feedback_model)
    except SessionAborted as e:
        logger.warning("sample %s: chat transport failed: %s", sample.id, e)
        trace, aborted = e.trace, True
    except TransportError as e:
        logger.warning("sample %s: chat transport failed: %s", sample.id, e)
        trace, aborted = SessionTrace(sample.question), True
    outcome = _outcome_name(trace, aborted)
    if aborted:
        score = EvalScore(0.0, 0.0, 0.0, "error", "chat transport failed")
    else:
        score = score_sample(sample, trace.outcome, client, catalog, cache)
    return SampleResult(sample, trace, score, outcome, time.perf_counter() - start)


def run_benchmark(
    samples: Sequence[BenchmarkSample],
    config: SessionConfig,
    catalog: Catalog,
    toolbox: Toolbox,
    models: ModelFactory,
    out_dir: str | Path | None = None,
    n: int = DEFAULT_SAMPLES,
    seed: int = 0,
    parallelism: int = 1,
    client: SparqlClient | None = None,
    cache: ResultCache | None = None,
    benchmark: str = "benchmark",
    run_config: dict | None = None,
) -> BenchmarkReport:
    """Evaluate a seeded sample of ``samples`` and optionally persist everything under ``out_dir``.

    Raises EndpointUnreachable before any sampling if a graph endpoint does not answer.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    unknown = sorted({s.kg for s in samples} - set(catalog.names()))
    if unknown:
        raise DatasetError(f"dataset refers to unknown graphs: {', '.join(unknown)}")
    check_endpoints(catalog, [s.kg for s in samples])
    client = client or toolbox.client
    chosen = draw_samples(samples, n, seed)
    start = time.perf_counter()
    if parallelism <= 1:
        results = [run_one(s, config, catalog, toolbox, models, client, cache) for s in chosen]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(lambda s: run_one(s, config, catalog, toolbox, models, client, cache), chosen))
    report = BenchmarkReport(benchmark, results, time.perf_counter() - start)
    if out_dir is not None:
        write_run(Path(out_dir), report, config, seed, n, run_config or {})
    return report


def write_run(out: Path, report: BenchmarkReport, config: SessionConfig, seed: int, n: int,
              extra: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(exist_ok=True)
    snapshot = {
        "layout_version": LAYOUT_VERSION,
        "benchmark": report.benchmark,
        "n": n,
        "seed": seed,
        "function_set": config.function_set.id,
        "few_shot": config.function_set.few_shot,
        "feedback": config.feedback_enabled,
        "strict_iri_guard": config.strict_iri_guard,
        "max_llm_turns": config.max_llm_turns,
        "sample_ids": [r.sample.id for r in report.results],
        **extra,
    }
    (out / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(out / "scores.jsonl", "w", encoding="utf-8") as f:
        for r in report.results:
            f.write(json.dumps(r.score_record(), sort_keys=True, ensure_ascii=False) + "\n")
            r.trace.write_jsonl(out / "traces" / f"{_safe_name(r.sample.id)}.jsonl")
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    d = report.to_dict()
    lines = ["benchmark\tsamples\tscored\tmean_f1\t" + "\t".join(d["counts"])]
    mean = "" if d["mean_f1"] is None else f"{d['mean_f1']:.4f}"
    lines.append(f"{report.benchmark}\t{d['samples']}\t{d['scored']}\t{mean}\t"
                 + "\t".join(str(v) for v in d["counts"].values()))
    (out / "report.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
