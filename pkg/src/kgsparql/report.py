"""Summaries of benchmark run directories: TSV tables and PNG figures."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

OUTCOMES = ("answered", "cancelled", "exhausted", "aborted")
PATHS = ("matched", "exact_fallback", "ask_equivalence", "error", "excluded", "invalid")


class ReportError(RuntimeError):
    pass


@dataclass
class RunSummary:
    benchmark: str
    directory: Path
    samples: int = 0
    scored: int = 0
    f1_sum: float = 0.0
    outcomes: Counter = field(default_factory=Counter)
    paths: Counter = field(default_factory=Counter)
    calls: Counter = field(default_factory=Counter)

    @property
    def mean_f1(self) -> float | None:
        return self.f1_sum / self.scored if self.scored else None


def _read_scores(path: Path) -> list[dict]:
    rows = []
    try:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if line.strip():
                    rows.append(json.loads(line))
    except (OSError, ValueError) as e:
        raise ReportError(f"{path}: unreadable scores ({e})") from None
    return rows


def summarize_run(run_dir: Path) -> RunSummary:
    benchmark = run_dir.name
    cfg = run_dir / "config.json"
    if cfg.exists():
        try:
            benchmark = json.loads(cfg.read_text(encoding="utf-8")).get("benchmark", benchmark)
        except ValueError as e:
            raise ReportError(f"{cfg}: unreadable config ({e})") from None
    s = RunSummary(benchmark, run_dir)
    for rec in _read_scores(run_dir / "scores.jsonl"):
        try:
            s.samples += 1
            s.outcomes[rec["outcome"]] += 1
            s.paths[rec["path"]] += 1
            if rec["path"] not in ("excluded", "invalid"):
                s.scored += 1
                s.f1_sum += float(rec["f1"])
            s.calls.update(rec.get("calls", {}))
        except (KeyError, TypeError, ValueError) as e:
            raise ReportError(f"{run_dir / 'scores.jsonl'}: malformed record ({e})") from None
    return s


def find_runs(root: str | Path) -> list[RunSummary]:
    """Every run below ``root``, one per directory holding a scores.jsonl."""
    root = Path(root)
    if not root.is_dir():
        raise ReportError(f"not a directory: {root}")
    return [summarize_run(p.parent) for p in sorted(root.rglob("scores.jsonl"))]


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.4f}"


def summary_table(runs: Sequence[RunSummary]) -> list[list[str]]:
    header = ["benchmark", "samples", "scored", "mean_f1", *OUTCOMES, *PATHS]
    rows = [header]
    for r in runs:
        rows.append([r.benchmark, str(r.samples), str(r.scored), _fmt(r.mean_f1),
                     *(str(r.outcomes[o]) for o in OUTCOMES), *(str(r.paths[p]) for p in PATHS)])
    return rows


def calls_table(runs: Sequence[RunSummary]) -> list[list[str]]:
    names = sorted(set().union(*(r.calls for r in runs))) if runs else []
    rows = [["benchmark", *names]]
    for r in runs:
        rows.append([r.benchmark, *(str(r.calls[n]) for n in names)])
    return rows


def compare_table(base: Sequence[RunSummary], other: Sequence[RunSummary]) -> list[list[str]]:
    a = {r.benchmark: r for r in base}
    b = {r.benchmark: r for r in other}
    rows = [["benchmark", "mean_f1_a", "mean_f1_b", "delta"]]
    for name in sorted(set(a) | set(b)):
        fa = a[name].mean_f1 if name in a else None
        fb = b[name].mean_f1 if name in b else None
        delta = fb - fa if fa is not None and fb is not None else None
        rows.append([name, _fmt(fa), _fmt(fb), "" if delta is None else f"{delta:+.4f}"])
    return rows


def to_tsv(rows: Sequence[Sequence[str]]) -> str:
    return "".join("\t".join(r) + "\n" for r in rows)


def plot_f1(path: Path, runs: Sequence[RunSummary], other: Sequence[RunSummary] | None = None) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = sorted({r.benchmark for r in runs} | {r.benchmark for r in other or ()})
    a = {r.benchmark: r.mean_f1 or 0.0 for r in runs}
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(names) + 2), 3.5))
    xs = range(len(names))
    if other is None:
        ax.bar(list(xs), [a.get(n, 0.0) for n in names], color="tab:blue")
    else:
        b = {r.benchmark: r.mean_f1 or 0.0 for r in other}
        ax.bar([x - 0.2 for x in xs], [a.get(n, 0.0) for n in names], 0.4, label="a")
        ax.bar([x + 0.2 for x in xs], [b.get(n, 0.0) for n in names], 0.4, label="b")
        ax.legend()
    ax.set_xticks(list(xs), names, rotation=20, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("mean F1")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_calls(path: Path, runs: Sequence[RunSummary]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = sorted(set().union(*(r.calls for r in runs)))
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(names) + 2), 3.5))
    width = 0.8 / max(1, len(runs))
    for i, r in enumerate(runs):
        per_sample = [r.calls[n] / max(1, r.samples) for n in names]
        ax.bar([x + i * width for x in range(len(names))], per_sample, width, label=r.benchmark)
    ax.set_xticks([x + 0.4 - width / 2 for x in range(len(names))], names, rotation=30, ha="right")
    ax.set_ylabel("calls per sample")
    if len(runs) > 1:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def write_report(root: str | Path, out: str | Path | None = None,
                 compare: str | Path | None = None) -> dict[str, str]:
    """Build all tables for ``root`` (and ``compare``), write them plus figures to ``out``.

    Returns the rendered TSV tables by name. Raises ReportError if no runs are found.
    """
    runs = find_runs(root)
    if not runs:
        raise ReportError(f"no traces found in {root}")
    tables = {"summary": to_tsv(summary_table(runs)), "calls": to_tsv(calls_table(runs))}
    other = None
    if compare is not None:
        other = find_runs(compare)
        if not other:
            raise ReportError(f"no traces found in {compare}")
        tables["compare"] = to_tsv(compare_table(runs, other))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in tables.items():
            (out / f"{name}.tsv").write_text(text, encoding="utf-8")
        plot_f1(out / "f1.png", runs, other)
        plot_calls(out / "calls.png", runs)
    return tables
