"""Relevance evaluation over TREC-style runs and qrels.

NDCG uses exponential gain 2^grade - 1 with a 1/log2(rank+1) discount, the
ideal ranking taken over every judged document for the query whether or not
the run retrieved it. P@k counts grade >= 1 documents against a fixed k
denominator; MRR@k is the reciprocal rank of the first relevant document
inside the cutoff, zero when there is none. Queries whose judgments contain
no relevant document score 0 and stay in the mean, so metric values are
comparable across runs that retrieve different query subsets.

Runs are canonicalized on parse: entries re-sorted by descending score with
ascending doc id breaking ties, ranks reassigned from 1. Statistical
comparison between two runs is a classic two-sided paired t-test; a
zero-variance difference vector makes t undefined, which is reported as
non-significant with an explicit flag instead of an exception.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import stdtr

RELEVANT_GRADE = 1
SIGNIFICANCE_LEVEL = 0.05


# ----------------------------------------------------------------------------
# qrels
# ----------------------------------------------------------------------------


@dataclass
class Qrels:
    """Graded judgments: qid -> {docid -> grade >= 0}."""

    grades: dict[str, dict[str, int]] = field(default_factory=dict)

    def add(self, qid: str, doc_id: str, grade: int) -> None:
        if grade < 0:
            raise ValueError(f"negative grade {grade} for ({qid}, {doc_id})")
        per_query = self.grades.setdefault(qid, {})
        if doc_id in per_query:
            raise ValueError(f"duplicate judgment for ({qid}, {doc_id})")
        per_query[doc_id] = int(grade)

    def grade(self, qid: str, doc_id: str) -> int:
        return self.grades.get(qid, {}).get(doc_id, 0)

    def judged(self, qid: str) -> Mapping[str, int]:
        return self.grades.get(qid, {})

    @property
    def n_queries(self) -> int:
        return len(self.grades)


def parse_qrels(path: str | Path) -> Qrels:
    """Parse "qid 0 docid grade" lines (second column ignored, kept for TREC)."""
    qrels = Qrels()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 'qid 0 docid grade', got {line!r}")
        qid, _, doc_id, grade_text = parts
        try:
            grade = int(grade_text)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: grade {grade_text!r} is not an integer") from exc
        try:
            qrels.add(qid, doc_id, grade)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return qrels


def write_qrels(path: str | Path, qrels: Qrels) -> None:
    lines = [
        f"{qid} 0 {doc_id} {grade}"
        for qid in sorted(qrels.grades)
        for doc_id, grade in sorted(qrels.grades[qid].items())
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# ----------------------------------------------------------------------------
# runs
# ----------------------------------------------------------------------------


def canonical_order(entries: Sequence[tuple[str, float]]) -> list[tuple[str, float]]:
    return sorted(entries, key=lambda e: (-e[1], e[0]))


@dataclass
class Run:
    """Per-query rankings; entries are kept in canonical order."""

    entries: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.entries = {qid: canonical_order(docs) for qid, docs in self.entries.items()}

    def add(self, qid: str, doc_id: str, score: float) -> None:
        docs = self.entries.setdefault(qid, [])
        docs.append((doc_id, float(score)))
        self.entries[qid] = canonical_order(docs)

    def ranking(self, qid: str) -> list[str]:
        return [doc_id for doc_id, _ in self.entries.get(qid, [])]

    @property
    def qids(self) -> list[str]:
        return sorted(self.entries)


def parse_run(path: str | Path) -> Run:
    """Parse "qid Q0 docid rank score tag" lines; ordering is recomputed from
    the scores, so stated ranks never bind."""
    run = Run()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(
                f"{path}:{lineno}: expected 'qid Q0 docid rank score tag', got {line!r}"
            )
        qid, _, doc_id, _, score_text, _ = parts
        try:
            score = float(score_text)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: score {score_text!r} is not a number") from exc
        run.add(qid, doc_id, score)
    return run


def write_run(path: str | Path, run: Run, tag: str = "becr") -> None:
    lines = []
    for qid in run.qids:
        for rank, (doc_id, score) in enumerate(run.entries[qid], start=1):
            lines.append(f"{qid} Q0 {doc_id} {rank} {score:.6f} {tag}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# ----------------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------------


@dataclass
class MetricResult:
    name: str
    per_query: dict[str, float]
    mean: float


def _require_some_judgments(run: Run, qrels: Qrels) -> None:
    if not any(qrels.judged(qid) for qid in run.qids):
        raise ValueError("no run query has any relevance judgment")


def _dcg(grades: Sequence[int]) -> float:
    return sum(
        (2.0**g - 1.0) / math.log2(rank + 1.0)
        for rank, g in enumerate(grades, start=1)
    )


def ndcg_at_k(run: Run, qrels: Qrels, k: int) -> MetricResult:
    """Ideal DCG ranks every judged document, retrieved or not, so a run is
    penalized for failing to retrieve relevant material."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _require_some_judgments(run, qrels)
    per_query = {}
    for qid in run.qids:
        judged = qrels.judged(qid)
        retrieved = [qrels.grade(qid, d) for d in run.ranking(qid)[:k]]
        ideal = sorted(judged.values(), reverse=True)[:k]
        ideal_dcg = _dcg(ideal)
        per_query[qid] = _dcg(retrieved) / ideal_dcg if ideal_dcg > 0 else 0.0
    return MetricResult("ndcg@%d" % k, per_query, float(np.mean(list(per_query.values()))))


def p_at_k(run: Run, qrels: Qrels, k: int) -> MetricResult:
    if k < 1:
        raise ValueError("k must be >= 1")
    _require_some_judgments(run, qrels)
    per_query = {}
    for qid in run.qids:
        hits = sum(
            1 for d in run.ranking(qid)[:k] if qrels.grade(qid, d) >= RELEVANT_GRADE
        )
        per_query[qid] = hits / k
    return MetricResult("p@%d" % k, per_query, float(np.mean(list(per_query.values()))))


def mrr_at_k(run: Run, qrels: Qrels, k: int) -> MetricResult:
    if k < 1:
        raise ValueError("k must be >= 1")
    _require_some_judgments(run, qrels)
    per_query = {}
    for qid in run.qids:
        value = 0.0
        for rank, doc_id in enumerate(run.ranking(qid)[:k], start=1):
            if qrels.grade(qid, doc_id) >= RELEVANT_GRADE:
                value = 1.0 / rank
                break
        per_query[qid] = value
    return MetricResult("mrr@%d" % k, per_query, float(np.mean(list(per_query.values()))))


METRIC_FUNCTIONS = {"ndcg": ndcg_at_k, "p": p_at_k, "mrr": mrr_at_k}


def compute_metric(run: Run, qrels: Qrels, spec: str) -> MetricResult:
    """Evaluate a "name@k" metric spec such as "ndcg@5" or "mrr@10"."""
    name, _, k_text = spec.partition("@")
    if name not in METRIC_FUNCTIONS or not k_text:
        raise ValueError(
            f"unknown metric {spec!r}, expected name@k with name in "
            f"{sorted(METRIC_FUNCTIONS)}"
        )
    try:
        k = int(k_text)
    except ValueError as exc:
        raise ValueError(f"metric cutoff {k_text!r} is not an integer") from exc
    return METRIC_FUNCTIONS[name](run, qrels, k)


# ----------------------------------------------------------------------------
# paired t-test
# ----------------------------------------------------------------------------


@dataclass
class TTestResult:
    t_statistic: float
    p_value: float
    significant: bool
    zero_variance: bool
    mean_difference: float


def paired_t_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test of per-query metric values.

    A zero-variance difference vector (including two identical runs) leaves t
    undefined; that case is flagged and reported non-significant rather than
    raised, since it is a routine outcome when comparing a run to itself.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be equal-length vectors")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    diffs = a - b
    mean = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    if sd == 0.0:
        return TTestResult(
            t_statistic=float("nan"),
            p_value=float("nan"),
            significant=False,
            zero_variance=True,
            mean_difference=mean,
        )
    t = mean / (sd / math.sqrt(n))
    p = float(2.0 * stdtr(n - 1, -abs(t)))
    return TTestResult(
        t_statistic=float(t),
        p_value=p,
        significant=p < SIGNIFICANCE_LEVEL,
        zero_variance=False,
        mean_difference=mean,
    )


# ----------------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------------


def write_metrics_csv(path: str | Path, results: Sequence[MetricResult]) -> None:
    """Per-query rows then an "ALL" mean row per metric."""
    lines = ["qid,metric,value"]
    for result in results:
        for qid in sorted(result.per_query):
            lines.append(f"{qid},{result.name},{result.per_query[qid]:.6f}")
    for result in results:
        lines.append(f"ALL,{result.name},{result.mean:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def summary_lines(results: Sequence[MetricResult]) -> list[str]:
    width = max((len(r.name) for r in results), default=0)
    return [f"{r.name:<{width}}  {r.mean:.4f}" for r in results]
