"""Differential verdicts: crash filtering/clustering and numeric oracles.

A judged pair of executions yields exactly one verdict kind with a fixed
precedence: crash beats NaN divergence beats output inconsistency. Crash
logs are first screened for entry-point API names, then deduplicated by
cosine similarity over masked token counts, then labeled by first-match
keyword patterns.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyLog, FuzzError, LabelSetMismatch, ProtocolViolation, ShapeMismatch
from .executors import API_ENTRY_POINTS, ExecutionResult
from .graph import Tensor

DEFAULT_EPSILON = 0.1
DEFAULT_SIMILARITY = 0.9


@dataclass
class Verdict:
    """One differential-testing outcome."""

    kind: str  # "none" | "crash" | "nan" | "inconsistency"
    max_inconsistency_value: float = 0.0
    crash_cluster: int | None = None
    pattern_label: str | None = None
    evidence: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class BugPattern:
    """A keyword that identifies a crash root-cause family."""

    keyword: str
    label: str


def load_bug_patterns(path: str | None = None) -> tuple[BugPattern, ...]:
    """Pattern catalog from a config file, or the packaged default set.

    Keywords must be nonempty and mutually non-nested so first-match
    classification cannot depend on accidental substring containment.
    """
    if path is None:
        text = resources.files("modelfuzz.data").joinpath("bug_patterns.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
        patterns = tuple(BugPattern(p["keyword"], p["label"]) for p in doc["patterns"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolViolation(f"malformed bug-pattern file: {exc}") from exc
    for p in patterns:
        if not p.keyword:
            raise ProtocolViolation("bug pattern with empty keyword")
    for a in patterns:
        for b in patterns:
            if a is not b and a.keyword in b.keyword:
                raise ProtocolViolation(
                    f"nested bug-pattern keywords: {a.keyword!r} inside {b.keyword!r}"
                )
    return patterns


# ---------------------------------------------------------------------------
# Numeric oracles


def _as_array_map(outputs: Mapping[str, Any]) -> dict[str, np.ndarray]:
    out = {}
    for label, val in outputs.items():
        arr = val.values if isinstance(val, Tensor) else np.asarray(val)
        out[label] = np.asarray(arr, dtype=np.float64)
    return out


def max_inconsistency(ref_outputs: Mapping[str, Any], opt_outputs: Mapping[str, Any]) -> float:
    """Max absolute elementwise difference, grouped by label, max over groups.

    Positions where either side is NaN are excluded (the NaN oracle owns
    them); equal values — including equal infinities — contribute zero.
    """
    ref = _as_array_map(ref_outputs)
    opt = _as_array_map(opt_outputs)
    if set(ref) != set(opt):
        raise LabelSetMismatch(f"label sets differ: {sorted(ref)} vs {sorted(opt)}")
    worst = 0.0
    for label, a in ref.items():
        b = opt[label]
        if a.shape != b.shape:
            raise ShapeMismatch(f"label {label!r}: shapes {a.shape} vs {b.shape} differ")
        with np.errstate(invalid="ignore"):
            d = np.abs(a - b)
        d[a == b] = 0.0  # also zeroes same-signed infinity pairs
        d[np.isnan(a) | np.isnan(b)] = 0.0
        if d.size:
            worst = max(worst, float(d.max()))
    return worst


def _nan_labels(outputs: Mapping[str, Any]) -> frozenset[str]:
    return frozenset(
        label for label, arr in _as_array_map(outputs).items() if np.isnan(arr).any()
    )


def filter_crash_log(log: str | None, api_names: Iterable[str]) -> bool:
    """True iff any line of the log mentions any of the API names."""
    if not log:
        return False
    return any(name in log for name in api_names)


def judge(
    result_ref: ExecutionResult,
    result_opt: ExecutionResult,
    epsilon: float = DEFAULT_EPSILON,
    api_names: Iterable[str] = API_ENTRY_POINTS,
) -> Verdict:
    """Differential verdict with precedence crash > nan > inconsistency.

    The reference result must be ok — models that fail the baseline are
    discarded before judging. A crash whose log does not pass the API-name
    filter is discarded (verdict none), mirroring the treatment of crashes
    that cannot be attributed to the tested library.
    """
    if result_ref.status != "ok":
        raise FuzzError("judge requires an ok reference result")
    if result_opt.status == "crash":
        if filter_crash_log(result_opt.crash_log, api_names):
            return Verdict("crash", evidence={"crash_log": result_opt.crash_log})
        return Verdict("none", evidence={"discarded_crash_log": result_opt.crash_log})
    if _nan_labels(result_ref.outputs) != _nan_labels(result_opt.outputs):
        return Verdict("nan")
    value = max_inconsistency(result_ref.outputs, result_opt.outputs)
    if value > epsilon:
        return Verdict("inconsistency", max_inconsistency_value=value)
    return Verdict("none", max_inconsistency_value=value)


# ---------------------------------------------------------------------------
# Crash-log similarity and clustering

_ADDR = re.compile(r"0x[0-9a-fA-F]+")
_NUM = re.compile(r"\d+")


def tokenize_log(log: str) -> list[str]:
    """Lowercased whitespace tokens with addresses and numbers masked."""
    text = _ADDR.sub("<addr>", log.lower())
    text = _NUM.sub("<num>", text)
    return text.split()


def cosine_similarity(log_a: str, log_b: str) -> float:
    """Cosine of token-count vectors over the union vocabulary."""
    ta, tb = tokenize_log(log_a), tokenize_log(log_b)
    if not ta or not tb:
        raise EmptyLog("crash log tokenized to nothing")
    ca, cb = Counter(ta), Counter(tb)
    dot = sum(n * cb[t] for t, n in ca.items())
    norm = math.sqrt(sum(n * n for n in ca.values())) * math.sqrt(sum(n * n for n in cb.values()))
    return dot / norm


@dataclass
class CrashCluster:
    """One group of similar crash logs; the representative arrived first."""

    representative: str
    indices: list[int]


def cluster_crashes(logs: Sequence[str], threshold: float = DEFAULT_SIMILARITY) -> list[CrashCluster]:
    """Single-linkage grouping: similarity above the threshold links logs.

    Clusters are connected components of the similarity graph, ordered and
    represented by their earliest member, so the result is deterministic in
    the input order.
    """
    n = len(logs)
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            if cosine_similarity(logs[i], logs[j]) > threshold:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [CrashCluster(logs[root], sorted(members)) for root, members in sorted(groups.items())]


class CrashClusterer:
    """Incremental clustering for the campaign loop.

    Each new log joins the earliest existing cluster containing any member
    above the threshold, else founds a new cluster. With well-separated log
    templates this matches offline single-linkage clustering.
    """

    def __init__(self, threshold: float = DEFAULT_SIMILARITY) -> None:
        self.threshold = threshold
        self.clusters: list[list[str]] = []

    def assign(self, log: str) -> tuple[int, bool]:
        """Returns (cluster id, whether a new cluster was created)."""
        for cid, members in enumerate(self.clusters):
            if any(cosine_similarity(log, m) > self.threshold for m in members):
                members.append(log)
                return cid, False
        self.clusters.append([log])
        return len(self.clusters) - 1, True

    def representative(self, cid: int) -> str:
        return self.clusters[cid][0]


def match_bug_pattern(log: str, catalog: Sequence[BugPattern]) -> str:
    """First catalog entry whose keyword occurs in the log, else "unclassified"."""
    for pattern in catalog:
        if pattern.keyword in log:
            return pattern.label
    return "unclassified"
