"""Global explanations and the agreement metrics between them.

Feature agreement (FA) is the share of features two top-n lists have in
common; rank agreement (RA) is the share of positions at which they name the
same feature. Expert concordance is the share of a top-n list that belongs
to an expert-designated feature set.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from xai_concord.errors import XaiConcordError

ABS_SUM = "abs_sum"
SIGNED_SUM = "signed_sum"
AGGREGATION_MODES = (ABS_SUM, SIGNED_SUM)

REPORT_SCHEMA = "xai-concord/agreement-report"
REPORT_VERSION = 1


class AgreementError(XaiConcordError, ValueError):
    pass


def canonical_name(name: str) -> str:
    """Lowercase, trimmed, internal whitespace collapsed to one space."""
    return re.sub(r"\s+", " ", name.strip().lower())


def rank_scores(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score; equal scores keep ascending index order."""
    scores = np.asarray(scores, dtype=float)
    return np.lexsort((np.arange(scores.size), -scores))


@dataclass(frozen=True, eq=False)
class GlobalExplanation:
    method_label: str
    scores: np.ndarray
    feature_names: tuple
    mode: str = ABS_SUM

    def __post_init__(self):
        s = np.array(self.scores, dtype=float).reshape(-1)
        names = tuple(self.feature_names)
        if len(names) != s.size:
            raise AgreementError(f"{len(names)} feature names for {s.size} scores")
        if len(set(names)) != len(names):
            raise AgreementError("feature names must be unique")
        if not np.all(np.isfinite(s)):
            raise AgreementError("global scores must be finite")
        if self.mode not in AGGREGATION_MODES:
            raise AgreementError(f"unknown aggregation mode {self.mode!r}")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "feature_names", names)

    @property
    def d(self) -> int:
        return self.scores.size

    @property
    def ranking_key(self) -> np.ndarray:
        """The quantity the ranking sorts on (``|score|`` for signed sums)."""
        return np.abs(self.scores) if self.mode == SIGNED_SUM else self.scores

    @property
    def ranking(self) -> np.ndarray:
        return rank_scores(self.ranking_key)

    def scaled(self, c: float) -> "GlobalExplanation":
        return GlobalExplanation(self.method_label, self.scores * c, self.feature_names, self.mode)

    def to_dict(self) -> dict:
        return {
            "method": self.method_label,
            "mode": self.mode,
            "features": list(self.feature_names),
            "scores": self.scores.tolist(),
            "ranking": [self.feature_names[i] for i in self.ranking],
        }

    @classmethod
    def from_ranking(cls, label: str, ranked_names: Sequence[str], feature_names: Sequence[str]) -> "GlobalExplanation":
        """Explanation whose ranking starts with ``ranked_names``; all other features score 0."""
        names = tuple(feature_names)
        missing = [r for r in ranked_names if r not in names]
        if missing:
            raise AgreementError(f"ranked names not in the feature space: {missing}")
        scores = np.zeros(len(names))
        k = len(ranked_names)
        for pos, r in enumerate(ranked_names):
            scores[names.index(r)] = k - pos
        return cls(label, scores, names)


def aggregate_global(matrix, mode: str = ABS_SUM, label: str | None = None) -> GlobalExplanation:
    """Sum per-instance attributions over rows: absolute values by default, signed on request."""
    if mode not in AGGREGATION_MODES:
        raise AgreementError(f"unknown aggregation mode {mode!r}; choose abs_sum or signed_sum")
    values = np.asarray(matrix.values, dtype=float)
    if values.ndim != 2 or values.shape[0] < 1:
        raise AgreementError("cannot aggregate an empty attribution matrix")
    scores = np.abs(values).sum(axis=0) if mode == ABS_SUM else values.sum(axis=0)
    return GlobalExplanation(label if label is not None else matrix.kind, scores, matrix.feature_names, mode)


@dataclass(frozen=True)
class TopList:
    n: int
    entries: tuple

    def __post_init__(self):
        if self.n < 1:
            raise AgreementError("top-n size must be positive")
        object.__setattr__(self, "entries", tuple(self.entries))
        if len(set(self.entries)) != len(self.entries):
            raise AgreementError("top list entries must be distinct")
        if len(self.entries) > self.n:
            raise AgreementError(f"top-{self.n} list holds {len(self.entries)} entries")

    @property
    def size(self) -> int:
        """Denominator of the metrics: ``min(n, d)``."""
        return len(self.entries)


def top_n(explanation: GlobalExplanation, n: int) -> TopList:
    if n < 1:
        raise AgreementError("n must be positive")
    idx = explanation.ranking[: min(n, explanation.d)]
    return TopList(n, tuple(explanation.feature_names[i] for i in idx))


def _check_pair(a: TopList, b: TopList):
    if a.n != b.n:
        raise AgreementError(f"top lists have different n ({a.n} vs {b.n})")
    if a.size != b.size:
        raise AgreementError(f"top lists have different lengths ({a.size} vs {b.size})")


def feature_agreement(a: TopList, b: TopList) -> float:
    _check_pair(a, b)
    if not a.size:
        return 1.0
    return len(set(a.entries) & set(b.entries)) / a.size


def rank_agreement(a: TopList, b: TopList) -> float:
    _check_pair(a, b)
    if not a.size:
        return 1.0
    return sum(x == y for x, y in zip(a.entries, b.entries)) / a.size


@dataclass(frozen=True)
class ExpertSet:
    names: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "names", frozenset(self.names))

    @property
    def canonical(self) -> frozenset:
        return frozenset(canonical_name(n) for n in self.names)

    def validate(self, feature_names: Iterable[str]) -> None:
        known = {canonical_name(f) for f in feature_names}
        missing = sorted(n for n in self.names if canonical_name(n) not in known)
        if missing:
            raise AgreementError(f"expert names do not match any feature: {missing}")


def expert_concordance(a: TopList, expert: ExpertSet) -> float:
    """Share of the top list whose canonical names are in the expert set."""
    if not a.size:
        return 0.0
    canon = expert.canonical
    return sum(canonical_name(e) in canon for e in a.entries) / a.size


@dataclass(frozen=True)
class PairAgreement:
    label_a: str
    label_b: str
    n: int
    size: int
    fa: float
    ra: float

    @property
    def pair(self) -> str:
        return f"{self.label_a}{self.label_b}"


@dataclass(frozen=True)
class Concordance:
    method: str
    n: int
    size: int
    fraction: float


@dataclass(frozen=True, eq=False)
class AgreementReport:
    pairs: tuple
    concordance: tuple
    top_feature_unanimous: bool
    top_lists: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def lookup(self, label_a: str, label_b: str, n: int) -> PairAgreement:
        for p in self.pairs:
            if p.n == n and {p.label_a, p.label_b} == {label_a, label_b}:
                return p
        raise KeyError((label_a, label_b, n))

    def concordance_for(self, method: str, n: int) -> float:
        for c in self.concordance:
            if c.method == method and c.n == n:
                return c.fraction
        raise KeyError((method, n))

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "version": REPORT_VERSION,
            "pairs": [
                {"pair": p.pair, "a": p.label_a, "b": p.label_b, "n": p.n, "size": p.size, "FA": p.fa, "RA": p.ra}
                for p in self.pairs
            ],
            "concordance": [
                {"method": c.method, "n": c.n, "size": c.size, "fraction": c.fraction} for c in self.concordance
            ],
            "top_feature_unanimous": self.top_feature_unanimous,
            "top_lists": {m: {str(n): list(v) for n, v in lists.items()} for m, lists in self.top_lists.items()},
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AgreementReport":
        if doc.get("schema") != REPORT_SCHEMA or doc.get("version") != REPORT_VERSION:
            raise AgreementError("not a supported agreement report document")
        pairs = tuple(PairAgreement(p["a"], p["b"], p["n"], p["size"], p["FA"], p["RA"]) for p in doc["pairs"])
        conc = tuple(Concordance(c["method"], c["n"], c["size"], c["fraction"]) for c in doc["concordance"])
        tops = {m: {int(n): tuple(v) for n, v in lists.items()} for m, lists in doc.get("top_lists", {}).items()}
        return cls(pairs, conc, doc["top_feature_unanimous"], tops, doc.get("metadata", {}))

    def long_rows(self) -> list:
        """(pair, n, metric, value) rows; concordance rows use the method label as ``pair``."""
        rows = []
        for p in self.pairs:
            rows.append((p.pair, p.n, "FA", p.fa))
            rows.append((p.pair, p.n, "RA", p.ra))
        for c in self.concordance:
            rows.append((c.method, c.n, "expert_concordance", c.fraction))
        return rows

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pair", "n", "metric", "value"])
        for row in self.long_rows():
            w.writerow([row[0], row[1], row[2], repr(float(row[3]))])
        return buf.getvalue()

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _boundary_ties(g: GlobalExplanation, n: int) -> bool:
    key = g.ranking_key[g.ranking]
    head = key[: min(n + 1, g.d)]
    return bool(np.any(head[:-1] == head[1:]))


def pairwise_report(globals_: Sequence[GlobalExplanation], n_values: Sequence[int],
                    expert: ExpertSet | None = None, metadata: dict | None = None) -> AgreementReport:
    """FA and RA for every unordered pair of explanations at every n, plus expert concordance.

    Pairs follow the input order (``SL, SD, LD`` for inputs ``S, L, D``).
    Ties touching a top-n boundary are listed under ``metadata["ties"]``.
    """
    globals_ = list(globals_)
    if len(globals_) < 2:
        raise AgreementError("need at least two global explanations to compare")
    labels = [g.method_label for g in globals_]
    if len(set(labels)) != len(labels):
        raise AgreementError(f"method labels must be unique, got {labels}")
    space = globals_[0].feature_names
    for g in globals_[1:]:
        if g.feature_names != space:
            raise AgreementError(f"explanation {g.method_label!r} uses a different feature space")
    n_values = [int(n) for n in n_values]
    if not n_values or any(n < 1 for n in n_values):
        raise AgreementError("n_values must be a non-empty list of positive integers")
    expert = expert or ExpertSet()
    expert.validate(space)

    tops = {g.method_label: {n: top_n(g, n) for n in n_values} for g in globals_}
    pairs = []
    for n in n_values:
        for a, b in combinations(globals_, 2):
            ta, tb = tops[a.method_label][n], tops[b.method_label][n]
            pairs.append(PairAgreement(a.method_label, b.method_label, n, ta.size,
                                       feature_agreement(ta, tb), rank_agreement(ta, tb)))
    concordance = [
        Concordance(g.method_label, n, tops[g.method_label][n].size, expert_concordance(tops[g.method_label][n], expert))
        for n in n_values for g in globals_
    ]
    leaders = {g.feature_names[g.ranking[0]] for g in globals_}
    meta = dict(metadata or {})
    meta["ties"] = [{"method": g.method_label, "n": n} for g in globals_ for n in n_values if _boundary_ties(g, n)]
    meta["expert_set"] = sorted(expert.names)
    return AgreementReport(
        tuple(pairs),
        tuple(concordance),
        len(leaders) == 1,
        {m: {n: t.entries for n, t in lists.items()} for m, lists in tops.items()},
        meta,
    )
