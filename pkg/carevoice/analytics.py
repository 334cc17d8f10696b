# Copyright (C) 2025 carevoice contributors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""
Cohort statistics: per-patient score means, outcome-group comparisons,
score densities and phrase rankings.

Everything here is a pure function over values already on disk; the
pipeline's analysis stage reduces visit artifacts through these.
"""
from __future__ import annotations

import math
import torch as t

from collections import Counter
from typing import Mapping, Optional, Sequence, Union
from pydantic import Field, field_validator
from sklearn.feature_extraction.text import TfidfVectorizer
from torchtyping import TensorType as Tensor

from carevoice.core import AgeCategory, EDHospOutcome, Gender, _Frozen
from carevoice.errors import (
    EmptyDistribution,
    EmptyGroup,
    EmptyPatient,
    MissingOutcome,
    UnknownGroup,
)
from carevoice.utils import mean

__all__ = [
    "NO_EVENT",
    "EVENT",
    "ScoreDistribution",
    "PhraseCorpus",
    "SummaryStats",
    "GroupComparison",
    "patient_mean_scores",
    "split_groups",
    "wasserstein_1d",
    "silverman_bandwidth",
    "kde_curve",
    "summary_stats",
    "compare_groups",
    "tfidf_top_phrases",
    "phrase_frequencies",
    "level_by_score",
    "gender_confusion",
    "age_by_category",
]

NO_EVENT = "No ED/HOSP"
EVENT = "ED/HOSP"

# Bandwidth used when every sample is identical.
MIN_BANDWIDTH = 0.1


class ScoreDistribution(_Frozen):
    label: str
    samples: tuple[float, ...] = ()

    def __len__(self) -> int:
        return len(self.samples)

    def tensor(self) -> Tensor["N"]:
        if not self.samples:
            raise EmptyDistribution(f"distribution {self.label!r} is empty")
        return t.tensor(self.samples, dtype=t.float64)


class PhraseCorpus(_Frozen):
    """One document per group: the multiset of that group's phrases."""

    groups: dict[str, tuple[str, ...]] = Field(min_length=1)

    @field_validator("groups")
    @classmethod
    def _sorted(
        cls, v: dict[str, tuple[str, ...]]
    ) -> dict[str, tuple[str, ...]]:
        return {g: tuple(v[g]) for g in sorted(v)}


class SummaryStats(_Frozen):
    n: int
    min: float
    max: float
    mean: float


# Patient-level scores ---------------------------------------------------------


def patient_mean_scores(
    scores: Mapping[str, Sequence[int]]
) -> dict[str, float]:
    """Average visit score per patient."""
    out = {}
    for pid in sorted(scores):
        if len(scores[pid]) == 0:
            raise EmptyPatient(pid)
        out[pid] = mean([float(s) for s in scores[pid]])
    return out


def split_groups(
    patient_means: Mapping[str, float],
    outcomes: Mapping[str, Union[EDHospOutcome, bool]],
) -> tuple[ScoreDistribution, ScoreDistribution]:
    """Partitions patient means by outcome: (No ED/HOSP, ED/HOSP)."""
    none, event = [], []
    for pid in sorted(patient_means):
        if pid not in outcomes:
            raise MissingOutcome(pid)
        flag = outcomes[pid]
        had_event = flag.had_event if isinstance(flag, EDHospOutcome) else flag
        (event if had_event else none).append(patient_means[pid])
    return (
        ScoreDistribution(label=NO_EVENT, samples=tuple(none)),
        ScoreDistribution(label=EVENT, samples=tuple(event)),
    )


# Distribution comparisons -----------------------------------------------------


def wasserstein_1d(a: ScoreDistribution, b: ScoreDistribution) -> float:
    """1-Wasserstein distance between two empirical distributions.

    Equal sample counts pair the sorted samples; otherwise the absolute
    difference of the two step CDFs is integrated exactly between
    consecutive support points.
    """
    u, v = a.tensor().sort().values, b.tensor().sort().values
    if len(u) == len(v):
        return (u - v).abs().mean().item()
    support = t.cat([u, v]).sort().values
    widths = support.diff()
    cdf_u = t.searchsorted(u, support[:-1], right=True) / len(u)
    cdf_v = t.searchsorted(v, support[:-1], right=True) / len(v)
    return ((cdf_u - cdf_v).abs() * widths).sum().item()


def silverman_bandwidth(x: Tensor["N"]) -> float:
    """0.9 * min(std, IQR / 1.34) * n^(-1/5), with the IQR ignored when it
    is zero and a floor for degenerate samples."""
    n = len(x)
    std = (x - x.mean()).pow(2).mean().sqrt().item()
    if std == 0.0:
        return MIN_BANDWIDTH
    q75, q25 = t.quantile(x, t.tensor([0.75, 0.25], dtype=x.dtype)).tolist()
    iqr = q75 - q25
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    return 0.9 * spread * n ** (-0.2)


def kde_curve(
    d: ScoreDistribution,
    lo: float = 0.0,
    hi: float = 6.0,
    n_points: int = 200,
    bandwidth: Optional[float] = None,
) -> list[tuple[float, float]]:
    """Gaussian kernel density of `d` on a uniform grid over [lo, hi]."""
    assert lo < hi and n_points >= 2, "kde grid needs lo < hi, >= 2 points"
    x = d.tensor()
    h = bandwidth if bandwidth is not None else silverman_bandwidth(x)
    grid = t.linspace(lo, hi, n_points, dtype=t.float64)
    z = (grid[:, None] - x[None, :]) / h
    norm = len(x) * h * math.sqrt(2 * math.pi)
    density = t.exp(-0.5 * z**2).sum(dim=1) / norm
    return list(zip(grid.tolist(), density.tolist()))


def summary_stats(d: ScoreDistribution) -> SummaryStats:
    if not d.samples:
        raise EmptyDistribution(f"distribution {d.label!r} is empty")
    return SummaryStats(
        n=len(d.samples),
        min=min(d.samples),
        max=max(d.samples),
        mean=mean(d.samples),
    )


class GroupComparison(_Frozen):
    """One row of the outcome-group comparison grid. `wd` is None when a
    group has no patients."""

    model_id: str
    mode: str
    wd: Optional[float]
    no_event_mean: Optional[float]
    event_mean: Optional[float]
    no_event_n: int
    event_n: int


def compare_groups(
    model_id: str,
    mode: str,
    none: ScoreDistribution,
    event: ScoreDistribution,
) -> GroupComparison:
    def avg(d: ScoreDistribution) -> Optional[float]:
        return mean(d.samples) if d.samples else None

    wd = wasserstein_1d(none, event) if none.samples and event.samples else None
    return GroupComparison(
        model_id=model_id,
        mode=mode,
        wd=wd,
        no_event_mean=avg(none),
        event_mean=avg(event),
        no_event_n=len(none),
        event_n=len(event),
    )


# Phrases ----------------------------------------------------------------------


def _tokens(doc: Sequence[str]) -> Sequence[str]:
    return doc


def tfidf_top_phrases(
    corpus: PhraseCorpus, k: int = 3
) -> dict[str, list[tuple[str, float]]]:
    """Top-k phrases per group by length-normalised tf times smoothed idf.

    Ties are broken by raw count (descending), then alphabetically.
    """
    assert k >= 1
    groups = list(corpus.groups)
    for g in groups:
        if not corpus.groups[g]:
            raise EmptyGroup(g)
    docs = [list(corpus.groups[g]) for g in groups]
    vectorizer = TfidfVectorizer(
        analyzer=_tokens, lowercase=False, smooth_idf=True, norm=None
    )
    vectorizer.fit(docs)
    idf = dict(zip(vectorizer.get_feature_names_out(), vectorizer.idf_))

    out = {}
    for g, doc in zip(groups, docs):
        counts = Counter(doc)
        ranked = sorted(
            (
                (-(counts[p] / len(doc)) * idf[p], -counts[p], p)
                for p in counts
            ),
        )
        out[g] = [(p, -neg_score) for neg_score, _, p in ranked[:k]]
    return out


def phrase_frequencies(corpus: PhraseCorpus, group: str) -> dict[str, int]:
    """Phrase counts of one group, most frequent first."""
    if group not in corpus.groups:
        raise UnknownGroup(group)
    counts = Counter(corpus.groups[group])
    return dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))


def level_by_score(
    quantified: Sequence[tuple[int, float]]
) -> dict[int, ScoreDistribution]:
    """Buckets per-visit feature levels by the visit's illness score."""
    buckets: dict[int, list[float]] = {}
    for score, level in quantified:
        assert 1 <= score <= 5, f"illness score {score} out of range"
        buckets.setdefault(score, []).append(level)
    return {
        s: ScoreDistribution(label=str(s), samples=tuple(buckets[s]))
        for s in sorted(buckets)
    }


# Gender and age baseline ------------------------------------------------------


def gender_confusion(
    pairs: Sequence[tuple[Gender, Gender]]
) -> tuple[Optional[float], dict[tuple[Gender, Gender], int]]:
    """Accuracy and confusion counts over (true, predicted) pairs. The
    accuracy is None without any pair."""
    confusion = {(a, b): 0 for a in Gender for b in Gender}
    for truth, pred in pairs:
        confusion[(truth, pred)] += 1
    if not pairs:
        return None, confusion
    correct = sum(confusion[(g, g)] for g in Gender if g is not Gender.unknown)
    return correct / len(pairs), confusion


def age_by_category(
    pairs: Sequence[tuple[int, AgeCategory]]
) -> dict[AgeCategory, ScoreDistribution]:
    """True ages grouped by predicted category, in category order."""
    groups: dict[AgeCategory, list[float]] = {}
    for age, category in pairs:
        groups.setdefault(category, []).append(float(age))
    return {
        c: ScoreDistribution(label=c.value, samples=tuple(groups[c]))
        for c in AgeCategory
        if c in groups
    }
