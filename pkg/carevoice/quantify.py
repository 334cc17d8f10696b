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
Numeric levels for continuous-scale features.

A phrase gets the level of the anchor phrase it is most similar to under a
text embedder (cosine similarity); a visit's level aggregates its phrases.
"""
from __future__ import annotations

import logging
import threading

from typing import Literal, Optional
from pydantic import Field, computed_field
from torchtyping import TensorType as Tensor

from carevoice.backends.base import TextEmbedder
from carevoice.core import (
    AcousticDescription,
    AcousticFeature,
    AnchorLevel,
    AnchorScale,
    _Frozen,
)
from carevoice.errors import EmbeddingFailed, NoPhrases
from carevoice.utils import argmax_lowest, cosine_similarity, is_valid_embedding

__all__ = [
    "QUANTIFIED_FEATURES",
    "Aggregation",
    "QuantifiedFeature",
    "builtin_scales",
    "EmbeddingCache",
    "anchor_score",
    "quantify_visit",
    "quantify_descriptions",
]

logger = logging.getLogger(__name__)

Aggregation = Literal["mean", "max", "first"]

QUANTIFIED_FEATURES = (
    AcousticFeature.energy,
    AcousticFeature.discomfort_fatigue,
)


class QuantifiedFeature(_Frozen):
    feature: AcousticFeature
    levels: tuple[int, ...] = Field(min_length=1)
    aggregation: Aggregation = "mean"

    @computed_field  # type: ignore[misc]
    @property
    def visit_level(self) -> float:
        if self.aggregation == "max":
            return float(max(self.levels))
        if self.aggregation == "first":
            return float(self.levels[0])
        return sum(self.levels) / len(self.levels)


def _scale(name: str, anchors: list[list[str]]) -> AnchorScale:
    return AnchorScale(
        name=name,
        levels=tuple(
            AnchorLevel(level=i + 1, anchors=tuple(a))
            for i, a in enumerate(anchors)
        ),
    )


def builtin_scales() -> dict[AcousticFeature, AnchorScale]:
    """Four-level anchor scales; slash-separated anchors share a level."""
    return {
        AcousticFeature.energy: _scale(
            "energy",
            [["low", "soft"], ["soft to moderate"], ["moderate"],
             ["consistent", "steady"]],
        ),
        AcousticFeature.discomfort_fatigue: _scale(
            "discomfort_fatigue",
            [
                ["no evident", "no apparent"],
                ["mild discomfort", "mild fatigue"],
                ["moderate discomfort", "moderate fatigue"],
                ["noticeable discomfort", "noticeable fatigue"],
            ],
        ),
    }


class EmbeddingCache:
    """Embeds each distinct string once per run.

    Lookups are lock-free; a miss embeds outside the lock and the first
    writer wins, so every caller sees the same vector for a string.
    """

    def __init__(self, embedder: TextEmbedder):
        self.embedder = embedder
        self._vectors: dict[str, Tensor["D"]] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._vectors)

    def __call__(self, text: str) -> Tensor["D"]:
        vec = self._vectors.get(text)
        if vec is not None:
            return vec
        try:
            vec = self.embedder.embed(text)
        except Exception as e:
            raise EmbeddingFailed(text, repr(e)) from e
        if not is_valid_embedding(vec):
            raise EmbeddingFailed(text, "zero or non-finite vector")
        with self._lock:
            return self._vectors.setdefault(text, vec)


def anchor_score(
    phrase: str,
    scale: AnchorScale,
    embed: EmbeddingCache,
) -> int:
    """Level of the anchor most cosine-similar to the phrase; ties go to
    the lower level."""
    query = embed(phrase)
    scored = (
        (lv.level, max(cosine_similarity(query, embed(a)) for a in lv.anchors))
        for lv in scale.levels
    )
    level, _ = argmax_lowest(scored)
    return level


def quantify_visit(
    description: AcousticDescription,
    scale: AnchorScale,
    embed: EmbeddingCache,
    aggregation: Aggregation = "mean",
) -> QuantifiedFeature:
    assert description.feature.value == scale.name, (
        f"{description.feature.value} phrases against the {scale.name} scale"
    )
    if not description.phrases:
        raise NoPhrases(f"no {description.feature.value} phrases to quantify")
    levels = tuple(anchor_score(p, scale, embed) for p in description.phrases)
    return QuantifiedFeature(
        feature=description.feature, levels=levels, aggregation=aggregation
    )


def quantify_descriptions(
    descriptions: list[AcousticDescription],
    embed: EmbeddingCache,
    scales: Optional[dict[AcousticFeature, AnchorScale]] = None,
    aggregation: Aggregation = "mean",
    warnings: Optional[list[str]] = None,
) -> list[QuantifiedFeature]:
    """Quantifies every scaled feature that has phrases."""
    scales = scales or builtin_scales()
    out = []
    for d in descriptions:
        if d.feature not in scales:
            continue
        try:
            out.append(quantify_visit(d, scales[d.feature], embed, aggregation))
        except NoPhrases as e:
            logger.warning(str(e))
            if warnings is not None:
                warnings.append(str(e))
    return out
