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

import pytest
import torch as t

from carevoice.backends import MockTextEmbedder, TextEmbedder
from carevoice.config import BackendConfig, BackendKind
from carevoice.core import AcousticDescription, AcousticFeature
from carevoice.errors import EmbeddingFailed, NoPhrases
from carevoice.quantify import (
    EmbeddingCache,
    QuantifiedFeature,
    anchor_score,
    builtin_scales,
    quantify_descriptions,
    quantify_visit,
)


class TableEmbedder(TextEmbedder):
    """Looks vectors up in a table and counts the calls."""

    def __init__(self, table: dict[str, list[float]]):
        super().__init__(
            BackendConfig(kind=BackendKind.text_embedder, max_retries=0)
        )
        self.table = {k: t.tensor(v, dtype=t.float64) for k, v in table.items()}
        self.calls = 0

    @property
    def dim(self) -> int:
        return len(next(iter(self.table.values())))

    def _embed(self, text: str):
        self.calls += 1
        return self.table[text]


ENERGY = {
    "low": [1, 0, 0, 0],
    "soft": [1, 0, 0, 0],
    "soft to moderate": [0, 1, 0, 0],
    "moderate": [0, 0, 1, 0],
    "consistent": [0, 0, 0, 1],
    "steady": [0, 0, 0, 1],
    "very quiet": [0.9, 0.1, 0, 0],
    "strong and steady": [0, 0, 0.2, 0.9],
    "in between": [0, 1, 1, 0],
    "silence": [0, 0, 0, 0],
}


def _energy(*phrases: str) -> AcousticDescription:
    return AcousticDescription(feature=AcousticFeature.energy, phrases=phrases)


def test_builtin_scales_have_four_levels():
    scales = builtin_scales()
    assert set(scales) == {
        AcousticFeature.energy,
        AcousticFeature.discomfort_fatigue,
    }
    for feature, scale in scales.items():
        assert scale.name == feature.value
        assert [lv.level for lv in scale.levels] == [1, 2, 3, 4]
    assert scales[AcousticFeature.energy].level(1).anchors == ("low", "soft")


def test_anchor_score_picks_the_closest_level():
    embed = EmbeddingCache(TableEmbedder(ENERGY))
    scale = builtin_scales()[AcousticFeature.energy]
    assert anchor_score("very quiet", scale, embed) == 1
    assert anchor_score("strong and steady", scale, embed) == 4
    assert anchor_score("moderate", scale, embed) == 3
    # Equally close to levels 2 and 3.
    assert anchor_score("in between", scale, embed) == 2


def test_cache_embeds_each_string_once():
    embedder = TableEmbedder(ENERGY)
    embed = EmbeddingCache(embedder)
    scale = builtin_scales()[AcousticFeature.energy]
    anchor_score("very quiet", scale, embed)
    first = embedder.calls
    anchor_score("very quiet", scale, embed)
    assert embedder.calls == first == len(embed) == 7


def test_cache_rejects_bad_vectors():
    embed = EmbeddingCache(TableEmbedder(ENERGY))
    with pytest.raises(EmbeddingFailed):
        embed("silence")
    with pytest.raises(EmbeddingFailed):
        embed("not in the table")


def test_quantify_visit_aggregates():
    embed = EmbeddingCache(TableEmbedder(ENERGY))
    scale = builtin_scales()[AcousticFeature.energy]
    q = quantify_visit(_energy("very quiet", "strong and steady"), scale, embed)
    assert q.levels == (1, 4)
    assert q.visit_level == 2.5
    assert quantify_visit(
        _energy("very quiet", "strong and steady"), scale, embed, "max"
    ).visit_level == 4.0
    assert quantify_visit(
        _energy("very quiet", "strong and steady"), scale, embed, "first"
    ).visit_level == 1.0
    with pytest.raises(NoPhrases):
        quantify_visit(_energy(), scale, embed)


def test_visit_level_is_serialised():
    q = QuantifiedFeature(feature=AcousticFeature.energy, levels=(2, 3))
    assert q.model_dump()["visit_level"] == 2.5


def test_quantify_descriptions_skips_unscaled_and_empty():
    descriptions = [
        AcousticDescription(feature=AcousticFeature.emotion, phrases=("calm",)),
        _energy("low energy", "quiet"),
        AcousticDescription(feature=AcousticFeature.discomfort_fatigue),
    ]
    warnings: list[str] = []
    out = quantify_descriptions(
        descriptions,
        EmbeddingCache(MockTextEmbedder(seed=0)),
        warnings=warnings,
    )
    assert [q.feature for q in out] == [AcousticFeature.energy]
    assert all(1 <= lv <= 4 for lv in out[0].levels)
    assert len(warnings) == 1


def test_every_anchor_maps_to_its_own_level():
    for scale in builtin_scales().values():
        anchors = [a for lv in scale.levels for a in lv.anchors]
        one_hot = t.eye(len(anchors)).tolist()
        embed = EmbeddingCache(TableEmbedder(dict(zip(anchors, one_hot))))
        for lv in scale.levels:
            for anchor in lv.anchors:
                assert anchor_score(anchor, scale, embed) == lv.level


def test_anchor_score_ignores_scale():
    scale = builtin_scales()[AcousticFeature.discomfort_fatigue]
    anchors = [a for lv in scale.levels for a in lv.anchors]
    gen = t.Generator().manual_seed(0)
    for _ in range(500):
        vectors = t.randn(len(anchors) + 1, 6, generator=gen, dtype=t.float64)
        table = dict(zip([*anchors, "query"], vectors.tolist()))
        embed = EmbeddingCache(TableEmbedder(table))
        level = anchor_score("query", scale, embed)
        factors = t.rand(len(table), generator=gen, dtype=t.float64) * 5 + 0.1
        scaled = {
            k: [f * x for x in v]
            for (k, v), f in zip(table.items(), factors.tolist())
        }
        embed = EmbeddingCache(TableEmbedder(scaled))
        assert anchor_score("query", scale, embed) == level
