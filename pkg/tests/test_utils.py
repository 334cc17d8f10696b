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

from math import isclose

from carevoice.utils import (
    argmax_lowest,
    cosine_matrix,
    cosine_similarity,
    default,
    digest,
    is_valid_embedding,
    mean,
    round_half_away,
    seeded_generator,
)


def test_round_half_away():
    assert round_half_away(0.5) == 1
    assert round_half_away(1.5) == 2
    assert round_half_away(2.5) == 3
    assert round_half_away(-0.5) == -1
    assert round_half_away(2.4999) == 2


def test_default():
    assert default(None, 3) == 3
    assert default(0, 3) == 0
    assert default(None, lambda: [1]) == [1]


def test_digest_separates_parts():
    assert digest("ab", "c") != digest("a", "bc")
    assert digest("x") == digest(b"x")
    assert len(digest("x")) == 64


def test_seeded_generator_is_reproducible():
    a = t.randn(8, generator=seeded_generator(42, "text", "low energy"))
    b = t.randn(8, generator=seeded_generator(42, "text", "low energy"))
    c = t.randn(8, generator=seeded_generator(43, "text", "low energy"))
    assert t.equal(a, b)
    assert not t.equal(a, c)


def test_valid_embedding():
    assert is_valid_embedding(t.tensor([0.0, 1.0]))
    assert not is_valid_embedding(t.zeros(4))
    assert not is_valid_embedding(t.tensor([1.0, float("nan")]))
    assert not is_valid_embedding(t.tensor([float("inf"), 1.0]))


def test_cosine():
    a = t.tensor([1.0, 0.0])
    b = t.tensor([0.0, 2.0])
    assert isclose(cosine_similarity(a, b), 0.0, abs_tol=1e-12)
    assert isclose(cosine_similarity(a, 3 * a), 1.0)
    m = cosine_matrix(t.stack([a, b, -a]))
    assert m.shape == (3, 3)
    assert isclose(float(m[0, 2]), -1.0)
    assert t.allclose(t.diagonal(m), t.ones(3, dtype=t.float64))


def test_argmax_lowest_breaks_ties_towards_first_key():
    assert argmax_lowest([(1, 0.5), (2, 0.9), (3, 0.9)]) == (2, 0.9)
    assert argmax_lowest([(1, 0.5), (2, 0.5 + 1e-14)])[0] == 1
    with pytest.raises(ValueError):
        argmax_lowest([])


def test_mean():
    assert isclose(mean([1.0, 2.0, 4.0]), 7 / 3)
    assert mean([0.1] * 10) == 0.1
