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
"""Utility functions"""
from __future__ import annotations

import hashlib
import math
import torch as t

from typing import Callable, Iterable, Optional, Sequence, TypeVar, Union
from torchtyping import TensorType as Tensor

T = TypeVar("T")

# Distances closer than this are treated as exact ties.
TIE_TOL = 1e-12


def default(val: Optional[T], d: Union[T, Callable[[], T]]) -> T:
    if val is not None:
        return val
    return d() if callable(d) else d


def round_half_away(x: float) -> int:
    """Rounds to the nearest integer, with halves going away from zero."""
    r = math.floor(abs(x) + 0.5)
    return int(r if x >= 0 else -r)


def digest(*parts: Union[str, bytes]) -> str:
    """Hex sha256 over the given parts, separated so that ("ab", "c") and
    ("a", "bc") differ."""
    h = hashlib.sha256()
    for p in parts:
        b = p.encode("utf-8") if isinstance(p, str) else p
        h.update(len(b).to_bytes(8, "little"))
        h.update(b)
    return h.hexdigest()


def seeded_generator(seed: int, *parts: str) -> t.Generator:
    """A torch generator seeded from an integer seed and some string keys."""
    key = int(digest(str(seed), *parts)[:15], 16)
    return t.Generator().manual_seed(key)


def is_valid_embedding(x: Tensor["D"]) -> bool:
    """Embeddings must be finite and non-zero."""
    return bool(t.isfinite(x).all()) and bool((x != 0).any())


def unit(x: Tensor[..., "D"]) -> Tensor[..., "D"]:
    x = x.to(t.float64)
    return x / x.norm(dim=-1, keepdim=True)


def cosine_similarity(a: Tensor["D"], b: Tensor["D"]) -> float:
    assert a.shape == b.shape, f"shape mismatch: {a.shape} vs {b.shape}"
    return float(unit(a) @ unit(b))


def cosine_matrix(x: Tensor["N", "D"]) -> Tensor["N", "N"]:
    """Pairwise cosine similarity between the rows of x (float64)."""
    u = unit(x)
    return u @ u.T


def argmax_lowest(
    items: Iterable[tuple[T, float]], tol: float = TIE_TOL
) -> tuple[T, float]:
    """Returns the (key, value) with the largest value. Keys must arrive in
    ascending order; values within `tol` of the best keep the earlier key."""
    best: Optional[tuple[T, float]] = None
    for key, value in items:
        if best is None or value > best[1] + tol:
            best = (key, value)
    if best is None:
        raise ValueError("argmax over an empty sequence")
    return best


def mean(xs: Sequence[float]) -> float:
    assert len(xs) > 0, "mean of an empty sequence"
    return math.fsum(xs) / len(xs)
