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
Chunked diarization and cross-chunk speaker stitching.

Long recordings are diarized in overlapping chunks, each with its own local
speaker labels. One embedding per local speaker is clustered (average
linkage over cosine distance) into at most four recording-wide speakers, and
the chunk outputs are merged into one timeline.
"""
from __future__ import annotations

import logging
import torch as t

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence
from torchtyping import TensorType as Tensor

from carevoice.audio import (
    AudioBuffer,
    chunk_plan,
    concat_with_silence,
    slice_audio,
)
from carevoice.backends.base import BackendSuite, Diarizer, SpeakerEmbedder
from carevoice.config import PipelineConfig
from carevoice.core import MAX_GLOBAL_SPEAKERS, GlobalSpeakerId, SpeakerSegment
from carevoice.errors import (
    BackendUnavailable,
    ChunkFailed,
    EmbeddingFailed,
    EmptyInput,
)
from carevoice.logs import map_in_context
from carevoice.utils import TIE_TOL, cosine_matrix, is_valid_embedding

__all__ = [
    "LocalSpeakerKey",
    "LocalSegment",
    "ChunkResult",
    "DiarizationResult",
    "StitchResult",
    "diarize_recording",
    "embed_local_speakers",
    "cluster_speakers",
    "unify_labels",
    "stitch",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class LocalSpeakerKey:
    """A speaker label as one chunk's diarization emitted it."""

    chunk_index: int
    local_label: str

    def __str__(self) -> str:
        return f"{self.chunk_index}:{self.local_label}"


@dataclass(frozen=True)
class LocalSegment:
    key: LocalSpeakerKey
    start_s: float
    end_s: float

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start_s + self.end_s)


@dataclass(frozen=True)
class ChunkResult:
    index: int
    start_s: float
    end_s: float
    segments: tuple[LocalSegment, ...] = ()
    failed: bool = False

    def keys(self) -> list[LocalSpeakerKey]:
        return sorted({s.key for s in self.segments})


@dataclass
class DiarizationResult:
    chunks: list[ChunkResult]
    warnings: list[str] = field(default_factory=list)

    @property
    def failed(self) -> list[int]:
        return [c.index for c in self.chunks if c.failed]

    def segments(self) -> list[LocalSegment]:
        return [s for c in self.chunks for s in c.segments]

    def durations(self) -> dict[LocalSpeakerKey, float]:
        totals: dict[LocalSpeakerKey, float] = {}
        for s in self.segments():
            totals[s.key] = totals.get(s.key, 0.0) + s.duration
        return totals


def _top_speakers(
    segments: list[LocalSegment], max_speakers: int
) -> list[LocalSegment]:
    totals: dict[LocalSpeakerKey, float] = {}
    for s in segments:
        totals[s.key] = totals.get(s.key, 0.0) + s.duration
    if len(totals) <= max_speakers:
        return segments
    ranked = sorted(totals, key=lambda k: (-totals[k], k))
    keep = set(ranked[:max_speakers])
    logger.warning(
        "chunk %d: %d local speakers, keeping the %d longest",
        segments[0].key.chunk_index,
        len(totals),
        max_speakers,
    )
    return [s for s in segments if s.key in keep]


def _diarize_chunk(
    audio: AudioBuffer,
    diarizer: Diarizer,
    index: int,
    span: tuple[float, float],
    max_speakers: int,
) -> ChunkResult:
    start, end = span
    raw = diarizer.diarize(slice_audio(audio, start, end), max_speakers)
    segments = []
    for label, s, e in raw:
        s, e = max(0.0, s), min(e, end - start)
        if s < e:
            key = LocalSpeakerKey(index, str(label))
            segments.append(LocalSegment(key, start + s, start + e))
    segments.sort(key=lambda x: (x.start_s, x.end_s, x.key))
    if segments:
        segments = _top_speakers(segments, max_speakers)
    return ChunkResult(index, start, end, tuple(segments))


def diarize_recording(
    audio: AudioBuffer,
    diarizer: Diarizer,
    chunk_s: float = 250.0,
    overlap_s: float = 5.0,
    max_speakers: int = MAX_GLOBAL_SPEAKERS,
    jobs: int = 1,
) -> DiarizationResult:
    """Diarizes every planned chunk; segment times come back in recording
    time. A failing chunk is recorded and skipped; only a run where every
    chunk fails raises BackendUnavailable."""
    plan = chunk_plan(audio.duration_s, chunk_s, overlap_s)

    def run(i: int) -> ChunkResult:
        try:
            return _diarize_chunk(audio, diarizer, i, plan[i], max_speakers)
        except Exception as e:
            failure = ChunkFailed(i, e)
            logger.warning(str(failure))
            return ChunkResult(i, *plan[i], failed=True)

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        chunks = list(map_in_context(pool, run, range(len(plan))))

    result = DiarizationResult(chunks)
    result.warnings.extend(
        str(ChunkFailed(c.index)) for c in chunks if c.failed
    )
    if all(c.failed for c in chunks):
        raise BackendUnavailable(
            f"diarization failed on all {len(chunks)} chunks"
        )
    return result


def embed_local_speakers(
    audio: AudioBuffer,
    chunks: Sequence[ChunkResult],
    embedder: SpeakerEmbedder,
    jobs: int = 1,
) -> tuple[dict[LocalSpeakerKey, Tensor["D"]], list[EmbeddingFailed]]:
    """One embedding per local speaker, from the back-to-back concatenation
    of that speaker's segments in its chunk. Speakers whose embedding fails
    are left out and reported."""
    by_key: dict[LocalSpeakerKey, list[LocalSegment]] = {}
    for c in chunks:
        for s in c.segments:
            by_key.setdefault(s.key, []).append(s)
    keys = sorted(by_key)

    def run(key: LocalSpeakerKey) -> Tensor["D"]:
        pieces = [slice_audio(audio, s.start_s, s.end_s) for s in by_key[key]]
        vec = embedder.embed(concat_with_silence(pieces, gap_s=0.0))
        if not is_valid_embedding(vec):
            raise EmbeddingFailed(key, "zero or non-finite vector")
        return vec

    def safe(key: LocalSpeakerKey):
        try:
            return run(key)
        except EmbeddingFailed as e:
            return e
        except Exception as e:
            return EmbeddingFailed(key, repr(e))

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(map_in_context(pool, safe, keys))

    embeddings: dict[LocalSpeakerKey, Tensor["D"]] = {}
    failures: list[EmbeddingFailed] = []
    for key, res in zip(keys, results):
        if isinstance(res, EmbeddingFailed):
            logger.warning(str(res))
            failures.append(res)
        else:
            embeddings[key] = res
    return embeddings, failures


def _average_linkage(
    dist: Tensor["N", "N"], n_clusters: int
) -> list[list[int]]:
    """Merges clusters of row indices until `n_clusters` remain.

    Row indices follow the sorted key order, so a cluster's smallest index is
    its smallest key. Candidate merges are scanned in ascending order of
    (smallest index of one cluster, smallest index of the other); a later
    pair only wins by being closer than the current best by more than the tie
    tolerance.
    """
    clusters: list[list[int]] = [[i] for i in range(dist.shape[0])]
    while len(clusters) > n_clusters:
        best: Optional[tuple[int, int, float]] = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                d = float(dist[clusters[a]][:, clusters[b]].mean())
                if best is None or d < best[2] - TIE_TOL:
                    best = (a, b, d)
        assert best is not None
        a, b, _ = best
        clusters[a] = sorted(clusters[a] + clusters[b])
        del clusters[b]
    return clusters


def cluster_speakers(
    embeddings: Mapping[LocalSpeakerKey, Tensor["D"]],
    k: int = MAX_GLOBAL_SPEAKERS,
    durations: Optional[Mapping[LocalSpeakerKey, float]] = None,
) -> dict[LocalSpeakerKey, GlobalSpeakerId]:
    """Average-linkage agglomerative clustering on cosine distance, cut at
    min(k, n) clusters.

    Global ids 0.. are assigned by total speech duration (descending), ties
    going to the cluster holding the smallest key.
    """
    if len(embeddings) == 0:
        raise EmptyInput("cluster_speakers needs at least one embedding")
    assert k >= 1, "k must be positive"
    keys = sorted(embeddings)
    x = t.stack([embeddings[key].to(t.float64) for key in keys])
    dist = (1.0 - cosine_matrix(x)).clamp_min(0.0)
    clusters = _average_linkage(dist, min(k, len(keys)))

    durations = durations or {}

    def order(members: list[int]) -> tuple[float, LocalSpeakerKey]:
        total = sum(durations.get(keys[i], 0.0) for i in members)
        return (-total, keys[members[0]])

    mapping: dict[LocalSpeakerKey, GlobalSpeakerId] = {}
    for gid, members in enumerate(sorted(clusters, key=order)):
        for i in members:
            mapping[keys[i]] = gid
    return mapping


def _in_earlier_overlap(
    seg: LocalSegment, chunks: Sequence[ChunkResult]
) -> bool:
    """True if the segment lies (by midpoint) in the region its chunk shares
    with a preceding chunk that produced output."""
    i = seg.key.chunk_index
    if i == 0 or chunks[i - 1].failed:
        return False
    return chunks[i].start_s <= seg.midpoint < chunks[i - 1].end_s


def unify_labels(
    chunks: Sequence[ChunkResult],
    cluster_map: Mapping[LocalSpeakerKey, GlobalSpeakerId],
) -> list[SpeakerSegment]:
    """Relabels chunk segments with global ids and merges the chunks.

    Inside an overlap region the earlier chunk wins: later-chunk segments
    whose midpoint falls in the overlap are dropped. Surviving segments of the
    same speaker from different chunks that still overlap are joined.
    """
    assert all(
        c.index == i for i, c in enumerate(chunks)
    ), "chunks out of order"
    kept: list[SpeakerSegment] = []
    unmapped: set[LocalSpeakerKey] = set()
    for c in chunks:
        for seg in c.segments:
            if seg.key not in cluster_map:
                unmapped.add(seg.key)
                continue
            if _in_earlier_overlap(seg, chunks):
                continue
            kept.append(
                SpeakerSegment(
                    speaker=cluster_map[seg.key],
                    start_s=seg.start_s,
                    end_s=seg.end_s,
                    source_chunk=c.index,
                )
            )
    for key in sorted(unmapped):
        logger.warning("dropping segments of unclustered speaker %s", key)

    kept.sort(key=lambda s: (s.start_s, s.end_s, s.speaker))
    merged: list[SpeakerSegment] = []
    last: dict[GlobalSpeakerId, int] = {}
    for seg in kept:
        j = last.get(seg.speaker)
        if j is not None:
            prev = merged[j]
            crosses = prev.source_chunk != seg.source_chunk
            if crosses and seg.start_s < prev.end_s:
                merged[j] = prev.model_copy(
                    update={"end_s": max(prev.end_s, seg.end_s)}
                )
                continue
        last[seg.speaker] = len(merged)
        merged.append(seg)
    return merged


@dataclass
class StitchResult:
    segments: list[SpeakerSegment]
    diarization: DiarizationResult
    cluster_map: dict[LocalSpeakerKey, GlobalSpeakerId]
    warnings: list[str]

    def to_json(self) -> dict:
        return {
            "segments": [s.model_dump() for s in self.segments],
            "chunks": [
                {
                    "index": c.index,
                    "start_s": c.start_s,
                    "end_s": c.end_s,
                    "failed": c.failed,
                    "segments": [
                        {
                            "local_label": s.key.local_label,
                            "start_s": s.start_s,
                            "end_s": s.end_s,
                        }
                        for s in c.segments
                    ],
                }
                for c in self.diarization.chunks
            ],
            "clusters": {
                str(k): v for k, v in sorted(self.cluster_map.items())
            },
            "warnings": list(self.warnings),
        }


def stitch(
    audio: AudioBuffer,
    backends: BackendSuite,
    config: Optional[PipelineConfig] = None,
    jobs: int = 1,
) -> StitchResult:
    """Chunked diarization, local-speaker embeddings, clustering and
    unification in one call."""
    config = config or PipelineConfig()
    diarization = diarize_recording(
        audio,
        backends.diarizer,
        chunk_s=config.chunk_s,
        overlap_s=config.overlap_s,
        max_speakers=config.max_speakers,
        jobs=jobs,
    )
    warnings = list(diarization.warnings)
    embeddings, failures = embed_local_speakers(
        audio, diarization.chunks, backends.speaker_embedder, jobs=jobs
    )
    warnings.extend(str(f) for f in failures)
    if not embeddings:
        logger.warning("no speaker could be embedded; empty timeline")
        return StitchResult([], diarization, {}, warnings)
    cluster_map = cluster_speakers(
        embeddings, config.max_speakers, diarization.durations()
    )
    segments = unify_labels(diarization.chunks, cluster_map)
    logger.info(
        "stitched %d segments, %d speakers, %d chunks",
        len(segments),
        len(set(cluster_map.values())),
        len(diarization.chunks),
    )
    return StitchResult(segments, diarization, cluster_map, warnings)
