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
Speaker re-verification and per-speaker clip assembly.

Every sentence is embedded (on enhanced audio when an enhancer is
configured) and compared with the mean embedding of each speaker. Sentences
whose closest mean belongs to another speaker are discarded. The surviving
sentences of each speaker, cut from the original audio, form that speaker's
analysis clip.
"""
from __future__ import annotations

import logging
import torch as t

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence
from torchtyping import TensorType as Tensor

from carevoice.audio import (
    AudioBuffer,
    concat_with_silence,
    slice_audio,
    truncate,
)
from carevoice.backends.base import BackendSuite, Enhancer, SpeakerEmbedder
from carevoice.config import PipelineConfig
from carevoice.core import GlobalSpeakerId, Sentence
from carevoice.errors import (
    EmbeddingFailed,
    EmptyMeans,
    EnhancementFailed,
    NoSentencesForSpeaker,
    NoUsableSpeech,
)
from carevoice.logs import map_in_context
from carevoice.utils import argmax_lowest, cosine_similarity, is_valid_embedding

__all__ = [
    "enhance",
    "embed_sentences",
    "mean_embeddings",
    "reassign",
    "verify_filter",
    "build_speaker_clip",
    "ReverifyResult",
    "reverify",
]

logger = logging.getLogger(__name__)


def enhance(
    audio: AudioBuffer, enhancer: Optional[Enhancer] = None
) -> AudioBuffer:
    """Enhanced audio, or the input itself when there is no enhancer or the
    enhancer fails."""
    if enhancer is None:
        return audio
    try:
        out = enhancer.enhance(audio)
        if out.sample_rate_hz != audio.sample_rate_hz or len(out) != len(audio):
            raise EnhancementFailed(
                f"enhancer changed the buffer shape ({len(audio)} samples at "
                f"{audio.sample_rate_hz} Hz -> {len(out)} at "
                f"{out.sample_rate_hz} Hz)"
            )
        return out
    except Exception as e:
        logger.warning("enhancement failed, using original audio: %r", e)
        return audio


def embed_sentences(
    sentences: Sequence[Sentence],
    audio: AudioBuffer,
    embedder: SpeakerEmbedder,
    jobs: int = 1,
) -> tuple[dict[Sentence, Tensor["D"]], list[EmbeddingFailed]]:
    """Embeds each sentence's time span of `audio`."""

    def run(s: Sentence):
        try:
            if s.duration <= 0:
                raise EmbeddingFailed(s.start_s, "zero-length sentence")
            vec = embedder.embed(slice_audio(audio, s.start_s, s.end_s))
            if not is_valid_embedding(vec):
                raise EmbeddingFailed(s.start_s, "zero or non-finite vector")
            return vec
        except EmbeddingFailed as e:
            return e
        except Exception as e:
            return EmbeddingFailed(s.start_s, repr(e))

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(map_in_context(pool, run, sentences))

    embeddings: dict[Sentence, Tensor["D"]] = {}
    failures: list[EmbeddingFailed] = []
    for s, res in zip(sentences, results):
        if isinstance(res, EmbeddingFailed):
            logger.warning(str(res))
            failures.append(res)
        else:
            embeddings[s] = res
    return embeddings, failures


def mean_embeddings(
    sentence_embeddings: Mapping[Sentence, Tensor["D"]],
    speakers: Optional[Iterable[GlobalSpeakerId]] = None,
) -> dict[GlobalSpeakerId, Tensor["D"]]:
    """Arithmetic mean embedding per speaker over that speaker's sentences.

    Speakers named in `speakers` that own no sentence are left out with a
    warning.
    """
    groups: dict[GlobalSpeakerId, list[Tensor["D"]]] = {}
    for sentence, vec in sentence_embeddings.items():
        groups.setdefault(sentence.speaker, []).append(vec.to(t.float64))
    for spk in sorted(set(speakers or ())):
        if spk not in groups:
            logger.warning(str(NoSentencesForSpeaker(spk)))
    return {spk: t.stack(groups[spk]).mean(dim=0) for spk in sorted(groups)}


def reassign(
    embedding: Tensor["D"], means: Mapping[GlobalSpeakerId, Tensor["D"]]
) -> tuple[GlobalSpeakerId, float]:
    """The speaker whose mean is most cosine-similar; ties go to the lower
    id."""
    if len(means) == 0:
        raise EmptyMeans("no speaker means to compare against")
    return argmax_lowest(
        (spk, cosine_similarity(embedding, means[spk])) for spk in sorted(means)
    )


def verify_filter(
    sentences: Sequence[Sentence],
    sentence_embeddings: Mapping[Sentence, Tensor["D"]],
    means: Mapping[GlobalSpeakerId, Tensor["D"]],
) -> list[Sentence]:
    """Keeps the sentences whose reassigned speaker is their own. Sentences
    without an embedding cannot be verified and are dropped."""
    kept = []
    for s in sentences:
        vec = sentence_embeddings.get(s)
        if vec is None:
            continue
        spk, _ = reassign(vec, means)
        if spk == s.speaker:
            kept.append(s)
    return kept


def build_speaker_clip(
    sentences: Sequence[Sentence],
    audio: AudioBuffer,
    min_sentence_s: float = 0.5,
    gap_s: float = 0.5,
    cap_s: float = 30.0,
) -> AudioBuffer:
    """Joins the speaker's sentences longer than `min_sentence_s`, in time
    order with `gap_s` of silence between them, and keeps the first
    `cap_s` seconds."""
    usable = [
        s
        for s in sorted(sentences, key=lambda s: (s.start_s, s.end_s))
        if s.duration > min_sentence_s
    ]
    if not usable:
        raise NoUsableSpeech(
            f"no sentence longer than {min_sentence_s}s "
            f"among {len(sentences)}"
        )
    pieces = [slice_audio(audio, s.start_s, s.end_s) for s in usable]
    return truncate(concat_with_silence(pieces, gap_s), cap_s)


@dataclass
class ReverifyResult:
    verified: list[Sentence]
    clips: dict[GlobalSpeakerId, AudioBuffer]
    # Cosine similarity of every embedded sentence to its own speaker mean.
    similarities: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def reverify(
    sentences: Sequence[Sentence],
    audio: AudioBuffer,
    backends: BackendSuite,
    config: Optional[PipelineConfig] = None,
    jobs: int = 1,
) -> ReverifyResult:
    """Enhancement, sentence embeddings, the verification filter and one
    clip per speaker with usable speech."""
    config = config or PipelineConfig()
    enhanced = enhance(audio, backends.enhancer)
    embeddings, failures = embed_sentences(
        sentences, enhanced, backends.speaker_embedder, jobs=jobs
    )
    warnings = [str(f) for f in failures]
    speakers = sorted({s.speaker for s in sentences})
    means = mean_embeddings(embeddings, speakers)
    if not means:
        warnings.append("no sentence could be embedded")
        return ReverifyResult([], {}, [], warnings)

    verified = verify_filter(sentences, embeddings, means)
    similarities = [
        cosine_similarity(vec, means[s.speaker])
        for s, vec in embeddings.items()
    ]
    logger.info(
        "verified %d of %d sentences", len(verified), len(sentences)
    )

    clips: dict[GlobalSpeakerId, AudioBuffer] = {}
    for spk in sorted({s.speaker for s in verified}):
        own = [s for s in verified if s.speaker == spk]
        try:
            clips[spk] = build_speaker_clip(
                own,
                audio,
                min_sentence_s=config.min_sentence_s,
                gap_s=config.gap_s,
                cap_s=config.clip_cap_s,
            )
        except NoUsableSpeech as e:
            logger.warning("speaker %d: %s", spk, e)
            warnings.append(f"speaker {spk}: {e}")
    return ReverifyResult(verified, clips, similarities, warnings)
