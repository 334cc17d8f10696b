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
Word-level transcription, speaker attribution and sentence grouping.
"""
from __future__ import annotations

import logging

from dataclasses import dataclass
from typing import Optional, Sequence

from carevoice.audio import AudioBuffer
from carevoice.backends.base import ASR
from carevoice.core import GlobalSpeakerId, Sentence, SpeakerSegment, TimedWord

__all__ = [
    "TERMINATORS",
    "CLOSING_MARKS",
    "SentenceCandidate",
    "ends_sentence",
    "transcribe",
    "assign_word_speakers",
    "group_sentences",
    "filter_sentences",
    "speaker_transcript",
]

logger = logging.getLogger(__name__)

TERMINATORS = ".!?"
CLOSING_MARKS = "\"')]}”’"

# Overlaps must beat the current best by this much to take a word.
_OVERLAP_TOL = 1e-9


def transcribe(audio: AudioBuffer, asr: ASR) -> list[TimedWord]:
    """Word-level transcript ordered by start time, with no speakers yet."""
    words = [
        TimedWord(text=text, start_s=s, end_s=e)
        for text, s, e in asr.transcribe(audio)
        if text.strip()
    ]
    words.sort(key=lambda w: (w.start_s, w.end_s))
    logger.debug("transcribed %d words", len(words))
    return words


def _overlap(word: TimedWord, seg: SpeakerSegment) -> float:
    if word.start_s == word.end_s:
        # Zero-length words count as fully inside a containing segment.
        inside = seg.start_s <= word.start_s < seg.end_s
        return 1.0 if inside else 0.0
    return max(0.0, min(word.end_s, seg.end_s) - max(word.start_s, seg.start_s))


def assign_word_speakers(
    words: Sequence[TimedWord], segments: Sequence[SpeakerSegment]
) -> list[TimedWord]:
    """Gives each word the speaker with the largest total overlap; ties go
    to the lower speaker id and words overlapping nothing stay unassigned.

    A zero-length word has no interval to overlap, so it is placed by its
    instant instead: it goes to the speakers whose half-open segments
    `[start, end)` contain it, and stays unassigned in a gap."""
    out = []
    for word in words:
        totals: dict[GlobalSpeakerId, float] = {}
        for seg in segments:
            if seg.start_s > word.end_s:
                break
            ov = _overlap(word, seg)
            if ov > 0:
                totals[seg.speaker] = totals.get(seg.speaker, 0.0) + ov
        speaker: Optional[GlobalSpeakerId] = None
        best = 0.0
        for spk in sorted(totals):
            if totals[spk] > best + _OVERLAP_TOL:
                speaker, best = spk, totals[spk]
        out.append(word.model_copy(update={"speaker": speaker}))
    return out


@dataclass(frozen=True)
class SentenceCandidate:
    words: tuple[TimedWord, ...]
    terminated: bool

    @property
    def speakers(self) -> set[Optional[GlobalSpeakerId]]:
        return {w.speaker for w in self.words}


def ends_sentence(
    text: str, terminators: str = TERMINATORS, closing: str = CLOSING_MARKS
) -> bool:
    stripped = text.rstrip().rstrip(closing)
    return len(stripped) > 0 and stripped[-1] in terminators


def group_sentences(
    words: Sequence[TimedWord],
    terminators: str = TERMINATORS,
    closing: str = CLOSING_MARKS,
) -> list[SentenceCandidate]:
    """Splits the word stream after every terminating word. Trailing words
    without a terminator form a final unterminated candidate."""
    out: list[SentenceCandidate] = []
    current: list[TimedWord] = []
    for word in words:
        current.append(word)
        if ends_sentence(word.text, terminators, closing):
            out.append(SentenceCandidate(tuple(current), True))
            current = []
    if current:
        out.append(SentenceCandidate(tuple(current), False))
    return out


def filter_sentences(candidates: Sequence[SentenceCandidate]) -> list[Sentence]:
    """Keeps terminated candidates whose words all carry one speaker."""
    kept = []
    for c in candidates:
        speakers = c.speakers
        if not c.terminated or None in speakers or len(speakers) != 1:
            continue
        kept.append(Sentence(words=c.words, speaker=next(iter(speakers))))
    logger.debug("kept %d of %d sentences", len(kept), len(candidates))
    return kept


def speaker_transcript(words: Sequence[TimedWord]) -> str:
    """Renders attributed words as "Speaker k: ..." lines, one per turn.
    Unassigned words are left out."""
    lines: list[tuple[GlobalSpeakerId, list[str]]] = []
    for w in words:
        if w.speaker is None:
            continue
        if lines and lines[-1][0] == w.speaker:
            lines[-1][1].append(w.text)
        else:
            lines.append((w.speaker, [w.text]))
    return "\n".join(f"Speaker {spk}: {' '.join(ws)}" for spk, ws in lines)
