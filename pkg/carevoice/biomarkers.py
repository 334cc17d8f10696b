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
Vocal biomarker descriptions from an audio-language model.

The model is asked for short free-form phrases per acoustic feature; nothing
here ever sees a transcript.
"""
from __future__ import annotations

import logging
import re
import string

from typing import Callable, Optional, Sequence, TypeVar

from carevoice.audio import AudioBuffer
from carevoice.backends.base import AudioLM
from carevoice.clinical import PromptTemplate
from carevoice.core import (
    AcousticDescription,
    AcousticFeature,
    AgeCategory,
    Gender,
    GlobalSpeakerId,
    SpeakerRole,
    _Frozen,
)
from carevoice.errors import (
    BackendError,
    BackendUnavailable,
    ClipDurationError,
    ScriptMiss,
    UnparseableReply,
)

__all__ = [
    "SpeakerProfilePrediction",
    "VoiceReport",
    "normalize_phrases",
    "parse_descriptions",
    "describe_voice",
    "parse_profile",
    "predict_gender_age",
]

logger = logging.getLogger(__name__)

T = TypeVar("T")

MAX_CLIP_S = 30.0
_EPS = 1e-9


class SpeakerProfilePrediction(_Frozen):
    gender: Gender = Gender.unknown
    age_category: AgeCategory = AgeCategory.unknown


class VoiceReport(_Frozen):
    """Everything the audio-language model said about one speaker clip."""

    speaker: GlobalSpeakerId
    role: SpeakerRole = SpeakerRole.unknown
    clip_duration_s: float
    low_confidence: bool = False
    descriptions: tuple[AcousticDescription, ...]
    profile: Optional[SpeakerProfilePrediction] = None

    def phrases(self, feature: AcousticFeature) -> tuple[str, ...]:
        for d in self.descriptions:
            if d.feature is feature:
                return d.phrases
        return ()


_STRIP = string.punctuation + "“”‘’«»…" + " "


def normalize_phrases(raw: Sequence[str]) -> list[str]:
    """Lowercases, collapses whitespace, trims surrounding punctuation and
    drops empties and repeats, keeping first-seen order."""
    out: list[str] = []
    seen: set[str] = set()
    for phrase in raw:
        p = " ".join(phrase.lower().split()).strip(_STRIP)
        if p and p not in seen:
            seen.add(p)
            out.append(p)
    return out


def _check_clip(clip: AudioBuffer) -> None:
    if not 0 < clip.duration_s <= MAX_CLIP_S + _EPS:
        raise ClipDurationError(
            f"clips must last (0, {MAX_CLIP_S:g}] s, got {clip.duration_s:.3f}"
        )


def _complete_until_parsed(
    alm: AudioLM,
    clip: AudioBuffer,
    instructions: str,
    parse: Callable[[str], T],
    attempts: int,
) -> T:
    last: Optional[UnparseableReply] = None
    prompt = instructions
    for attempt in range(attempts):
        try:
            reply = alm.complete(clip, prompt)
        except ScriptMiss:
            raise
        except BackendError as e:
            raise BackendUnavailable(f"{alm.model_id}: {e}") from e
        try:
            return parse(reply)
        except UnparseableReply as e:
            logger.warning(
                "unusable reply from %s (attempt %d/%d): %s",
                alm.model_id,
                attempt + 1,
                attempts,
                e,
            )
            last = e
            prompt = (
                f"{instructions}\n\nYour previous reply could not be used "
                f"({e}). Follow the requested format exactly."
            )
    assert last is not None
    raise last


def _instructions(template: PromptTemplate) -> str:
    return "\n\n".join(
        m["content"] for m in template.render() if m["content"].strip()
    )


# Descriptions ----------------------------------------------------------------

_FEATURE_KEYWORDS: tuple[tuple[str, AcousticFeature], ...] = (
    ("emotion", AcousticFeature.emotion),
    ("quality", AcousticFeature.voice_quality),
    ("prosody", AcousticFeature.prosody),
    ("intonation", AcousticFeature.prosody),
    ("fluency", AcousticFeature.fluency),
    ("articulation", AcousticFeature.articulation),
    ("pronunciation", AcousticFeature.articulation),
    ("energy", AcousticFeature.energy),
    ("discomfort", AcousticFeature.discomfort_fatigue),
    ("fatigue", AcousticFeature.discomfort_fatigue),
)

_LABELED = re.compile(
    r"^\s*(?:[-*•]\s+|#+\s*|\d+[.)]\s*)?\**\s*([A-Za-z][A-Za-z /&-]{1,48}?)"
    r"\s*\**\s*:\s*\**\s*(.*)$"
)
_HEADER_ONLY = re.compile(r"^\s*(?:#+\s*|\d+[.)]\s*)?\*\*(.+?)\*\*\s*:?\s*$")
_MD_HEADER = re.compile(r"^\s*#+\s*(.+?)\s*:?\s*$")
_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.+)$")


def _feature_of(label: str) -> Optional[AcousticFeature]:
    label = label.lower()
    for keyword, feature in _FEATURE_KEYWORDS:
        if keyword in label:
            return feature
    return None


def _split(text: str) -> list[str]:
    return [p for p in re.split(r"[;,]", text) if p.strip()]


def parse_descriptions(
    reply: str,
) -> tuple[list[AcousticDescription], list[str]]:
    """Reads per-feature phrases from a labeled list ("energy: low; soft")
    or from headers followed by bullets. Returns one description per
    feature in declaration order plus a warning per missing feature."""
    found: dict[AcousticFeature, list[str]] = {}
    current: Optional[AcousticFeature] = None
    for line in reply.splitlines():
        if not line.strip():
            continue
        header = _HEADER_ONLY.match(line) or _MD_HEADER.match(line)
        if header is not None and _feature_of(header.group(1)) is not None:
            current = _feature_of(header.group(1))
            found.setdefault(current, [])  # type: ignore[arg-type]
            continue
        labeled = _LABELED.match(line)
        if labeled is not None and _feature_of(labeled.group(1)) is not None:
            current = _feature_of(labeled.group(1))
            assert current is not None
            found.setdefault(current, []).extend(_split(labeled.group(2)))
            continue
        bullet = _BULLET.match(line)
        if current is not None and bullet is not None:
            found[current].extend(_split(bullet.group(1)))
    if not found:
        raise UnparseableReply("no acoustic feature labels found", reply)

    descriptions, warnings = [], []
    for feature in AcousticFeature:
        phrases = normalize_phrases(found.get(feature, []))
        if not phrases:
            warnings.append(f"reply has no phrases for {feature.value}")
        descriptions.append(
            AcousticDescription(feature=feature, phrases=tuple(phrases))
        )
    return descriptions, warnings


def describe_voice(
    clip: AudioBuffer,
    alm: AudioLM,
    templates: dict[str, PromptTemplate],
    attempts: int = 3,
    warnings: Optional[list[str]] = None,
) -> list[AcousticDescription]:
    """Seven descriptions, one per acoustic feature, for a clip of at most
    30 seconds."""
    _check_clip(clip)
    descriptions, missing = _complete_until_parsed(
        alm,
        clip,
        _instructions(templates["voice"]),
        parse_descriptions,
        attempts,
    )
    for w in missing:
        logger.warning(w)
    if warnings is not None:
        warnings.extend(missing)
    return descriptions


# Gender and age --------------------------------------------------------------

_AGE_PHRASES: tuple[tuple[str, AgeCategory], ...] = (
    # Longest first so "older adult" is not read as "adult".
    ("middle-aged to older", AgeCategory.middle_aged_to_older),
    ("middle aged to older", AgeCategory.middle_aged_to_older),
    ("young adult", AgeCategory.young_adult),
    ("older adult", AgeCategory.older_adult),
    ("middle-aged", AgeCategory.middle_aged),
    ("middle aged", AgeCategory.middle_aged),
    ("elderly", AgeCategory.older_adult),
    ("adult", AgeCategory.adult),
)
_FEMALE = re.compile(r"\b(female|woman|feminine)\b")
_MALE = re.compile(r"\b(male|man|masculine)\b")


def _field(reply: str, name: str) -> str:
    m = re.search(rf"^\W*{name}\W*:\s*(.*)$", reply, re.I | re.M)
    return (m.group(1) if m else reply).lower()


def parse_profile(reply: str) -> tuple[SpeakerProfilePrediction, list[str]]:
    """Maps free text onto the gender and age enums; anything that does not
    map is `unknown` and reported."""
    warnings = []
    text = _field(reply, "gender")
    if _FEMALE.search(text):
        gender = Gender.female
    elif _MALE.search(text):
        gender = Gender.male
    else:
        gender = Gender.unknown
        if "unknown" not in text:
            warnings.append(f"could not map gender from {text.strip()!r}")

    text = _field(reply, "age")
    age = AgeCategory.unknown
    for phrase, category in _AGE_PHRASES:
        if phrase in text:
            age = category
            break
    else:
        if "unknown" not in text:
            warnings.append(f"could not map age from {text.strip()!r}")
    return SpeakerProfilePrediction(gender=gender, age_category=age), warnings


def predict_gender_age(
    clip: AudioBuffer,
    alm: AudioLM,
    templates: dict[str, PromptTemplate],
    warnings: Optional[list[str]] = None,
) -> SpeakerProfilePrediction:
    _check_clip(clip)
    try:
        reply = alm.complete(clip, _instructions(templates["profile"]))
    except ScriptMiss:
        raise
    except BackendError as e:
        raise BackendUnavailable(f"{alm.model_id}: {e}") from e
    profile, unmapped = parse_profile(reply)
    for w in unmapped:
        logger.warning(w)
    if warnings is not None:
        warnings.extend(unmapped)
    return profile
