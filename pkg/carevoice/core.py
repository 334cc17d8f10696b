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
Domain types shared by every stage of the pipeline.

All types are frozen pydantic models, so they are immutable, hashable and
serialise to JSON without any extra code. Identifiers (visit, patient,
clinician) are opaque strings and are never parsed.
"""
from __future__ import annotations

import math

from datetime import date, datetime
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Type, TypeVar, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    computed_field,
    field_validator,
    model_validator,
)

from carevoice.errors import (
    DuplicateVisitId,
    ManifestError,
    MissingAudioRef,
    VitalOutOfRange,
)

__all__ = [
    "GlobalSpeakerId",
    "VitalKind",
    "SpeakerRole",
    "InputMode",
    "AcousticFeature",
    "Gender",
    "AgeCategory",
    "VitalMeasurement",
    "EDHospOutcome",
    "VisitManifest",
    "SpeakerSegment",
    "TimedWord",
    "Sentence",
    "SoapNote",
    "IllnessAssessment",
    "AcousticDescription",
    "AnchorLevel",
    "AnchorScale",
    "validate_manifest",
    "read_jsonl",
    "read_manifest",
]

M = TypeVar("M", bound=BaseModel)

GlobalSpeakerId = int
"""Recording-wide speaker id, 0..3 after clustering."""

MAX_GLOBAL_SPEAKERS = 4
NONE_DOCUMENTED = "none documented"


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True)


class VitalKind(str, Enum):
    # Declaration order is the rendering order for prompts.
    bmi = "bmi"
    bp_diastolic = "bp_diastolic"
    bp_systolic = "bp_systolic"
    height = "height"
    weight = "weight"
    pulse = "pulse"
    respiration_rate = "respiration_rate"
    temperature = "temperature"
    oxygen_saturation = "oxygen_saturation"
    blood_sugar = "blood_sugar"
    pain_level = "pain_level"


class SpeakerRole(str, Enum):
    unknown = "unknown"
    clinician = "clinician"
    patient = "patient"
    third_party = "third_party"


class InputMode(str, Enum):
    vital_only = "vital_only"
    soap_only = "soap_only"
    soap_vital = "soap_vital"

    @classmethod
    def from_flag(cls, flag: str) -> "InputMode":
        """Maps the CLI spelling (vital, soap, soap+vital) onto the enum."""
        flags = {
            "vital": cls.vital_only,
            "soap": cls.soap_only,
            "soap+vital": cls.soap_vital,
        }
        if flag in flags:
            return flags[flag]
        return cls(flag)

    @property
    def needs_soap(self) -> bool:
        return self is not InputMode.vital_only

    @property
    def needs_vitals(self) -> bool:
        return self is not InputMode.soap_only


class AcousticFeature(str, Enum):
    emotion = "emotion"
    voice_quality = "voice_quality"
    prosody = "prosody"
    fluency = "fluency"
    articulation = "articulation"
    energy = "energy"
    discomfort_fatigue = "discomfort_fatigue"


class Gender(str, Enum):
    male = "male"
    female = "female"
    unknown = "unknown"


class AgeCategory(str, Enum):
    young_adult = "young_adult"
    adult = "adult"
    middle_aged = "middle_aged"
    middle_aged_to_older = "middle_aged_to_older"
    older_adult = "older_adult"
    unknown = "unknown"


# Visits -----------------------------------------------------------------------


class VitalMeasurement(_Frozen):
    kind: VitalKind
    value: float
    unit: str = ""
    taken_at: Optional[datetime] = None

    def violation(self) -> Optional[str]:
        """Returns a description of the broken invariant, if any."""
        if not math.isfinite(self.value):
            return "value is not finite"
        if self.kind is VitalKind.pain_level and not 0 <= self.value <= 10:
            return "pain_level must lie in [0, 10]"
        if self.kind is VitalKind.oxygen_saturation and not (
            0 < self.value <= 100
        ):
            return "oxygen_saturation must lie in (0, 100]"
        return None


class EDHospOutcome(_Frozen):
    had_event: bool

    @property
    def group(self) -> str:
        return "ED/HOSP" if self.had_event else "No ED/HOSP"


class VisitManifest(_Frozen):
    visit_id: str
    patient_id: str
    clinician_id: str
    audio_ref: str
    recorded_date: date
    vitals: tuple[VitalMeasurement, ...] = ()
    patient_outcome: EDHospOutcome
    # Optional ground truth for the gender/age baseline evaluation.
    patient_gender: Optional[Gender] = None
    patient_age: Optional[int] = Field(default=None, ge=0)


def validate_manifest(
    entries: Sequence[VisitManifest],
) -> tuple[list[VisitManifest], list[ManifestError]]:
    """Returns the entries passing every invariant, and one error per
    violation. The first occurrence of a visit id wins; later duplicates are
    rejected."""
    accepted: list[VisitManifest] = []
    errors: list[ManifestError] = []
    seen: set[str] = set()
    for row, entry in enumerate(entries):
        entry_errors: list[ManifestError] = []
        if entry.visit_id in seen:
            entry_errors.append(DuplicateVisitId(entry.visit_id, row))
        if not entry.audio_ref.strip():
            entry_errors.append(MissingAudioRef(entry.visit_id, row))
        for vital in entry.vitals:
            if vital.violation() is not None:
                entry_errors.append(
                    VitalOutOfRange(
                        entry.visit_id, vital.kind.value, vital.value, row
                    )
                )
        seen.add(entry.visit_id)
        if entry_errors:
            errors.extend(entry_errors)
        else:
            accepted.append(entry)
    return accepted, errors


# Speech structures ------------------------------------------------------------


class SpeakerSegment(_Frozen):
    speaker: GlobalSpeakerId
    start_s: float = Field(ge=0)
    end_s: float
    source_chunk: int = 0

    @model_validator(mode="after")
    def _ordered(self) -> "SpeakerSegment":
        if not self.start_s < self.end_s:
            raise ValueError(f"segment must satisfy start < end: {self}")
        return self

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start_s + self.end_s)


class TimedWord(_Frozen):
    text: str
    start_s: float
    end_s: float
    speaker: Optional[GlobalSpeakerId] = None

    @field_validator("text")
    @classmethod
    def _non_empty(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("word text is empty")
        return v

    @model_validator(mode="after")
    def _ordered(self) -> "TimedWord":
        if self.start_s > self.end_s:
            raise ValueError(f"word must satisfy start <= end: {self}")
        return self


class Sentence(_Frozen):
    words: tuple[TimedWord, ...]
    speaker: GlobalSpeakerId

    @model_validator(mode="after")
    def _single_speaker(self) -> "Sentence":
        if not self.words:
            raise ValueError("a sentence needs at least one word")
        if any(w.speaker != self.speaker for w in self.words):
            raise ValueError("all words must share the sentence speaker")
        return self

    @computed_field  # type: ignore[misc]
    @property
    def start_s(self) -> float:
        return self.words[0].start_s

    @computed_field  # type: ignore[misc]
    @property
    def end_s(self) -> float:
        return self.words[-1].end_s

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s

    @property
    def text(self) -> str:
        return " ".join(w.text for w in self.words)


# Model outputs ----------------------------------------------------------------


class SoapNote(_Frozen):
    subjective: str = NONE_DOCUMENTED
    objective: str = NONE_DOCUMENTED
    assessment: str = NONE_DOCUMENTED
    plan: str = NONE_DOCUMENTED

    @field_validator("subjective", "objective", "assessment", "plan")
    @classmethod
    def _sentinel(cls, v: str) -> str:
        return v.strip() or NONE_DOCUMENTED

    def render(self) -> str:
        return (
            f"Subjective: {self.subjective}\n"
            f"Objective: {self.objective}\n"
            f"Assessment: {self.assessment}\n"
            f"Plan: {self.plan}"
        )


class IllnessAssessment(_Frozen):
    score: int = Field(ge=1, le=5)
    rationale: str
    input_mode: InputMode
    model_id: str


class AcousticDescription(_Frozen):
    feature: AcousticFeature
    phrases: tuple[str, ...] = ()

    @field_validator("phrases")
    @classmethod
    def _non_empty(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        if any(not p.strip() for p in v):
            raise ValueError("phrases must be non-empty strings")
        return v


class AnchorLevel(_Frozen):
    level: int
    anchors: tuple[str, ...]


class AnchorScale(_Frozen):
    name: str
    levels: tuple[AnchorLevel, ...]

    @model_validator(mode="after")
    def _contiguous(self) -> "AnchorScale":
        got = [lv.level for lv in self.levels]
        if got != list(range(1, len(got) + 1)):
            raise ValueError(f"levels must be 1..n and contiguous, got {got}")
        if any(not lv.anchors for lv in self.levels):
            raise ValueError("every level needs at least one anchor")
        return self

    def level(self, level: int) -> AnchorLevel:
        return self.levels[level - 1]


# JSON-lines I/O ---------------------------------------------------------------


def read_jsonl(path: Union[str, Path], model: Type[M]) -> list[M]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [model.model_validate_json(ln) for ln in lines if ln.strip()]


def read_manifest(path: Union[str, Path]) -> list[VisitManifest]:
    return read_jsonl(path, VisitManifest)
