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

from datetime import date, datetime
from pathlib import Path
from pydantic import ValidationError

from carevoice.artifacts import write_jsonl
from carevoice.biomarkers import SpeakerProfilePrediction, VoiceReport
from carevoice.core import (
    NONE_DOCUMENTED,
    AcousticDescription,
    AcousticFeature,
    AgeCategory,
    AnchorLevel,
    AnchorScale,
    EDHospOutcome,
    Gender,
    IllnessAssessment,
    InputMode,
    Sentence,
    SoapNote,
    SpeakerRole,
    SpeakerSegment,
    TimedWord,
    VisitManifest,
    VitalKind,
    VitalMeasurement,
    read_manifest,
    validate_manifest,
)
from carevoice.errors import DuplicateVisitId, MissingAudioRef, VitalOutOfRange
from carevoice.quantify import QuantifiedFeature


def _visit(visit_id: str = "v1", **kwargs) -> VisitManifest:
    fields = dict(
        visit_id=visit_id,
        patient_id="p1",
        clinician_id="c1",
        audio_ref=f"{visit_id}.wav",
        recorded_date=date(2024, 3, 1),
        patient_outcome=EDHospOutcome(had_event=False),
    )
    fields.update(kwargs)
    return VisitManifest(**fields)


def test_validate_manifest_accepts_clean_entries():
    accepted, errors = validate_manifest([_visit("v1"), _visit("v2")])
    assert [v.visit_id for v in accepted] == ["v1", "v2"]
    assert errors == []


def test_validate_manifest_rejects_duplicates_after_the_first():
    accepted, errors = validate_manifest([_visit("v1"), _visit("v1")])
    assert len(accepted) == 1
    assert len(errors) == 1
    assert isinstance(errors[0], DuplicateVisitId)
    assert errors[0].row == 1


def test_validate_manifest_rejects_bad_entries():
    entries = [
        _visit("v1", audio_ref="  "),
        _visit(
            "v2",
            vitals=(VitalMeasurement(kind=VitalKind.pain_level, value=11),),
        ),
        _visit(
            "v3",
            vitals=(
                VitalMeasurement(kind=VitalKind.oxygen_saturation, value=0),
            ),
        ),
        _visit(
            "v4",
            vitals=(
                VitalMeasurement(kind=VitalKind.pulse, value=float("nan")),
            ),
        ),
        _visit("v5"),
    ]
    accepted, errors = validate_manifest(entries)
    assert [v.visit_id for v in accepted] == ["v5"]
    assert isinstance(errors[0], MissingAudioRef)
    assert all(isinstance(e, VitalOutOfRange) for e in errors[1:])
    assert [e.visit_id for e in errors] == ["v1", "v2", "v3", "v4"]


def test_vital_bounds():
    ok = VitalMeasurement(kind=VitalKind.oxygen_saturation, value=100)
    assert ok.violation() is None
    zero = VitalMeasurement(kind=VitalKind.pain_level, value=0)
    assert zero.violation() is None
    assert (
        VitalMeasurement(kind=VitalKind.pain_level, value=-1).violation()
        is not None
    )


def test_read_manifest(tmp_path):
    path = tmp_path / "visits.jsonl"
    write_jsonl(path, [_visit("v1"), _visit("v2")])
    entries = read_manifest(path)
    assert [e.visit_id for e in entries] == ["v1", "v2"]
    assert entries[0].recorded_date == date(2024, 3, 1)


def test_outcome_groups():
    assert EDHospOutcome(had_event=True).group == "ED/HOSP"
    assert EDHospOutcome(had_event=False).group == "No ED/HOSP"


def test_input_mode_flags():
    assert InputMode.from_flag("vital") is InputMode.vital_only
    assert InputMode.from_flag("soap") is InputMode.soap_only
    assert InputMode.from_flag("soap+vital") is InputMode.soap_vital
    assert InputMode.from_flag("soap_vital") is InputMode.soap_vital
    assert not InputMode.vital_only.needs_soap
    assert not InputMode.soap_only.needs_vitals
    assert InputMode.soap_vital.needs_soap and InputMode.soap_vital.needs_vitals


def test_segment_needs_positive_duration():
    seg = SpeakerSegment(speaker=0, start_s=1.0, end_s=3.0)
    assert seg.duration == 2.0
    assert seg.midpoint == 2.0
    with pytest.raises(ValidationError):
        SpeakerSegment(speaker=0, start_s=3.0, end_s=3.0)
    with pytest.raises(ValidationError):
        SpeakerSegment(speaker=0, start_s=-1.0, end_s=3.0)


def test_sentence_is_single_speaker():
    words = (
        TimedWord(text="I", start_s=0.0, end_s=0.2, speaker=1),
        TimedWord(text="am", start_s=0.3, end_s=0.5, speaker=1),
        TimedWord(text="tired.", start_s=0.6, end_s=1.1, speaker=1),
    )
    s = Sentence(words=words, speaker=1)
    assert s.text == "I am tired."
    assert s.start_s == 0.0 and s.end_s == 1.1
    with pytest.raises(ValidationError):
        Sentence(words=words, speaker=0)
    with pytest.raises(ValidationError):
        Sentence(words=(), speaker=0)
    with pytest.raises(ValidationError):
        TimedWord(text=" ", start_s=0.0, end_s=0.1)


def test_soap_sentinel_and_render():
    note = SoapNote(subjective="short of breath", plan="  ")
    assert note.plan == NONE_DOCUMENTED
    assert note.objective == NONE_DOCUMENTED
    lines = note.render().splitlines()
    assert lines[0] == "Subjective: short of breath"
    assert [ln.split(":")[0] for ln in lines] == [
        "Subjective",
        "Objective",
        "Assessment",
        "Plan",
    ]


def test_anchor_scale_levels_are_contiguous():
    scale = AnchorScale(
        name="energy",
        levels=(
            AnchorLevel(level=1, anchors=("low",)),
            AnchorLevel(level=2, anchors=("high",)),
        ),
    )
    assert scale.level(2).anchors == ("high",)
    with pytest.raises(ValidationError):
        AnchorScale(
            name="energy",
            levels=(
                AnchorLevel(level=1, anchors=("low",)),
                AnchorLevel(level=3, anchors=("high",)),
            ),
        )
    with pytest.raises(ValidationError):
        AnchorScale(name="energy", levels=(AnchorLevel(level=1, anchors=()),))


def _words(speaker=1) -> tuple[TimedWord, ...]:
    return (
        TimedWord(text="I", start_s=1.0, end_s=1.2, speaker=speaker),
        TimedWord(text="feel", start_s=1.25, end_s=1.5, speaker=speaker),
        TimedWord(text="tired.", start_s=1.5, end_s=1.5, speaker=speaker),
    )


MODELS = [
    SpeakerSegment(speaker=2, start_s=0.0, end_s=3.25, source_chunk=1),
    TimedWord(text="hello", start_s=0.5, end_s=0.75),
    TimedWord(text="hi", start_s=1.0, end_s=1.0, speaker=0),
    Sentence(words=_words(), speaker=1),
    VitalMeasurement(
        kind=VitalKind.bp_systolic,
        value=128.5,
        unit="mmHg",
        taken_at=datetime(2024, 3, 1, 9, 30),
    ),
    EDHospOutcome(had_event=True),
    _visit(
        "v9",
        vitals=(
            VitalMeasurement(kind=VitalKind.pulse, value=72, unit="bpm"),
            VitalMeasurement(kind=VitalKind.pulse, value=75, unit="bpm"),
        ),
        patient_gender=Gender.female,
        patient_age=81,
    ),
    SoapNote(subjective="short of breath", plan=""),
    IllnessAssessment(
        score=3,
        rationale="stable",
        input_mode=InputMode.soap_only,
        model_id="m",
    ),
    AcousticDescription(
        feature=AcousticFeature.prosody, phrases=("slow", "flat")
    ),
    AnchorScale(
        name="energy",
        levels=(
            AnchorLevel(level=1, anchors=("low",)),
            AnchorLevel(level=2, anchors=("moderate", "steady")),
        ),
    ),
    QuantifiedFeature(
        feature=AcousticFeature.energy, levels=(1, 4), aggregation="max"
    ),
    VoiceReport(
        speaker=1,
        role=SpeakerRole.patient,
        clip_duration_s=1.5,
        low_confidence=True,
        descriptions=(
            AcousticDescription(
                feature=AcousticFeature.energy, phrases=("low",)
            ),
        ),
        profile=SpeakerProfilePrediction(
            gender=Gender.male, age_category=AgeCategory.older_adult
        ),
    ),
]


@pytest.mark.parametrize("model", MODELS, ids=lambda m: type(m).__name__)
def test_models_round_trip(model):
    cls = type(model)
    assert cls.model_validate(model.model_dump()) == model
    assert cls.model_validate_json(model.model_dump_json()) == model
    assert hash(cls.model_validate(model.model_dump())) == hash(model)


@pytest.mark.parametrize(
    "entries",
    [
        [],
        [_visit("v1"), _visit("v2")],
        [_visit("v1"), _visit("v1"), _visit("v2", audio_ref=" ")],
        [
            _visit(
                "v1",
                vitals=(
                    VitalMeasurement(kind=VitalKind.pain_level, value=12),
                ),
            ),
            _visit("v1"),
            _visit("v3"),
        ],
    ],
)
def test_validate_manifest_is_idempotent(entries):
    accepted, _ = validate_manifest(entries)
    again, errors = validate_manifest(accepted)
    assert again == accepted
    assert errors == []


def test_every_python_file_carries_the_license_header():
    root = Path(__file__).resolve().parent.parent
    files = sorted(
        p
        for folder in ("carevoice", "tests")
        for p in (root / folder).rglob("*.py")
    )
    assert files
    missing = [
        str(p.relative_to(root))
        for p in files
        if "Licensed under the Apache License" not in p.read_text()[:400]
    ]
    assert missing == []
