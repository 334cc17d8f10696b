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

"""Shared fixtures: synthetic tone recordings and a scripted mock cohort.

A recording is a sequence of turns, each a pure tone standing in for one
voice. The mock diarizer and ASR read tones, so the clinician (200 Hz),
healthy patients (120 Hz) and patients with an ED/HOSP event (160 Hz) are
told apart exactly.
"""
import json
import math
import pytest
import torch as t

from pathlib import Path
from omegaconf import OmegaConf

from carevoice.audio import AudioBuffer, write_wav

SR = 16_000
CLINICIAN_HZ = 200
PATIENT_HZ = 120
EVENT_PATIENT_HZ = 160

SOAP_STABLE = (
    "Subjective: patient reports feeling well\n"
    "Objective: vitals within normal limits\n"
    "Assessment: stable chronic conditions\n"
    "Plan: continue current care plan"
)
SOAP_WORSENING = (
    "Subjective: patient reports worsening dyspnea at night\n"
    "Objective: audible wheeze, reduced exercise tolerance\n"
    "Assessment: worsening heart failure symptoms\n"
    "Plan: notify physician, increase visit frequency"
)
VOICE_REPLY = (
    "emotion: calm; neutral\n"
    "voice quality: smooth; clear\n"
    "prosody: steady rhythm\n"
    "fluency: fluent\n"
    "articulation: precise\n"
    "energy: moderate; low\n"
    "discomfort/fatigue: mild fatigue"
)

SCRIPT = {
    "chat": [
        {"match": "Classify each speaker", "reply": "0: clinician\n1: patient"},
        {
            "match": ["Write a SOAP note", f"tone{EVENT_PATIENT_HZ}"],
            "reply": SOAP_WORSENING,
        },
        {"match": "Write a SOAP note", "reply": SOAP_STABLE},
        {
            "match": ["holistic illness score", "worsening dyspnea"],
            "reply": "Score: 4\nRationale: symptoms are getting worse.",
        },
        {
            "match": "holistic illness score",
            "reply": "Score: 2\nRationale: stable with minor concerns.",
        },
    ],
    "audio_lm": [
        {"match": "Describe the acoustic", "reply": VOICE_REPLY},
        {
            "match": "Estimate the speaker's gender",
            "reply": "gender: female\nage: older adult",
        },
    ],
}


def tone(hz: float, seconds: float, amplitude: float = 0.5) -> t.Tensor:
    n = round(seconds * SR)
    time = t.arange(n, dtype=t.float64) / SR
    return (amplitude * t.sin(2 * math.pi * hz * time)).to(t.float32)


def silence(seconds: float) -> t.Tensor:
    return t.zeros(round(seconds * SR), dtype=t.float32)


def conversation(
    turns: list[tuple[float, float]], gap_s: float = 0.5
) -> AudioBuffer:
    """Tone turns given as (hz, seconds), separated by silence."""
    parts = []
    for i, (hz, seconds) in enumerate(turns):
        if i:
            parts.append(silence(gap_s))
        parts.append(tone(hz, seconds))
    return AudioBuffer(t.cat(parts), SR)


def visit_audio(patient_hz: float) -> AudioBuffer:
    return conversation(
        [(CLINICIAN_HZ, 4.0), (patient_hz, 3.0)] * 2,
    )


@pytest.fixture
def make_conversation():
    return conversation


@pytest.fixture
def two_speaker_visit() -> AudioBuffer:
    return visit_audio(PATIENT_HZ)


@pytest.fixture
def script_path(tmp_path: Path) -> Path:
    path = tmp_path / "script.yaml"
    OmegaConf.save(OmegaConf.create(SCRIPT), path)
    return path


# (visit, patient, had_event, gender, age)
COHORT = [
    ("v1", "p1", False, "female", 71),
    ("v2", "p1", False, "female", 71),
    ("v3", "p2", False, "male", 64),
    ("v4", "p3", True, "female", 83),
    ("v5", "p3", True, "female", 83),
    ("v6", "p4", True, "male", 77),
]


def _vitals(had_event: bool) -> list[dict]:
    return [
        {"kind": "pulse", "value": 96.0 if had_event else 72.0, "unit": "bpm"},
        {"kind": "oxygen_saturation", "value": 91.0 if had_event else 97.0},
    ]


@pytest.fixture
def cohort(tmp_path: Path, script_path: Path) -> dict[str, Path]:
    """Six visits from four patients; p3 and p4 had an ED/HOSP event."""
    audio_dir = tmp_path / "audio"
    audio_dir.mkdir()
    lines = []
    for visit_id, patient_id, had_event, gender, age in COHORT:
        hz = EVENT_PATIENT_HZ if had_event else PATIENT_HZ
        write_wav(audio_dir / f"{visit_id}.wav", visit_audio(hz))
        entry = {
            "visit_id": visit_id,
            "patient_id": patient_id,
            "clinician_id": "c1",
            "audio_ref": f"audio/{visit_id}.wav",
            "recorded_date": "2024-03-01",
            "vitals": _vitals(had_event),
            "patient_outcome": {"had_event": had_event},
            "patient_gender": gender,
            "patient_age": age,
        }
        lines.append(json.dumps(entry))
    manifest = tmp_path / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    config = tmp_path / "carevoice.yaml"
    OmegaConf.save(
        OmegaConf.create({"mock": {"script": script_path.name}}), config
    )
    return {"manifest": manifest, "config": config, "root": tmp_path}
