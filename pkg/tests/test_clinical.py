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

from datetime import datetime

from carevoice.backends import ScriptedChatLLM, ScriptEntry
from carevoice.clinical import (
    NO_VITALS,
    PromptTemplate,
    assign_roles,
    generate_soap,
    load_templates,
    parse_roles,
    parse_score,
    parse_soap,
    render_vitals,
    score_illness,
    transcript_speakers,
)
from carevoice.core import (
    NONE_DOCUMENTED,
    InputMode,
    SoapNote,
    SpeakerRole,
    VitalKind,
    VitalMeasurement,
)
from carevoice.errors import (
    EmptyInput,
    MalformedScore,
    ModeInputMissing,
    RoleConflict,
    TemplateError,
    UnlistedSpeaker,
    UnparseableReply,
)

TRANSCRIPT = (
    "Speaker 0: How are you feeling today?\n"
    "Speaker 1: A bit short of breath.\n"
    "Speaker 2: She did not sleep well."
)


def _llm(*entries: tuple) -> ScriptedChatLLM:
    return ScriptedChatLLM([ScriptEntry(match=m, reply=r) for m, r in entries])


def test_packaged_templates_load():
    templates = load_templates()
    assert set(templates) >= {"soap", "roles", "voice", "profile"}
    assert templates["illness_soap_vital"].placeholders == {"soap", "vitals"}


def test_template_override_and_checks(tmp_path):
    (tmp_path / "soap.txt").write_text("[user]\nSummarise:\n{transcript}\n")
    templates = load_templates(tmp_path)
    messages = templates["soap"].render(transcript="Speaker 0: hi")
    assert messages == [
        {"role": "user", "content": "Summarise:\nSpeaker 0: hi"}
    ]
    (tmp_path / "roles.txt").write_text("[user]\nNo placeholder here.\n")
    with pytest.raises(TemplateError):
        load_templates(tmp_path)
    with pytest.raises(TemplateError):
        PromptTemplate.parse("soap", "{transcript} with no section header")


def test_render_keeps_other_braces():
    template = PromptTemplate(
        name="x", system_text="", user_text='Reply as {"score": n}. {soap}'
    )
    assert template.render(soap="S")[0]["content"] == 'Reply as {"score": n}. S'


def test_render_vitals_is_ordered():
    vitals = [
        VitalMeasurement(
            kind=VitalKind.pulse,
            value=88,
            unit="bpm",
            taken_at=datetime(2024, 3, 1, 10, 30),
        ),
        VitalMeasurement(kind=VitalKind.bp_systolic, value=130, unit="mmHg"),
        VitalMeasurement(
            kind=VitalKind.pulse,
            value=80,
            unit="bpm",
            taken_at=datetime(2024, 3, 1, 9, 0),
        ),
    ]
    assert render_vitals(vitals).splitlines() == [
        "bp_systolic: 130 mmHg",
        "pulse: 80 bpm (2024-03-01T09:00:00)",
        "pulse: 88 bpm (2024-03-01T10:30:00)",
    ]
    assert render_vitals([]) == NO_VITALS


def test_parse_soap_variants():
    note, warnings = parse_soap(
        "**Subjective:** tired\n"
        "## Objective\n"
        "BP 130/80\n"
        "- Assessment: stable\n"
    )
    assert note.subjective == "tired"
    assert note.objective == "BP 130/80"
    assert note.assessment == "stable"
    assert note.plan == NONE_DOCUMENTED
    assert warnings == ["SOAP reply has no plan section"]
    with pytest.raises(UnparseableReply):
        parse_soap("The patient is doing fine.")


def test_generate_soap_repairs_bad_replies():
    llm = _llm(
        (
            "Write a SOAP note",
            [
                "no headers at all",
                "Subjective: a\nObjective: b\nAssessment: c\nPlan: d",
            ],
        )
    )
    templates = load_templates()
    note = generate_soap(TRANSCRIPT, llm, templates, attempts=2)
    assert note == SoapNote(
        subjective="a", objective="b", assessment="c", plan="d"
    )
    with pytest.raises(EmptyInput):
        generate_soap("  ", llm, templates)


@pytest.mark.parametrize(
    "reply, score",
    [
        ("Score: 3\nRationale: stable.", 3),
        ("**Score:** 5/5\n**Rationale:** critical.", 5),
        ("score = 1 out of 5. Rationale: healthy", 1),
    ],
)
def test_parse_score(reply, score):
    assert parse_score(reply)[0] == score


@pytest.mark.parametrize(
    "reply",
    [
        "Score: 6\nRationale: off the scale.",
        "Score: 0\nRationale: none.",
        "Score: 3.5\nRationale: between.",
        "Score: 3",
        "I would rate this patient as fairly ill.",
    ],
)
def test_parse_score_rejects(reply):
    with pytest.raises(MalformedScore):
        parse_score(reply)


def test_score_illness_modes():
    templates = load_templates()
    llm = _llm(("holistic illness score", "Score: 2\nRationale: fine."))
    soap = SoapNote(subjective="tired")
    a = score_illness(soap, "pulse: 80", InputMode.soap_vital, llm, templates)
    assert (a.score, a.input_mode, a.model_id) == (
        2,
        InputMode.soap_vital,
        "mock-chat",
    )
    vital = score_illness(
        None, "pulse: 80", InputMode.vital_only, llm, templates
    )
    assert vital.input_mode is InputMode.vital_only
    soap_only = score_illness(soap, None, InputMode.soap_only, llm, templates)
    assert soap_only.score == 2
    with pytest.raises(ModeInputMissing):
        score_illness(None, "pulse: 80", InputMode.soap_only, llm, templates)
    with pytest.raises(ModeInputMissing):
        score_illness(soap, None, InputMode.soap_vital, llm, templates)


def test_score_gives_up_after_attempts():
    llm = _llm(("holistic illness score", "Score: 9\nRationale: no."))
    with pytest.raises(MalformedScore):
        score_illness(
            None, "pulse: 80", InputMode.vital_only, llm, load_templates(), 2
        )


def test_parse_roles():
    assert transcript_speakers(TRANSCRIPT) == [0, 1, 2]
    roles = parse_roles(
        "0: clinician\n1: Patient\nSpeaker 2: caregiver", [0, 1, 2]
    )
    assert roles == {
        0: SpeakerRole.clinician,
        1: SpeakerRole.patient,
        2: SpeakerRole.third_party,
    }
    with pytest.raises(UnlistedSpeaker):
        parse_roles("0: clinician\n1: patient", [0, 1, 2])
    with pytest.raises(RoleConflict):
        parse_roles("0: patient\n1: patient\n2: unknown", [0, 1, 2])
    with pytest.raises(RoleConflict):
        parse_roles("0: patient\n0: clinician\n1: unknown", [0, 1])


def test_assign_roles_asks_for_clarification():
    llm = _llm(
        (
            "Classify each speaker",
            [
                "0: patient\n1: patient\n2: unknown",
                "0: clinician\n1: patient\n2: third_party",
            ],
        )
    )
    roles = assign_roles(TRANSCRIPT, llm, load_templates(), clarifications=1)
    assert roles[0] is SpeakerRole.clinician
    assert roles[2] is SpeakerRole.third_party
    assert assign_roles("", llm, load_templates()) == {}
