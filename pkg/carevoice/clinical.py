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
Chat-model stages: SOAP notes, holistic illness scores and speaker roles.

Prompts live in editable template files (see `load_templates`). Replies are
parsed strictly; a reply that does not parse is echoed back with a repair
request, up to a fixed number of attempts.
"""
from __future__ import annotations

import logging
import re

from datetime import datetime
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence, TypeVar, Union

from carevoice.backends.base import ChatLLM, Message
from carevoice.core import (
    IllnessAssessment,
    InputMode,
    SoapNote,
    SpeakerRole,
    VitalKind,
    VitalMeasurement,
    _Frozen,
)
from carevoice.errors import (
    BackendError,
    BackendUnavailable,
    EmptyInput,
    MalformedScore,
    ModeInputMissing,
    RoleConflict,
    ScriptMiss,
    TemplateError,
    UnlistedSpeaker,
    UnparseableReply,
)

__all__ = [
    "NO_VITALS",
    "PromptTemplate",
    "load_templates",
    "render_vitals",
    "parse_soap",
    "generate_soap",
    "parse_score",
    "score_illness",
    "transcript_speakers",
    "parse_roles",
    "assign_roles",
]

logger = logging.getLogger(__name__)

T = TypeVar("T")

NO_VITALS = "no vital signs recorded"

# Placeholders each template must carry.
REQUIRED_PLACEHOLDERS: dict[str, frozenset[str]] = {
    "soap": frozenset({"transcript"}),
    "illness_vital_only": frozenset({"vitals"}),
    "illness_soap_only": frozenset({"soap"}),
    "illness_soap_vital": frozenset({"soap", "vitals"}),
    "roles": frozenset({"transcript"}),
    "voice": frozenset(),
    "profile": frozenset(),
}

_PLACEHOLDER = re.compile(r"\{(transcript|soap|vitals)\}")
_SECTION = re.compile(r"^\[(system|user)\]\s*$", re.MULTILINE)


class PromptTemplate(_Frozen):
    name: str
    system_text: str
    user_text: str

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(
            _PLACEHOLDER.findall(self.system_text + "\n" + self.user_text)
        )

    def check(self) -> "PromptTemplate":
        missing = REQUIRED_PLACEHOLDERS.get(self.name, frozenset()) - (
            self.placeholders
        )
        if missing:
            raise TemplateError(
                f"template {self.name!r} lacks {sorted(missing)}"
            )
        return self

    def render(self, **values: str) -> list[Message]:
        """Fills the placeholders by plain substitution, so braces elsewhere
        in the template are left alone."""
        missing = self.placeholders - set(values)
        if missing:
            raise TemplateError(
                f"template {self.name!r} needs values for {sorted(missing)}"
            )
        system, user = self.system_text, self.user_text
        for key in self.placeholders:
            system = system.replace("{" + key + "}", values[key])
            user = user.replace("{" + key + "}", values[key])
        messages: list[Message] = []
        if system.strip():
            messages.append({"role": "system", "content": system.strip()})
        messages.append({"role": "user", "content": user.strip()})
        return messages

    @classmethod
    def parse(cls, name: str, text: str) -> "PromptTemplate":
        """Reads a template file made of `[system]` and `[user]` sections."""
        parts = _SECTION.split(text)
        sections = dict(zip(parts[1::2], parts[2::2]))
        if "user" not in sections:
            raise TemplateError(f"template {name!r} has no [user] section")
        return cls(
            name=name,
            system_text=sections.get("system", "").strip(),
            user_text=sections["user"].strip(),
        ).check()


def load_templates(
    prompts_dir: Optional[Union[str, Path]] = None,
) -> dict[str, PromptTemplate]:
    """The packaged templates, each overridden by a same-named `.txt` file
    in `prompts_dir` when one exists."""
    packaged = resources.files("carevoice") / "prompts"
    templates = {}
    for name in REQUIRED_PLACEHOLDERS:
        override = Path(prompts_dir) / f"{name}.txt" if prompts_dir else None
        if override is not None and override.is_file():
            text = override.read_text(encoding="utf-8")
        else:
            text = (packaged / f"{name}.txt").read_text(encoding="utf-8")
        templates[name] = PromptTemplate.parse(name, text)
    return templates


# Vitals ----------------------------------------------------------------------

_KIND_ORDER = {kind: i for i, kind in enumerate(VitalKind)}


def _vital_line(v: VitalMeasurement) -> str:
    line = f"{v.kind.value}: {v.value:g}"
    if v.unit:
        line += f" {v.unit}"
    if v.taken_at is not None:
        line += f" ({v.taken_at.isoformat()})"
    return line


def render_vitals(vitals: Sequence[VitalMeasurement]) -> str:
    """One line per measurement, kinds in a fixed order and repeated
    measurements in time order.

    An empty list renders as `NO_VITALS`. The pipeline never sends that to
    a model: visits without vitals fail the modes that need them. The
    placeholder is for callers rendering vitals directly."""
    if not vitals:
        return NO_VITALS
    ordered = sorted(
        vitals,
        key=lambda v: (
            _KIND_ORDER[v.kind],
            v.taken_at is not None,
            v.taken_at or datetime.min,
        ),
    )
    return "\n".join(_vital_line(v) for v in ordered)


# Repair loop -----------------------------------------------------------------


def _repair_request(error: UnparseableReply) -> Message:
    return {
        "role": "user",
        "content": (
            f"Your previous reply could not be used: {error}. Answer again, "
            "following the requested format exactly."
        ),
    }


def _chat_until_parsed(
    llm: ChatLLM,
    messages: list[Message],
    parse: Callable[[str], T],
    attempts: int,
) -> T:
    """Asks, parses and, on a parse failure, echoes the reply back with a
    repair request. Raises the last parse error once attempts run out."""
    assert attempts >= 1, "need at least one attempt"
    conversation = list(messages)
    last: Optional[UnparseableReply] = None
    for attempt in range(attempts):
        try:
            reply = llm.chat(conversation)
        except ScriptMiss:
            raise
        except BackendError as e:
            raise BackendUnavailable(f"{llm.model_id}: {e}") from e
        try:
            return parse(reply)
        except UnparseableReply as e:
            logger.warning(
                "unusable reply from %s (attempt %d/%d): %s",
                llm.model_id,
                attempt + 1,
                attempts,
                e,
            )
            last = e
            conversation = list(messages) + [
                {"role": "assistant", "content": reply},
                _repair_request(e),
            ]
    assert last is not None
    raise last


# SOAP ------------------------------------------------------------------------

_SOAP_FIELDS = ("subjective", "objective", "assessment", "plan")
_SOAP_HEADER = re.compile(
    r"^[ \t]*(?:#+[ \t]*)?(?:[-*][ \t]+)?(?:\*\*)?"
    r"(subjective|objective|assessment|plan)"
    r"(?:\*\*)?[ \t]*(?::|$)(?:\*\*)?[ \t]*(.*)$",
    re.IGNORECASE | re.MULTILINE,
)


def parse_soap(reply: str) -> tuple[SoapNote, list[str]]:
    """Splits a reply into the four SOAP sections. Missing sections become
    the sentinel and are reported; a reply without any section header does
    not parse."""
    headers = list(_SOAP_HEADER.finditer(reply))
    if not headers:
        raise UnparseableReply("no SOAP section headers found", reply)
    sections: dict[str, str] = {}
    for i, m in enumerate(headers):
        end = headers[i + 1].start() if i + 1 < len(headers) else len(reply)
        body = (m.group(2) + reply[m.end() : end]).strip()
        name = m.group(1).lower()
        # A repeated header extends the first one.
        sections[name] = (sections.get(name, "") + "\n" + body).strip()
    warnings = [
        f"SOAP reply has no {name} section"
        for name in _SOAP_FIELDS
        if not sections.get(name)
    ]
    return SoapNote(**sections), warnings


def generate_soap(
    transcript: str,
    llm: ChatLLM,
    templates: dict[str, PromptTemplate],
    attempts: int = 3,
    warnings: Optional[list[str]] = None,
) -> SoapNote:
    """Summarises a speaker-tagged transcript into a SOAP note."""
    if not transcript.strip():
        raise EmptyInput("cannot summarise an empty transcript")
    messages = templates["soap"].render(transcript=transcript)
    note, missing = _chat_until_parsed(llm, messages, parse_soap, attempts)
    for w in missing:
        logger.warning(w)
    if warnings is not None:
        warnings.extend(missing)
    return note


# Illness score ---------------------------------------------------------------

_SCORE = re.compile(
    r"score\s*(?:\(1\s*-\s*5\))?\s*[:=]\s*\**\s*([+-]?\d+(?:[.,]\d+)?)"
    r"\s*\**\s*(?:/\s*5|out of 5)?",
    re.IGNORECASE,
)
_RATIONALE = re.compile(r"rationale\s*\**\s*[:=]\s*\**(.*)", re.I | re.S)


def parse_score(reply: str) -> tuple[int, str]:
    """Reads "Score: <int>" and "Rationale: <text>" from a reply. The score
    must be a whole number in [1, 5] and the rationale must not be empty."""
    m = _SCORE.search(reply)
    if m is None:
        raise MalformedScore("no 'Score: <1-5>' line in the reply", reply)
    raw = m.group(1)
    if not re.fullmatch(r"[+-]?\d+", raw):
        raise MalformedScore(f"score {raw!r} is not an integer", reply)
    score = int(raw)
    if not 1 <= score <= 5:
        raise MalformedScore(f"score {score} is outside 1..5", reply)
    r = _RATIONALE.search(reply)
    rationale = r.group(1).strip().strip("*").strip() if r else ""
    if not rationale:
        raise MalformedScore("the reply has no rationale", reply)
    return score, rationale


def score_illness(
    soap: Optional[SoapNote],
    vitals_text: Optional[str],
    mode: InputMode,
    llm: ChatLLM,
    templates: dict[str, PromptTemplate],
    attempts: int = 3,
) -> IllnessAssessment:
    """Holistic 1-5 illness score from the inputs `mode` selects."""
    if mode.needs_soap and soap is None:
        raise ModeInputMissing(f"{mode.value} needs a SOAP note")
    if mode.needs_vitals and vitals_text is None:
        raise ModeInputMissing(f"{mode.value} needs vital signs")
    values: dict[str, str] = {}
    if mode.needs_soap:
        assert soap is not None
        values["soap"] = soap.render()
    if mode.needs_vitals:
        assert vitals_text is not None
        values["vitals"] = vitals_text
    messages = templates[f"illness_{mode.value}"].render(**values)
    score, rationale = _chat_until_parsed(llm, messages, parse_score, attempts)
    return IllnessAssessment(
        score=score,
        rationale=rationale,
        input_mode=mode,
        model_id=llm.model_id,
    )


# Speaker roles ---------------------------------------------------------------

_TRANSCRIPT_SPEAKER = re.compile(r"^\s*Speaker\s+(\d+)\s*:", re.MULTILINE)
_ROLE_LINE = re.compile(
    r"(?:speaker\s*)?(\d+)\s*[:=\-]\s*\**\s*"
    r"(clinician|patient|third[\s_-]?party|unknown|caregiver|family member"
    r"|family|nurse|doctor|provider|other)",
    re.IGNORECASE,
)
_ROLE_SYNONYMS = {
    "clinician": SpeakerRole.clinician,
    "nurse": SpeakerRole.clinician,
    "doctor": SpeakerRole.clinician,
    "provider": SpeakerRole.clinician,
    "patient": SpeakerRole.patient,
    "caregiver": SpeakerRole.third_party,
    "family": SpeakerRole.third_party,
    "family member": SpeakerRole.third_party,
    "other": SpeakerRole.third_party,
    "third party": SpeakerRole.third_party,
    "thirdparty": SpeakerRole.third_party,
    "unknown": SpeakerRole.unknown,
}


def transcript_speakers(transcript: str) -> list[int]:
    return sorted({int(k) for k in _TRANSCRIPT_SPEAKER.findall(transcript)})


def parse_roles(reply: str, speakers: Sequence[int]) -> dict[int, SpeakerRole]:
    """Maps every listed speaker to exactly one role.

    Raises:
        UnlistedSpeaker: a transcript speaker is missing from the reply.
        RoleConflict: a speaker got two roles, or two speakers share the
            clinician or patient role.
    """
    found: dict[int, SpeakerRole] = {}
    for num, label in _ROLE_LINE.findall(reply):
        spk = int(num)
        role = _ROLE_SYNONYMS[re.sub(r"[\s_-]+", " ", label.lower())]
        if spk in found and found[spk] is not role:
            raise RoleConflict(f"speaker {spk} got two roles", reply)
        found[spk] = role
    missing = [s for s in speakers if s not in found]
    if missing:
        raise UnlistedSpeaker(missing, reply)
    roles = {s: found[s] for s in speakers}
    for unique in (SpeakerRole.clinician, SpeakerRole.patient):
        holders = [s for s, r in roles.items() if r is unique]
        if len(holders) > 1:
            raise RoleConflict(
                f"speakers {holders} are all labelled {unique.value}", reply
            )
    return roles


def assign_roles(
    transcript: str,
    llm: ChatLLM,
    templates: dict[str, PromptTemplate],
    clarifications: int = 1,
) -> dict[int, SpeakerRole]:
    """Asks the model for one role per "Speaker k:" tag in the transcript,
    allowing `clarifications` follow-up requests when the answer breaks the
    role rules."""
    speakers = transcript_speakers(transcript)
    if not speakers:
        return {}
    messages = templates["roles"].render(transcript=transcript)
    return _chat_until_parsed(
        llm,
        messages,
        lambda reply: parse_roles(reply, speakers),
        attempts=1 + clarifications,
    )
