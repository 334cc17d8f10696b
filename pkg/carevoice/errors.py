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
"""Exception hierarchy shared by every stage."""

from typing import Any, Optional


class CareVoiceError(Exception):
    """Base class for every error raised by carevoice."""


class ConfigError(CareVoiceError):
    pass


# Manifest validation ---------------------------------------------------------


class ManifestError(CareVoiceError):
    """A manifest entry violates a type invariant."""

    def __init__(self, visit_id: str, message: str, row: Optional[int] = None):
        self.visit_id = visit_id
        self.row = row
        super().__init__(message)


class DuplicateVisitId(ManifestError):
    def __init__(self, visit_id: str, row: Optional[int] = None):
        super().__init__(visit_id, f"duplicate visit_id {visit_id!r}", row)


class MissingAudioRef(ManifestError):
    def __init__(self, visit_id: str, row: Optional[int] = None):
        super().__init__(visit_id, f"visit {visit_id!r} has no audio_ref", row)


class VitalOutOfRange(ManifestError):
    def __init__(
        self, visit_id: str, kind: str, value: float, row: Optional[int] = None
    ):
        self.kind = kind
        self.value = value
        super().__init__(
            visit_id, f"{kind}={value} out of range in visit {visit_id!r}", row
        )


# Audio -----------------------------------------------------------------------


class AudioError(CareVoiceError):
    pass


class UnsupportedFormat(AudioError):
    pass


class CorruptHeader(AudioError):
    pass


class OutOfRange(AudioError):
    pass


class InvalidParams(AudioError):
    pass


class EmptyInput(CareVoiceError):
    pass


class SampleRateMismatch(AudioError):
    pass


class ClipDurationError(AudioError):
    """A clip handed to the audio-language model is empty or over the cap."""


# Diarization and speaker embeddings -------------------------------------------


class BackendUnavailable(CareVoiceError):
    pass


class ChunkFailed(CareVoiceError):
    def __init__(self, index: int, cause: Optional[BaseException] = None):
        self.index = index
        self.cause = cause
        super().__init__(f"diarization of chunk {index} failed: {cause!r}")


class EmbeddingFailed(CareVoiceError):
    def __init__(self, key: Any, reason: str = ""):
        self.key = key
        super().__init__(f"embedding failed for {key!r}: {reason}")


class NoSentencesForSpeaker(CareVoiceError):
    def __init__(self, speaker: int):
        self.speaker = speaker
        super().__init__(f"speaker {speaker} has no sentences")


class EmptyMeans(CareVoiceError):
    pass


class NoUsableSpeech(CareVoiceError):
    pass


class EnhancementFailed(CareVoiceError):
    pass


# LLM / ALM replies -----------------------------------------------------------


class UnparseableReply(CareVoiceError):
    def __init__(self, message: str, reply: str = ""):
        self.reply = reply
        super().__init__(message)


class MalformedScore(UnparseableReply):
    pass


class ModeInputMissing(CareVoiceError):
    pass


class RoleConflict(UnparseableReply):
    pass


class UnlistedSpeaker(UnparseableReply):
    def __init__(self, speakers: list, reply: str = ""):
        self.speakers = speakers
        super().__init__(f"reply did not list speakers {speakers}", reply)


class TemplateError(CareVoiceError):
    pass


# Quantification / analytics -------------------------------------------------


class NoPhrases(CareVoiceError):
    pass


class EmptyPatient(CareVoiceError):
    def __init__(self, patient_id: str):
        self.patient_id = patient_id
        super().__init__(f"patient {patient_id!r} has no assessments")


class MissingOutcome(CareVoiceError):
    def __init__(self, patient_id: str):
        self.patient_id = patient_id
        super().__init__(f"patient {patient_id!r} has no outcome flag")


class EmptyDistribution(CareVoiceError):
    pass


class EmptyGroup(CareVoiceError):
    def __init__(self, group: str):
        self.group = group
        super().__init__(f"group {group!r} has no phrases")


class UnknownGroup(CareVoiceError):
    def __init__(self, group: str):
        self.group = group
        super().__init__(f"unknown group {group!r}")


# Backends --------------------------------------------------------------------


class BackendError(CareVoiceError):
    pass


class BackendStatusError(BackendError):
    """An HTTP-level failure carrying the response status."""

    def __init__(self, status: int, message: str = ""):
        self.status = status
        super().__init__(f"backend returned {status}: {message}")


class TransientError(BackendError):
    """Internal marker for failures worth retrying."""

    def __init__(self, cause: BaseException):
        self.cause = cause
        super().__init__(repr(cause))


class Exhausted(BackendError):
    def __init__(self, last_error: BaseException, attempts: int):
        self.last_error = last_error
        self.attempts = attempts
        super().__init__(
            f"gave up after {attempts} attempts; last error: {last_error!r}"
        )


class NonTransient(BackendError):
    def __init__(self, status: Optional[int], cause: Optional[BaseException]):
        self.status = status
        self.cause = cause
        super().__init__(f"non-transient backend failure ({status}): {cause!r}")


class ScriptMiss(BackendError):
    def __init__(self, fingerprint: str):
        self.fingerprint = fingerprint
        super().__init__(f"no scripted reply for prompt {fingerprint}")


# Pipeline --------------------------------------------------------------------


class PrerequisiteMissing(CareVoiceError):
    def __init__(self, stage: str, artifact: str):
        self.stage = stage
        self.artifact = artifact
        super().__init__(f"stage {stage!r} needs {artifact!r}; run it first")


class MissingAnalysis(CareVoiceError):
    pass
