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
"""Base backend classes: one abstract class per model service, the retry
policy shared by all of them, and the suite that bundles a full set."""
from __future__ import annotations

import logging
import threading
import backoff
import openai
import requests
import torch as t

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Callable, Optional, TypeVar
from torchtyping import TensorType as Tensor

from carevoice.audio import AudioBuffer
from carevoice.config import BackendConfig, BackendKind
from carevoice.errors import (
    BackendStatusError,
    CareVoiceError,
    Exhausted,
    NonTransient,
    TransientError,
)
from carevoice.utils import default

__all__ = [
    "Message",
    "call_with_retry",
    "FairSlots",
    "Backend",
    "Diarizer",
    "SpeakerEmbedder",
    "Enhancer",
    "ASR",
    "ChatLLM",
    "AudioLM",
    "TextEmbedder",
    "BackendSuite",
    "as_vector",
]

logger = logging.getLogger(__name__)

T = TypeVar("T")

Message = dict[str, Any]
"""A chat message in the usual {"role": ..., "content": ...} shape."""

_TRANSIENT_TYPES: tuple[type[BaseException], ...] = (
    TimeoutError,
    ConnectionError,
    requests.Timeout,
    requests.ConnectionError,
    openai.APITimeoutError,
    openai.APIConnectionError,
)


def _status_of(e: BaseException) -> Optional[int]:
    if isinstance(e, BackendStatusError):
        return e.status
    if isinstance(e, openai.APIStatusError):
        return e.status_code
    if isinstance(e, requests.HTTPError) and e.response is not None:
        return e.response.status_code
    return None


def _is_transient(e: BaseException, status: Optional[int]) -> bool:
    if isinstance(e, _TRANSIENT_TYPES):
        return True
    return status is not None and (status == 429 or status >= 500)


def call_with_retry(request: Callable[[], T], config: BackendConfig) -> T:
    """Runs `request`, retrying transient failures (timeouts, connection
    errors, 429 and 5xx) with jittered exponential backoff.

    Args:
        request: a zero-argument, idempotent call to the backend.
        config: supplies `max_retries` and the first backoff interval.

    Returns:
        Whatever `request` returns.

    Raises:
        NonTransient: on the first non-retryable failure.
        Exhausted: when every one of the `max_retries + 1` attempts failed.
    """
    attempts = 0

    def attempt() -> T:
        nonlocal attempts
        attempts += 1
        try:
            return request()
        except CareVoiceError as e:
            if not isinstance(e, BackendStatusError):
                raise
            if _is_transient(e, e.status):
                raise TransientError(e) from e
            raise NonTransient(e.status, e) from e
        except Exception as e:
            status = _status_of(e)
            if _is_transient(e, status):
                raise TransientError(e) from e
            raise NonTransient(status, e) from e

    retrying = backoff.on_exception(
        backoff.expo,
        TransientError,
        max_tries=config.max_retries + 1,
        jitter=backoff.full_jitter,
        logger=logger,
        factor=config.backoff_s,
    )(attempt)
    try:
        return retrying()
    except TransientError as e:
        raise Exhausted(e.cause, attempts) from e.cause


class FairSlots:
    """At most `size` concurrent holders; waiters get in by arrival order."""

    def __init__(self, size: int):
        assert size >= 1, "size must be positive"
        self.size = size
        self._active = 0
        self._issued = 0
        self._admitted = 0
        self._cond = threading.Condition()

    @property
    def waiting(self) -> int:
        with self._cond:
            return self._issued - self._admitted

    def __enter__(self) -> "FairSlots":
        with self._cond:
            ticket = self._issued
            self._issued += 1
            self._cond.wait_for(
                lambda: ticket == self._admitted and self._active < self.size
            )
            self._admitted += 1
            self._active += 1
            # The next ticket may fit as well.
            self._cond.notify_all()
        return self

    def __exit__(self, *exc: Any) -> None:
        with self._cond:
            self._active -= 1
            self._cond.notify_all()


class Backend(ABC):
    """
    Abstract base class for every model service client.

    Each instance caps its own concurrency at `max_in_flight`; waiting
    callers queue first come, first served, and every attempt holds one
    slot.
    """

    kind: BackendKind

    def __init__(self, config: Optional[BackendConfig] = None):
        self.config = default(config, lambda: BackendConfig(kind=self.kind))
        assert self.config.kind == self.kind, (
            f"{type(self).__name__} got a {self.config.kind.value} config"
        )
        self._slots = FairSlots(self.config.max_in_flight)

    @property
    def model_id(self) -> str:
        return self.config.model_id or type(self).__name__

    def _call(self, request: Callable[[], T]) -> T:
        def guarded() -> T:
            with self._slots:
                return request()

        return call_with_retry(guarded, self.config)


class Diarizer(Backend):
    kind = BackendKind.diarizer

    def diarize(
        self, audio: AudioBuffer, max_speakers: int = 4
    ) -> list[tuple[str, float, float]]:
        """Returns (local label, start_s, end_s) triples in buffer time."""
        return self._call(lambda: self._diarize(audio, max_speakers))

    @abstractmethod
    def _diarize(
        self, audio: AudioBuffer, max_speakers: int
    ) -> list[tuple[str, float, float]]:
        raise NotImplementedError


class SpeakerEmbedder(Backend):
    kind = BackendKind.speaker_embedder

    @property
    @abstractmethod
    def dim(self) -> int:
        raise NotImplementedError

    def embed(self, audio: AudioBuffer) -> Tensor["D"]:
        return self._call(lambda: self._embed(audio))

    @abstractmethod
    def _embed(self, audio: AudioBuffer) -> Tensor["D"]:
        raise NotImplementedError


class Enhancer(Backend):
    kind = BackendKind.enhancer

    def enhance(self, audio: AudioBuffer) -> AudioBuffer:
        return self._call(lambda: self._enhance(audio))

    @abstractmethod
    def _enhance(self, audio: AudioBuffer) -> AudioBuffer:
        raise NotImplementedError


class ASR(Backend):
    kind = BackendKind.asr

    def transcribe(self, audio: AudioBuffer) -> list[tuple[str, float, float]]:
        """Returns (text, start_s, end_s) per word, punctuation attached."""
        return self._call(lambda: self._transcribe(audio))

    @abstractmethod
    def _transcribe(self, audio: AudioBuffer) -> list[tuple[str, float, float]]:
        raise NotImplementedError


class ChatLLM(Backend):
    kind = BackendKind.chat_llm

    def chat(self, messages: list[Message]) -> str:
        return self._call(lambda: self._chat(messages))

    @abstractmethod
    def _chat(self, messages: list[Message]) -> str:
        raise NotImplementedError


class AudioLM(Backend):
    kind = BackendKind.audio_lm

    def complete(self, audio: AudioBuffer, instructions: str) -> str:
        return self._call(lambda: self._complete(audio, instructions))

    @abstractmethod
    def _complete(self, audio: AudioBuffer, instructions: str) -> str:
        raise NotImplementedError


class TextEmbedder(Backend):
    kind = BackendKind.text_embedder

    @property
    @abstractmethod
    def dim(self) -> int:
        raise NotImplementedError

    def embed(self, text: str) -> Tensor["D"]:
        return self._call(lambda: self._embed(text))

    @abstractmethod
    def _embed(self, text: str) -> Tensor["D"]:
        raise NotImplementedError


@dataclass
class BackendSuite:
    """One client per service kind. The enhancer is optional."""

    asr: ASR
    diarizer: Diarizer
    speaker_embedder: SpeakerEmbedder
    chat_llm: ChatLLM
    audio_lm: AudioLM
    text_embedder: TextEmbedder
    enhancer: Optional[Enhancer] = None


def as_vector(values: Any) -> Tensor["D"]:
    """Coerces a backend's JSON list (or tensor) into a float64 vector."""
    x = t.as_tensor(values, dtype=t.float64)
    assert x.ndim == 1, f"expected a vector, got shape {tuple(x.shape)}"
    return x
