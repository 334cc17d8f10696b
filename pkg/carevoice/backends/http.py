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
HTTP clients for the hosted model services.

Chat, audio-language and text-embedding models are reached through any
OpenAI-compatible endpoint. The speech services (diarizer, ASR, speaker
embedder, enhancer) are reached through small shim servers with the
following contract, all bodies JSON unless stated:

    POST /diarize?max_speakers=4  wav -> {"segments": [{label, start_s, end_s}]}
    POST /transcribe              wav -> {"words": [{text, start_s, end_s}]}
    POST /embed                   wav -> {"embedding": [float, ...]}
    POST /enhance                 wav -> wav
    GET  /capabilities                -> {"dim": int}

Clients never log request or response bodies.
"""
from __future__ import annotations

import base64
import logging
import os
import requests

from functools import cached_property
from typing import Any, Optional
from openai import OpenAI
from torchtyping import TensorType as Tensor

from carevoice.audio import AudioBuffer, from_wav_bytes, to_wav_bytes
from carevoice.backends.base import (
    ASR,
    AudioLM,
    BackendSuite,
    ChatLLM,
    Diarizer,
    Enhancer,
    Message,
    SpeakerEmbedder,
    TextEmbedder,
    as_vector,
)
from carevoice.config import BackendConfig, BackendsConfig
from carevoice.errors import BackendStatusError, ConfigError, UnparseableReply

__all__ = [
    "ShimDiarizer",
    "ShimASR",
    "ShimSpeakerEmbedder",
    "ShimEnhancer",
    "OpenAIChatLLM",
    "OpenAIAudioLM",
    "OpenAITextEmbedder",
    "http_suite",
]

logger = logging.getLogger(__name__)


def _api_key(config: BackendConfig) -> Optional[str]:
    if not config.api_key_env:
        return None
    key = os.environ.get(config.api_key_env)
    if key is None:
        raise ConfigError(
            f"{config.kind.value}: environment variable "
            f"{config.api_key_env} is not set"
        )
    return key


class _Shim:
    """Shared plumbing for the shim-server speech clients."""

    config: BackendConfig

    def _init_session(self) -> None:
        if not self.config.endpoint:
            raise ConfigError(f"{self.config.kind.value}: no endpoint set")
        self._session = requests.Session()
        key = _api_key(self.config)
        if key is not None:
            self._session.headers["Authorization"] = f"Bearer {key}"

    def _url(self, path: str) -> str:
        return self.config.endpoint.rstrip("/") + path

    def _check(self, response: requests.Response) -> requests.Response:
        if not response.ok:
            raise BackendStatusError(response.status_code, response.reason)
        return response

    def _post_audio(
        self, path: str, audio: AudioBuffer, **params: Any
    ) -> requests.Response:
        body = to_wav_bytes(audio)
        logger.debug(
            "POST %s (%d bytes, %.2fs audio)", path, len(body), audio.duration_s
        )
        response = self._session.post(
            self._url(path),
            data=body,
            params=params or None,
            headers={"Content-Type": "audio/wav"},
            timeout=self.config.timeout_s,
        )
        return self._check(response)

    def _capabilities(self) -> dict[str, Any]:
        response = self._session.get(
            self._url("/capabilities"), timeout=self.config.timeout_s
        )
        return self._check(response).json()


class ShimDiarizer(_Shim, Diarizer):
    def __init__(self, config: BackendConfig):
        super().__init__(config)
        self._init_session()

    def _diarize(
        self, audio: AudioBuffer, max_speakers: int
    ) -> list[tuple[str, float, float]]:
        body = self._post_audio("/diarize", audio, max_speakers=max_speakers)
        return [
            (str(s["label"]), float(s["start_s"]), float(s["end_s"]))
            for s in body.json()["segments"]
        ]


class ShimASR(_Shim, ASR):
    def __init__(self, config: BackendConfig):
        super().__init__(config)
        self._init_session()

    def _transcribe(self, audio: AudioBuffer) -> list[tuple[str, float, float]]:
        body = self._post_audio("/transcribe", audio)
        return [
            (str(w["text"]), float(w["start_s"]), float(w["end_s"]))
            for w in body.json()["words"]
        ]


class ShimSpeakerEmbedder(_Shim, SpeakerEmbedder):
    def __init__(self, config: BackendConfig):
        super().__init__(config)
        self._init_session()

    @cached_property
    def dim(self) -> int:
        return int(self._call(self._capabilities)["dim"])

    def _embed(self, audio: AudioBuffer) -> Tensor["D"]:
        return as_vector(self._post_audio("/embed", audio).json()["embedding"])


class ShimEnhancer(_Shim, Enhancer):
    def __init__(self, config: BackendConfig):
        super().__init__(config)
        self._init_session()

    def _enhance(self, audio: AudioBuffer) -> AudioBuffer:
        return from_wav_bytes(self._post_audio("/enhance", audio).content)


class _OpenAI:
    config: BackendConfig

    def _init_client(self) -> None:
        self._client = OpenAI(
            base_url=self.config.endpoint or None,
            api_key=_api_key(self.config) or "unused",
            timeout=self.config.timeout_s,
            # Retries are ours, see call_with_retry.
            max_retries=0,
        )


def _reply_text(completion: Any) -> str:
    content = completion.choices[0].message.content
    if content is None:
        raise UnparseableReply("model returned no text content")
    return content


class OpenAIChatLLM(_OpenAI, ChatLLM):
    def __init__(self, config: BackendConfig):
        super().__init__(config)
        self._init_client()

    def _chat(self, messages: list[Message]) -> str:
        completion = self._client.chat.completions.create(
            model=self.config.model_id,
            messages=messages,  # type: ignore[arg-type]
            **self.config.params,
        )
        return _reply_text(completion)


class OpenAIAudioLM(_OpenAI, AudioLM):
    """Sends the clip as base64 WAV alongside the text instructions."""

    def __init__(self, config: BackendConfig):
        super().__init__(config)
        self._init_client()

    def _complete(self, audio: AudioBuffer, instructions: str) -> str:
        data = base64.b64encode(to_wav_bytes(audio)).decode("ascii")
        completion = self._client.chat.completions.create(
            model=self.config.model_id,
            modalities=["text"],
            messages=[
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": instructions},
                        {
                            "type": "input_audio",
                            "input_audio": {"data": data, "format": "wav"},
                        },
                    ],
                }
            ],  # type: ignore[list-item]
            **self.config.params,
        )
        return _reply_text(completion)


class OpenAITextEmbedder(_OpenAI, TextEmbedder):
    def __init__(self, config: BackendConfig):
        super().__init__(config)
        self._init_client()

    @cached_property
    def dim(self) -> int:
        # The embeddings API has no capabilities call; embed one string instead.
        if "dim" in self.config.params:
            return int(self.config.params["dim"])
        return int(self.embed("dimension check").numel())

    def _embed(self, text: str) -> Tensor["D"]:
        response = self._client.embeddings.create(
            model=self.config.model_id, input=text
        )
        return as_vector(response.data[0].embedding)


def http_suite(config: BackendsConfig) -> BackendSuite:
    """Builds live clients for every configured service."""
    return BackendSuite(
        asr=ShimASR(config.asr),
        diarizer=ShimDiarizer(config.diarizer),
        speaker_embedder=ShimSpeakerEmbedder(config.speaker_embedder),
        chat_llm=OpenAIChatLLM(config.chat_llm),
        audio_lm=OpenAIAudioLM(config.audio_lm),
        text_embedder=OpenAITextEmbedder(config.text_embedder),
        enhancer=ShimEnhancer(config.enhancer) if config.enhancer else None,
    )
