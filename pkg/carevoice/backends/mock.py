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
Deterministic stand-ins for every backend kind.

The speech mocks read pure tones: audio is cut into quarter-second frames, a
frame is voiced when its RMS reaches `SILENCE_RMS`, and its "speaker" is the
dominant frequency. Embedders hash their input into fixed vectors through a
seeded generator, and the language models replay a script.

A script is a YAML document with two lists of entries:

    chat:
      - match: ["Write a SOAP note", "tone160"]   # every substring must occur
        reply: "Subjective: ..."
      - match: "3f2a9c01d4e5b6a7"                # or a prompt fingerprint
        reply: ["first reply", "second reply"]   # lists cycle per call
    audio_lm:
      - match: "Describe the acoustic"
        reply: "..."

The first matching entry wins; a prompt with no match raises ScriptMiss.
"""
from __future__ import annotations

import hashlib
import threading
import torch as t

from dataclasses import dataclass, field
from einops import rearrange
from pathlib import Path
from typing import Any, Optional, Sequence, Union
from omegaconf import OmegaConf
from torchtyping import TensorType as Tensor

from carevoice.audio import AudioBuffer
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
)
from carevoice.config import BackendConfig, BackendKind
from carevoice.errors import ScriptMiss
from carevoice.utils import digest, seeded_generator

__all__ = [
    "FRAME_S",
    "SILENCE_RMS",
    "ScriptEntry",
    "load_script",
    "prompt_fingerprint",
    "MockDiarizer",
    "MockASR",
    "MockSpeakerEmbedder",
    "MockEnhancer",
    "MockTextEmbedder",
    "ScriptedChatLLM",
    "ScriptedAudioLM",
    "mock_suite",
]

FRAME_S = 0.25
SILENCE_RMS = 1e-3
BAND_HZ = 20.0
N_BANDS = 128


def _frames(audio: AudioBuffer) -> Tensor["F", "L"]:
    size = audio.index(FRAME_S)
    n = len(audio) // size
    return rearrange(
        audio.samples[: n * size].to(t.float64), "(f l) -> f l", l=size
    )


def _frame_labels(audio: AudioBuffer) -> list[Optional[str]]:
    """One label per frame: `tone<hz>` for voiced frames, None for silence."""
    frames = _frames(audio)
    if frames.numel() == 0:
        return []
    rms = frames.pow(2).mean(dim=-1).sqrt()
    spectrum = t.fft.rfft(frames, dim=-1).abs()
    spectrum[:, 0] = 0.0
    peak = spectrum.argmax(dim=-1)
    hz = (peak.to(t.float64) * audio.sample_rate_hz / frames.shape[-1]).round()
    return [
        f"tone{int(f)}" if r >= SILENCE_RMS else None
        for r, f in zip(rms.tolist(), hz.tolist())
    ]


def _runs(labels: Sequence[Optional[str]]) -> list[tuple[str, int, int]]:
    """Maximal runs of equal voiced labels as (label, first, last + 1)."""
    runs: list[tuple[str, int, int]] = []
    for i, label in enumerate(labels):
        if label is None:
            continue
        if runs and runs[-1][0] == label and runs[-1][2] == i:
            runs[-1] = (label, runs[-1][1], i + 1)
        else:
            runs.append((label, i, i + 1))
    return runs


class MockDiarizer(Diarizer):
    """Each distinct tone is a speaker; only the `max_speakers` tones with
    the most voiced frames are reported."""

    def _diarize(
        self, audio: AudioBuffer, max_speakers: int
    ) -> list[tuple[str, float, float]]:
        labels = _frame_labels(audio)
        counts: dict[str, int] = {}
        for label in labels:
            if label is not None:
                counts[label] = counts.get(label, 0) + 1
        ranked = sorted(counts, key=lambda k: (-counts[k], k))
        keep = set(ranked[:max_speakers])
        return [
            (label, a * FRAME_S, b * FRAME_S)
            for label, a, b in _runs(labels)
            if label in keep
        ]


class MockASR(ASR):
    """One word per voiced frame, spelled after its tone. A word followed by
    silence, a different tone or the end of the audio closes a sentence."""

    def _transcribe(self, audio: AudioBuffer) -> list[tuple[str, float, float]]:
        labels = _frame_labels(audio)
        words: list[tuple[str, float, float]] = []
        for i, label in enumerate(labels):
            if label is None:
                continue
            nxt = labels[i + 1] if i + 1 < len(labels) else None
            text = label if nxt == label else label + "."
            words.append((text, i * FRAME_S, (i + 1) * FRAME_S))
        return words


class MockSpeakerEmbedder(SpeakerEmbedder):
    """Projects normalised 20 Hz band energies through a fixed random matrix.
    Silence embeds to the zero vector, which callers treat as a failure."""

    def __init__(
        self,
        seed: int = 0,
        dim: int = 64,
        config: Optional[BackendConfig] = None,
    ):
        super().__init__(config)
        self._dim = dim
        g = seeded_generator(seed, "speaker_embedder")
        self._projection = t.randn(N_BANDS, dim, generator=g, dtype=t.float64)

    @property
    def dim(self) -> int:
        return self._dim

    def _embed(self, audio: AudioBuffer) -> Tensor["D"]:
        x = audio.samples.to(t.float64)
        power = t.fft.rfft(x).abs().pow(2)
        freqs = t.fft.rfftfreq(x.numel(), d=1.0 / audio.sample_rate_hz)
        band = (freqs / BAND_HZ).floor().long()
        inside = band < N_BANDS
        bands = t.zeros(N_BANDS, dtype=t.float64)
        bands.index_add_(0, band[inside], power[inside])
        norm = bands.norm()
        if norm == 0:
            return t.zeros(self._dim, dtype=t.float64)
        return (bands / norm) @ self._projection


class MockEnhancer(Enhancer):
    def __init__(
        self, gain: float = 1.0, config: Optional[BackendConfig] = None
    ):
        super().__init__(config)
        self.gain = gain

    def _enhance(self, audio: AudioBuffer) -> AudioBuffer:
        return AudioBuffer(audio.samples * self.gain, audio.sample_rate_hz)


class MockTextEmbedder(TextEmbedder):
    """Every distinct string maps to its own seeded Gaussian vector."""

    def __init__(
        self,
        seed: int = 0,
        dim: int = 64,
        config: Optional[BackendConfig] = None,
    ):
        super().__init__(config)
        self.seed = seed
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    def _embed(self, text: str) -> Tensor["D"]:
        g = seeded_generator(self.seed, "text", text)
        return t.randn(self._dim, generator=g, dtype=t.float64)


# Scripted language models ---------------------------------------------------


@dataclass
class ScriptEntry:
    match: Union[str, list[str]]
    reply: Union[str, list[str]]
    calls: int = field(default=0, compare=False)

    def matches(self, text: str, fingerprint: str) -> bool:
        if isinstance(self.match, str):
            return self.match == fingerprint or self.match in text
        return all(m in text for m in self.match)

    def next_reply(self) -> str:
        if isinstance(self.reply, str):
            return self.reply
        reply = self.reply[self.calls % len(self.reply)]
        self.calls += 1
        return reply


def _entries(raw: Any) -> list[ScriptEntry]:
    entries = []
    for item in raw or []:
        match, reply = item["match"], item["reply"]
        entries.append(
            ScriptEntry(
                match=match if isinstance(match, str) else list(match),
                reply=reply if isinstance(reply, str) else list(reply),
            )
        )
    return entries


def load_script(
    path: Optional[Union[str, Path]],
) -> dict[str, list[ScriptEntry]]:
    """Reads a script file into {"chat": [...], "audio_lm": [...]}."""
    if path is None:
        return {"chat": [], "audio_lm": []}
    raw = OmegaConf.to_container(OmegaConf.load(str(path)), resolve=True)
    assert isinstance(raw, dict), f"{path}: a script must be a mapping"
    return {
        "chat": _entries(raw.get("chat")),
        "audio_lm": _entries(raw.get("audio_lm")),
    }


class _Scripted:
    def __init__(self, entries: Sequence[ScriptEntry]):
        self.entries = list(entries)
        self._lock = threading.Lock()

    def _reply(self, text: str, fingerprint: str) -> str:
        with self._lock:
            for entry in self.entries:
                if entry.matches(text, fingerprint):
                    return entry.next_reply()
        raise ScriptMiss(fingerprint)


def prompt_fingerprint(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _message_text(messages: Sequence[Message]) -> str:
    return "\n".join(
        m["content"] for m in messages if isinstance(m.get("content"), str)
    )


class ScriptedChatLLM(_Scripted, ChatLLM):
    """Matches entries against the concatenated message contents."""

    def __init__(
        self,
        entries: Sequence[ScriptEntry] = (),
        model_id: str = "mock-chat",
        config: Optional[BackendConfig] = None,
    ):
        _Scripted.__init__(self, entries)
        ChatLLM.__init__(
            self,
            config
            or BackendConfig(kind=BackendKind.chat_llm, model_id=model_id),
        )

    def _chat(self, messages: list[Message]) -> str:
        text = _message_text(messages)
        return self._reply(text, prompt_fingerprint(text))


class ScriptedAudioLM(_Scripted, AudioLM):
    """Matches entries against the instructions; the fingerprint also covers
    the audio, so a clip can be addressed exactly."""

    def __init__(
        self,
        entries: Sequence[ScriptEntry] = (),
        model_id: str = "mock-audio-lm",
        config: Optional[BackendConfig] = None,
    ):
        _Scripted.__init__(self, entries)
        AudioLM.__init__(
            self,
            config
            or BackendConfig(kind=BackendKind.audio_lm, model_id=model_id),
        )

    def _complete(self, audio: AudioBuffer, instructions: str) -> str:
        samples = audio.samples.detach().to(t.float32).cpu().numpy().tobytes()
        fingerprint = digest(instructions, samples)[:16]
        return self._reply(instructions, fingerprint)


def mock_suite(
    seed: int,
    script: Optional[dict[str, list[ScriptEntry]]] = None,
    embedding_dim: int = 64,
    enhancer_gain: Optional[float] = 1.0,
) -> BackendSuite:
    """A full deterministic suite; identical seeds and scripts give
    bit-identical outputs."""
    script = script or load_script(None)
    return BackendSuite(
        asr=MockASR(),
        diarizer=MockDiarizer(),
        speaker_embedder=MockSpeakerEmbedder(seed, embedding_dim),
        chat_llm=ScriptedChatLLM(script["chat"]),
        audio_lm=ScriptedAudioLM(script["audio_lm"]),
        text_embedder=MockTextEmbedder(seed, embedding_dim),
        enhancer=None if enhancer_gain is None else MockEnhancer(enhancer_gain),
    )
