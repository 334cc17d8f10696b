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
Mono audio buffers: WAV I/O, slicing, silence-gapped concatenation, truncation
and chunk planning for long recordings.

There is no resampling anywhere; everything runs at the recording's native
rate. Time to sample index conversion always uses round-half-away-from-zero.
"""
from __future__ import annotations

import io
import soundfile as sf
import torch as t

from dataclasses import dataclass
from einops import reduce
from pathlib import Path
from typing import Sequence, Union
from torchtyping import TensorType as Tensor

from carevoice.errors import (
    CorruptHeader,
    EmptyInput,
    InvalidParams,
    OutOfRange,
    SampleRateMismatch,
    UnsupportedFormat,
)
from carevoice.utils import round_half_away

__all__ = [
    "AudioBuffer",
    "read_wav",
    "write_wav",
    "to_wav_bytes",
    "from_wav_bytes",
    "slice_audio",
    "chunk_plan",
    "concat_with_silence",
    "truncate",
]

SUPPORTED_SUBTYPES = ("PCM_16", "FLOAT")

# Slack for float comparisons against a buffer's duration.
_EPS = 1e-9


@dataclass(frozen=True)
class AudioBuffer:
    """A mono buffer of samples in [-1, 1]."""

    samples: Tensor["N"]
    sample_rate_hz: int

    def __post_init__(self):
        assert self.samples.ndim == 1, f"mono only, got {self.samples.shape}"
        assert self.sample_rate_hz > 0, "sample rate must be positive"

    def __len__(self) -> int:
        return self.samples.numel()

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def index(self, time_s: float) -> int:
        return round_half_away(time_s * self.sample_rate_hz)

    def equals(self, other: "AudioBuffer") -> bool:
        return self.sample_rate_hz == other.sample_rate_hz and t.equal(
            self.samples, other.samples
        )


def _downmix(frames: Tensor["N", "C"]) -> Tensor["N"]:
    return reduce(frames, "n c -> n", "mean")


def _decode(source: Union[str, io.BytesIO], name: str) -> AudioBuffer:
    try:
        info = sf.info(source)
    except RuntimeError as e:
        raise CorruptHeader(f"{name}: {e}") from e
    if info.format not in ("WAV", "WAVEX"):
        raise UnsupportedFormat(f"{name}: container {info.format}")
    if info.subtype not in SUPPORTED_SUBTYPES:
        raise UnsupportedFormat(f"{name}: sample format {info.subtype}")
    if isinstance(source, io.BytesIO):
        source.seek(0)
    try:
        data, rate = sf.read(source, dtype="float32", always_2d=True)
    except RuntimeError as e:
        raise CorruptHeader(f"{name}: {e}") from e
    return AudioBuffer(_downmix(t.from_numpy(data)), int(rate))


def read_wav(path: Union[str, Path]) -> AudioBuffer:
    """Reads a PCM 16-bit or float32 WAV file; multi-channel files are
    downmixed by averaging the channels."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    return _decode(str(path), str(path))


def from_wav_bytes(data: bytes) -> AudioBuffer:
    return _decode(io.BytesIO(data), "<bytes>")


def _encode(audio: AudioBuffer, target) -> None:
    samples = audio.samples.detach().to(t.float32).clamp(-1.0, 1.0)
    sf.write(
        target,
        samples.cpu().numpy(),
        audio.sample_rate_hz,
        format="WAV",
        subtype="PCM_16",
    )


def to_wav_bytes(audio: AudioBuffer) -> bytes:
    buf = io.BytesIO()
    _encode(audio, buf)
    return buf.getvalue()


def write_wav(path: Union[str, Path], audio: AudioBuffer) -> None:
    """Writes a mono PCM 16-bit WAV at the buffer's own rate."""
    _encode(audio, str(path))


def slice_audio(
    audio: AudioBuffer, start_s: float, end_s: float
) -> AudioBuffer:
    """Sample-accurate sub-buffer covering [start_s, end_s)."""
    if not (0 <= start_s < end_s <= audio.duration_s + _EPS):
        raise OutOfRange(
            f"cannot slice [{start_s}, {end_s}] from {audio.duration_s}s"
        )
    lo = audio.index(start_s)
    hi = min(audio.index(end_s), len(audio))
    return AudioBuffer(audio.samples[lo:hi], audio.sample_rate_hz)


def chunk_plan(
    duration_s: float, chunk_s: float = 250.0, overlap_s: float = 5.0
) -> list[tuple[float, float]]:
    """Splits [0, duration_s] into overlapping chunks.

    Each chunk starts `chunk_s - overlap_s` after the previous one; the last
    chunk ends exactly at `duration_s`.
    """
    if overlap_s >= chunk_s:
        raise InvalidParams(
            f"overlap ({overlap_s}s) must be shorter than "
            f"the chunk ({chunk_s}s)"
        )
    if overlap_s < 0 or duration_s <= 0:
        raise InvalidParams(
            f"need duration > 0 and overlap >= 0, got {duration_s}, {overlap_s}"
        )
    stride = chunk_s - overlap_s
    plan: list[tuple[float, float]] = []
    k = 0
    while True:
        # Multiply rather than accumulate so long recordings don't drift.
        start = float(k * stride)
        end = float(min(start + chunk_s, duration_s))
        plan.append((start, end))
        if end >= duration_s:
            return plan
        k += 1


def concat_with_silence(
    segments: Sequence[AudioBuffer], gap_s: float = 0.5
) -> AudioBuffer:
    """Joins the segments with `gap_s` of zero-valued samples between them."""
    if len(segments) == 0:
        raise EmptyInput("nothing to concatenate")
    rate = segments[0].sample_rate_hz
    if any(s.sample_rate_hz != rate for s in segments):
        raise SampleRateMismatch(
            f"rates differ: {sorted({s.sample_rate_hz for s in segments})}"
        )
    dtype = segments[0].samples.dtype
    gap = t.zeros(round_half_away(gap_s * rate), dtype=dtype)
    parts: list[t.Tensor] = []
    for i, seg in enumerate(segments):
        if i > 0 and gap.numel() > 0:
            parts.append(gap)
        parts.append(seg.samples.to(dtype))
    return AudioBuffer(t.cat(parts), rate)


def truncate(audio: AudioBuffer, max_s: float = 30.0) -> AudioBuffer:
    """Keeps at most the first `max_s` seconds."""
    assert max_s > 0, "max_s must be positive"
    n = min(len(audio), audio.index(max_s))
    return AudioBuffer(audio.samples[:n], audio.sample_rate_hz)
