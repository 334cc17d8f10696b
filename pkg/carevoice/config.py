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
Structured configuration.

The schema below carries every default used in the study; a YAML file and
`key=value` overrides are merged on top of it with OmegaConf.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from carevoice.errors import ConfigError

__all__ = [
    "BackendKind",
    "BackendConfig",
    "BackendsConfig",
    "PipelineConfig",
    "LLMConfig",
    "AnalysisConfig",
    "MockConfig",
    "CareVoiceConfig",
    "load_config",
]


class BackendKind(str, Enum):
    asr = "asr"
    diarizer = "diarizer"
    speaker_embedder = "speaker_embedder"
    enhancer = "enhancer"
    chat_llm = "chat_llm"
    audio_lm = "audio_lm"
    text_embedder = "text_embedder"


@dataclass
class BackendConfig:
    kind: BackendKind = BackendKind.asr
    endpoint: str = ""
    model_id: str = ""
    # Name of the environment variable holding the key, never the key.
    api_key_env: str = ""
    timeout_s: float = 60.0
    max_retries: int = 3
    max_in_flight: int = 4
    # First backoff interval in seconds; doubles on every retry.
    backoff_s: float = 1.0
    # Extra request parameters, e.g. sampling settings for chat models.
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.timeout_s > 0:
            raise ValueError(f"{self.kind.value}: timeout_s must be > 0")
        if self.max_retries < 0:
            raise ValueError(f"{self.kind.value}: max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError(f"{self.kind.value}: max_in_flight must be >= 1")
        if self.backoff_s < 0:
            raise ValueError(f"{self.kind.value}: backoff_s must be >= 0")


def _backend(kind: BackendKind, **kwargs: Any):
    return field(default_factory=lambda: BackendConfig(kind=kind, **kwargs))


@dataclass
class BackendsConfig:
    asr: BackendConfig = _backend(BackendKind.asr)
    diarizer: BackendConfig = _backend(BackendKind.diarizer)
    speaker_embedder: BackendConfig = _backend(BackendKind.speaker_embedder)
    # No enhancer means verification embeddings use the raw audio.
    enhancer: Optional[BackendConfig] = None
    chat_llm: BackendConfig = _backend(
        BackendKind.chat_llm, model_id="gpt-4.1", api_key_env="OPENAI_API_KEY"
    )
    audio_lm: BackendConfig = _backend(
        BackendKind.audio_lm,
        model_id="gpt-4o-audio-preview",
        api_key_env="OPENAI_API_KEY",
    )
    text_embedder: BackendConfig = _backend(
        BackendKind.text_embedder, model_id="bge-m3"
    )


@dataclass
class PipelineConfig:
    chunk_s: float = 250.0
    overlap_s: float = 5.0
    max_speakers: int = 4
    gap_s: float = 0.5
    min_sentence_s: float = 0.5
    clip_cap_s: float = 30.0
    # Clips shorter than this are described but flagged low-confidence.
    low_confidence_s: float = 2.0
    sentence_terminators: str = ".!?"
    closing_marks: str = "\"')]}”’"

    def __post_init__(self):
        if self.overlap_s >= self.chunk_s:
            raise ValueError("overlap_s must be smaller than chunk_s")
        if not 1 <= self.max_speakers <= 4:
            raise ValueError("max_speakers must lie in [1, 4]")
        if self.clip_cap_s <= 0:
            raise ValueError("clip_cap_s must be positive")


@dataclass
class LLMConfig:
    # Total attempts per request, the first one included.
    retries: int = 3
    role_clarifications: int = 1
    # Directory with template overrides; the packaged templates otherwise.
    prompts_dir: Optional[str] = None

    def __post_init__(self):
        if self.retries < 1:
            raise ValueError("llm.retries must be >= 1")
        if self.role_clarifications < 0:
            raise ValueError("llm.role_clarifications must be >= 0")


@dataclass
class AnalysisConfig:
    tfidf_k: int = 3
    # Mode whose scores group the acoustic analyses.
    score_mode: str = "soap_vital"
    aggregation: str = "mean"
    kde_points: int = 200
    kde_lo: float = 0.0
    kde_hi: float = 6.0

    def __post_init__(self):
        if self.tfidf_k < 1:
            raise ValueError("analysis.tfidf_k must be >= 1")
        if self.aggregation not in ("mean", "max", "first"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.kde_points < 2 or not self.kde_lo < self.kde_hi:
            raise ValueError("kde grid needs kde_lo < kde_hi and >= 2 points")


@dataclass
class MockConfig:
    # YAML file with scripted chat / audio-LM replies.
    script: Optional[str] = None
    embedding_dim: int = 64


@dataclass
class CareVoiceConfig:
    out_dir: str = "runs"
    jobs: int = 1
    backends: BackendsConfig = field(default_factory=BackendsConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    llm: LLMConfig = field(default_factory=LLMConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    mock: MockConfig = field(default_factory=MockConfig)

    def __post_init__(self):
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


def load_config(
    path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = ()
) -> CareVoiceConfig:
    """Merges an optional YAML file and dotlist overrides over the schema."""
    try:
        cfg = OmegaConf.structured(CareVoiceConfig)
        if path is not None:
            cfg = OmegaConf.merge(cfg, OmegaConf.load(str(path)))
        if overrides:
            cfg = OmegaConf.merge(cfg, OmegaConf.from_dotlist(list(overrides)))
        obj = OmegaConf.to_object(cfg)
    except (OmegaConfBaseException, ValueError, OSError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    assert isinstance(obj, CareVoiceConfig)
    if path is not None:
        _resolve_relative(obj, Path(path).parent)
    return obj


def _resolve_relative(cfg: CareVoiceConfig, base: Path) -> None:
    """Paths in a config file are relative to the file itself."""
    if cfg.mock.script and not Path(cfg.mock.script).is_absolute():
        cfg.mock.script = str(base / cfg.mock.script)
    if cfg.llm.prompts_dir and not Path(cfg.llm.prompts_dir).is_absolute():
        cfg.llm.prompts_dir = str(base / cfg.llm.prompts_dir)
