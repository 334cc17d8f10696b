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

from pathlib import Path

from carevoice.config import BackendKind, CareVoiceConfig, load_config
from carevoice.errors import ConfigError


def test_defaults():
    cfg = load_config()
    assert isinstance(cfg, CareVoiceConfig)
    assert cfg.pipeline.chunk_s == 250.0
    assert cfg.pipeline.overlap_s == 5.0
    assert cfg.pipeline.max_speakers == 4
    assert cfg.pipeline.gap_s == 0.5
    assert cfg.pipeline.min_sentence_s == 0.5
    assert cfg.pipeline.clip_cap_s == 30.0
    assert cfg.llm.retries == 3
    assert cfg.analysis.tfidf_k == 3
    assert cfg.backends.chat_llm.kind is BackendKind.chat_llm
    assert cfg.backends.enhancer is None


def test_file_and_overrides(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(
        "jobs: 2\n"
        "pipeline:\n"
        "  gap_s: 0.25\n"
        "mock:\n"
        "  script: scripts/replies.yaml\n"
    )
    cfg = load_config(path, ["pipeline.gap_s=0.75", "analysis.tfidf_k=5"])
    assert cfg.jobs == 2
    assert cfg.pipeline.gap_s == 0.75
    assert cfg.analysis.tfidf_k == 5
    assert Path(cfg.mock.script) == tmp_path / "scripts" / "replies.yaml"


@pytest.mark.parametrize(
    "override",
    [
        "pipeline.overlap_s=300",
        "pipeline.max_speakers=5",
        "jobs=0",
        "llm.retries=0",
        "analysis.aggregation=median",
        "backends.asr.timeout_s=0",
        "pipeline.chunk_s=not-a-number",
        "no_such_key=1",
    ],
)
def test_invalid_values_are_config_errors(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
