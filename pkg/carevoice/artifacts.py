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
On-disk layout of a run.

    <out>/<visit_id>/diarization.json
                     words.jsonl, sentences.jsonl, transcript.txt
                     verified.jsonl, reverify.json, clips/speaker_<k>.wav
                     roles.json, soap.json, score.<mode>.json
                     descriptions.json, quantified.json
                     .stages/<stage>.json
    <out>/analysis/analysis.json and the report CSVs

Writes are skipped when the bytes on disk already match, and each stage
records the digests of its inputs so an unchanged stage is not rerun.
"""
from __future__ import annotations

import json
import logging
import re
import pandas as pd

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union
from pydantic import BaseModel

from carevoice.audio import AudioBuffer, to_wav_bytes
from carevoice.core import GlobalSpeakerId, InputMode, _Frozen
from carevoice.errors import MissingAnalysis, PrerequisiteMissing
from carevoice.utils import digest

__all__ = [
    "ANALYSIS_DIR",
    "REPORT_COLUMNS",
    "INSUFFICIENT_GROUP",
    "VisitPaths",
    "StageRecord",
    "write_text",
    "write_bytes",
    "write_json",
    "write_jsonl",
    "write_wav_if_changed",
    "read_json",
    "dumps",
    "file_digest",
    "require",
    "is_fresh",
    "record_stage",
    "model_slug",
    "CohortAnalysis",
    "analysis_path",
    "load_analysis",
    "write_report",
    "clear_clips",
]

logger = logging.getLogger(__name__)

ANALYSIS_DIR = "analysis"
INSUFFICIENT_GROUP = "insufficient-group"

REPORT_COLUMNS: dict[str, tuple[str, ...]] = {
    "summary": ("model", "mode", "group", "n", "min", "max", "mean"),
    "wd": (
        "model",
        "mode",
        "WD",
        "no_ed_hosp_mean",
        "ed_hosp_mean",
        "no_ed_hosp_n",
        "ed_hosp_n",
    ),
    "tfidf": ("feature", "group", "rank", "phrase", "score"),
    "freq": ("feature", "group", "phrase", "count"),
    "kde": ("model", "mode", "group", "x", "density"),
    "violin": ("feature", "score", "level"),
    "gender": ("truth", "predicted", "count"),
    "age": ("category", "n", "min", "max", "mean"),
}


def model_slug(model_id: str) -> str:
    """File-name-safe form of a model id."""
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", model_id).strip("_") or "model"


@dataclass(frozen=True)
class VisitPaths:
    root: Path

    @property
    def diarization(self) -> Path:
        return self.root / "diarization.json"

    @property
    def words(self) -> Path:
        return self.root / "words.jsonl"

    @property
    def sentences(self) -> Path:
        return self.root / "sentences.jsonl"

    @property
    def transcript(self) -> Path:
        return self.root / "transcript.txt"

    @property
    def verified(self) -> Path:
        return self.root / "verified.jsonl"

    @property
    def reverify(self) -> Path:
        return self.root / "reverify.json"

    @property
    def clips(self) -> Path:
        return self.root / "clips"

    def clip(self, speaker: GlobalSpeakerId) -> Path:
        return self.clips / f"speaker_{speaker}.wav"

    @property
    def roles(self) -> Path:
        return self.root / "roles.json"

    @property
    def soap(self) -> Path:
        return self.root / "soap.json"

    def score(self, mode: InputMode) -> Path:
        return self.root / f"score.{mode.value}.json"

    @property
    def descriptions(self) -> Path:
        return self.root / "descriptions.json"

    @property
    def quantified(self) -> Path:
        return self.root / "quantified.json"

    def stage_record(self, stage: str) -> Path:
        return self.root / ".stages" / f"{stage}.json"


# Writing ----------------------------------------------------------------------


def write_bytes(path: Path, data: bytes) -> bool:
    """Writes `data` unless the file already holds exactly these bytes.
    Returns whether the file was written."""
    if path.is_file() and path.read_bytes() == data:
        return False
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return True


def write_text(path: Path, text: str) -> bool:
    return write_bytes(path, text.encode("utf-8"))


def _plain(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json")
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def dumps(obj: Any) -> str:
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def write_json(path: Path, obj: Any) -> bool:
    return write_text(path, dumps(obj))


def write_jsonl(path: Path, items: Iterable[BaseModel]) -> bool:
    return write_text(path, "".join(i.model_dump_json() + "\n" for i in items))


def write_wav_if_changed(path: Path, audio: AudioBuffer) -> bool:
    return write_bytes(path, to_wav_bytes(audio))


def read_json(path: Path) -> Any:
    return json.loads(path.read_text(encoding="utf-8"))


# Stage records ----------------------------------------------------------------


class StageRecord(_Frozen):
    stage: str
    inputs: dict[str, str]
    params: str
    outputs: tuple[str, ...]


def file_digest(path: Path) -> str:
    return digest(path.read_bytes())


def require(stage: str, paths: Iterable[Path]) -> None:
    for p in paths:
        if not p.exists():
            raise PrerequisiteMissing(stage, p.name)


def _rel(visit: VisitPaths, path: Path) -> str:
    if path.is_relative_to(visit.root):
        return path.relative_to(visit.root).as_posix()
    return path.name


def _record(
    visit: VisitPaths,
    stage: str,
    inputs: Sequence[Path],
    params: Any,
    outputs: Sequence[Path],
) -> StageRecord:
    return StageRecord(
        stage=stage,
        inputs={_rel(visit, p): file_digest(p) for p in inputs},
        params=digest(dumps(params)),
        outputs=tuple(_rel(visit, p) for p in outputs),
    )


def is_fresh(
    visit: VisitPaths,
    stage: str,
    inputs: Sequence[Path],
    params: Any,
    outputs: Sequence[Path],
) -> bool:
    """Whether the last run of `stage` saw exactly these inputs and its
    outputs are all still present."""
    path = visit.stage_record(stage)
    if not path.is_file() or not all(p.exists() for p in outputs):
        return False
    stored = StageRecord.model_validate_json(path.read_text(encoding="utf-8"))
    return stored == _record(visit, stage, inputs, params, outputs)


def record_stage(
    visit: VisitPaths,
    stage: str,
    inputs: Sequence[Path],
    params: Any,
    outputs: Sequence[Path],
) -> None:
    write_json(
        visit.stage_record(stage),
        _record(visit, stage, inputs, params, outputs),
    )


# Analysis and report ----------------------------------------------------------


class CohortAnalysis(_Frozen):
    """Everything the report needs, one row list per CSV."""

    tables: dict[str, tuple[dict[str, Any], ...]]
    gender_accuracy: Optional[float] = None
    warnings: tuple[str, ...] = ()


def analysis_path(out: Path) -> Path:
    return out / ANALYSIS_DIR / "analysis.json"


def load_analysis(out: Path) -> CohortAnalysis:
    path = analysis_path(out)
    if not path.is_file():
        raise MissingAnalysis(f"{path} not found; run the analyze stage first")
    return CohortAnalysis.model_validate_json(path.read_text(encoding="utf-8"))


def _cell(value: Any) -> Any:
    return INSUFFICIENT_GROUP if value is None else value


def write_report(analysis: CohortAnalysis, out: Path) -> list[Path]:
    """One CSV per table, with the column order of REPORT_COLUMNS."""
    written = []
    for name, columns in REPORT_COLUMNS.items():
        rows = analysis.tables.get(name, ())
        frame = pd.DataFrame(
            [{c: _cell(r.get(c)) for c in columns} for r in rows],
            columns=list(columns),
        )
        path = out / ANALYSIS_DIR / f"{name}.csv"
        write_text(path, frame.to_csv(index=False, lineterminator="\n"))
        written.append(path)
    logger.info("wrote %d report tables", len(written))
    return written


def clear_clips(visit: VisitPaths, keep: Iterable[Union[str, Path]]) -> None:
    """Removes clip files a rerun no longer produces."""
    keep_names = {Path(k).name for k in keep}
    if visit.clips.is_dir():
        for f in visit.clips.glob("speaker_*.wav"):
            if f.name not in keep_names:
                f.unlink()
