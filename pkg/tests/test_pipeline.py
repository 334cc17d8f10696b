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

import pandas as pd
import pytest

from pathlib import Path

from carevoice.artifacts import (
    INSUFFICIENT_GROUP,
    CohortAnalysis,
    VisitPaths,
    dumps,
    is_fresh,
    load_analysis,
    model_slug,
    read_json,
    record_stage,
    require,
    write_bytes,
    write_report,
)
from carevoice.config import load_config
from carevoice.core import InputMode, read_manifest, validate_manifest
from carevoice.errors import MissingAnalysis, PrerequisiteMissing
from carevoice.pipeline import (
    VISIT_STAGES,
    build_context,
    prerequisites,
    read_scores,
    report,
    run_all,
    run_stage,
)


# Artifacts --------------------------------------------------------------------


def test_write_bytes_skips_identical(tmp_path):
    path = tmp_path / "a" / "b.txt"
    assert write_bytes(path, b"one")
    assert not write_bytes(path, b"one")
    assert write_bytes(path, b"two")
    assert path.read_bytes() == b"two"
    assert list(path.parent.iterdir()) == [path]


def test_dumps_is_canonical():
    assert dumps({"b": 1, "a": (1, 2)}) == dumps({"a": [1, 2], "b": 1})
    assert dumps({2: "x"}).endswith("\n")
    assert '"2": "x"' in dumps({2: "x"})


def test_model_slug():
    assert model_slug("gpt-4.1") == "gpt-4.1"
    assert model_slug("org/model:latest") == "org_model_latest"
    assert model_slug("///") == "model"


def test_stage_records(tmp_path):
    visit = VisitPaths(tmp_path / "v1")
    src = tmp_path / "input.txt"
    out = visit.root / "out.txt"
    with pytest.raises(PrerequisiteMissing):
        require("demo", [src])
    src.write_text("a")
    write_bytes(out, b"result")
    assert not is_fresh(visit, "demo", [src], {"k": 1}, [out])
    record_stage(visit, "demo", [src], {"k": 1}, [out])
    assert is_fresh(visit, "demo", [src], {"k": 1}, [out])
    assert not is_fresh(visit, "demo", [src], {"k": 2}, [out])
    src.write_text("b")
    assert not is_fresh(visit, "demo", [src], {"k": 1}, [out])
    record_stage(visit, "demo", [src], {"k": 1}, [out])
    out.unlink()
    assert not is_fresh(visit, "demo", [src], {"k": 1}, [out])


def test_report_marks_insufficient_groups(tmp_path):
    with pytest.raises(MissingAnalysis):
        load_analysis(tmp_path)
    analysis = CohortAnalysis(
        tables={
            "wd": (
                {
                    "model": "m",
                    "mode": "soap_only",
                    "WD": None,
                    "no_ed_hosp_mean": 2.0,
                    "ed_hosp_mean": None,
                    "no_ed_hosp_n": 3,
                    "ed_hosp_n": 0,
                },
            )
        }
    )
    written = write_report(analysis, tmp_path)
    assert len(written) == 8
    wd = pd.read_csv(tmp_path / "analysis" / "wd.csv")
    assert list(wd.columns) == [
        "model",
        "mode",
        "WD",
        "no_ed_hosp_mean",
        "ed_hosp_mean",
        "no_ed_hosp_n",
        "ed_hosp_n",
    ]
    assert wd.loc[0, "WD"] == INSUFFICIENT_GROUP
    assert wd.loc[0, "ed_hosp_mean"] == INSUFFICIENT_GROUP
    summary = pd.read_csv(tmp_path / "analysis" / "summary.csv")
    assert summary.empty


# Stages -----------------------------------------------------------------------


def _context(cohort, out: Path, **kwargs):
    cfg = load_config(cohort["config"], [f"out_dir={out}"])
    return build_context(cfg, cohort["manifest"], mock_seed=42, **kwargs)


def _visits(cohort):
    visits, errors = validate_manifest(read_manifest(cohort["manifest"]))
    assert errors == []
    return visits


def test_stage_without_prerequisites_fails_per_visit(cohort, tmp_path):
    ctx = _context(cohort, tmp_path / "out")
    result = run_stage(ctx, "align", _visits(cohort))
    assert not result.ok
    assert len(result.failed) == 6
    assert {f.error for f in result.failed} == {"PrerequisiteMissing"}
    assert result.failed[0].fields["stage"] == "align"


def test_stages_write_artifacts_and_skip_when_fresh(cohort, tmp_path):
    ctx = _context(cohort, tmp_path / "out")
    visits = _visits(cohort)[:1]
    for stage in VISIT_STAGES:
        result = run_stage(ctx, stage, visits)
        assert result.ran == ["v1"], stage

    v = ctx.visit(visits[0])
    diarization = read_json(v.diarization)
    assert [s["speaker"] for s in diarization["segments"]] == [0, 1, 0, 1]
    assert v.transcript.read_text().startswith("Speaker 0: tone200")
    assert read_json(v.roles)["roles"] == {"0": "clinician", "1": "patient"}
    assert sorted(p.name for p in v.clips.iterdir()) == [
        "speaker_0.wav",
        "speaker_1.wav",
    ]
    scores = read_scores(v.score(InputMode.soap_vital))
    assert scores["mock-chat"].score == 2
    reports = read_json(v.descriptions)["reports"]
    assert [r["role"] for r in reports] == ["clinician", "patient"]
    assert reports[0]["profile"] is None
    assert reports[1]["profile"]["gender"] == "female"
    quantified = read_json(v.quantified)["speakers"]
    assert {f["feature"] for f in quantified[1]["features"]} == {
        "energy",
        "discomfort_fatigue",
    }

    mtime = v.soap.stat().st_mtime_ns
    for stage in VISIT_STAGES:
        result = run_stage(ctx, stage, visits)
        assert result.skipped == ["v1"], stage
    assert v.soap.stat().st_mtime_ns == mtime

    forced = _context(cohort, tmp_path / "out", force=True)
    assert run_stage(forced, "soap", visits).ran == ["v1"]
    assert v.soap.stat().st_mtime_ns == mtime


def test_changed_inputs_rerun_a_stage(cohort, tmp_path):
    out = tmp_path / "out"
    ctx = _context(cohort, out)
    visits = _visits(cohort)[:1]
    for stage in ("stitch", "align", "roles"):
        run_stage(ctx, stage, visits)
    v = ctx.visit(visits[0])
    v.transcript.write_text("Speaker 0: hello.\nSpeaker 1: hi.\n")
    assert run_stage(ctx, "roles", visits).ran == ["v1"]
    assert run_stage(ctx, "roles", visits).skipped == ["v1"]

    assert run_stage(ctx, "stitch", visits).skipped == ["v1"]
    cfg = load_config(
        cohort["config"], [f"out_dir={out}", "pipeline.gap_s=0.25"]
    )
    retuned = build_context(cfg, cohort["manifest"], mock_seed=42)
    assert run_stage(retuned, "stitch", visits).ran == ["v1"]
    reseeded = _context(cohort, out)
    reseeded.backend_tag = "mock:7"
    assert run_stage(reseeded, "stitch", visits).ran == ["v1"]


def test_other_mode_adds_its_own_score_file(cohort, tmp_path):
    out = tmp_path / "out"
    visits = _visits(cohort)[3:4]
    ctx = _context(cohort, out)
    for stage in ("stitch", "align", "soap", "score"):
        run_stage(ctx, stage, visits)
    vital = _context(cohort, out, mode=InputMode.vital_only)
    assert run_stage(vital, "score", visits).ran == ["v4"]
    v = ctx.visit(visits[0])
    assert read_scores(v.score(InputMode.soap_vital))["mock-chat"].score == 4
    assert read_scores(v.score(InputMode.vital_only))["mock-chat"].score == 2


def test_failed_visit_is_left_out(cohort, tmp_path):
    ctx = _context(cohort, tmp_path / "out")
    visits = _visits(cohort)
    (cohort["root"] / "audio" / "v3.wav").unlink()
    result = run_all(ctx, visits)
    assert [f.visit_id for f in result.failed] == ["v3"]
    assert result.failed[0].stage == "stitch"
    assert "v3" not in result.ran
    assert not (ctx.out / "v3" / "diarization.json").exists()
    wd = pd.read_csv(ctx.out / "analysis" / "wd.csv")
    assert wd.loc[0, "no_ed_hosp_n"] == 1


def test_report_needs_analysis(tmp_path):
    result = report(tmp_path)
    assert [f.error for f in result.failed] == ["MissingAnalysis"]


def test_score_failure_keeps_the_voice_stages(cohort, tmp_path):
    ctx = _context(cohort, tmp_path / "out")
    visits = _visits(cohort)
    # Without vitals the soap+vital score cannot be asked for.
    visits[0] = visits[0].model_copy(update={"vitals": ()})
    result = run_all(ctx, visits)
    assert [(f.visit_id, f.stage, f.error) for f in result.failed] == [
        ("v1", "score", "ModeInputMissing")
    ]
    assert "v1" not in result.ran
    v = ctx.visit(visits[0])
    assert not v.score(InputMode.soap_vital).exists()
    assert v.soap.exists()
    speakers = read_json(v.quantified)["speakers"]
    patient = [s for s in speakers if s["role"] == "patient"]
    assert len(patient) == 1
    assert {f["feature"] for f in patient[0]["features"]} == {
        "energy",
        "discomfort_fatigue",
    }


def test_prerequisites_follow_the_artifacts_read():
    assert prerequisites("describe", InputMode.soap_vital) == (
        "reverify",
        "roles",
    )
    assert prerequisites("score", InputMode.soap_only) == ("soap",)
    assert prerequisites("score", InputMode.vital_only) == ()
    assert prerequisites("stitch", InputMode.vital_only) == ()
