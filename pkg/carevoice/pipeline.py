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
Stage runner.

Each per-visit stage reads its predecessors' artifacts from the visit
directory, writes its own, and records the digests of what it read. A stage
whose inputs are unchanged is skipped unless forced. Visits run on a thread
pool; one visit's failure is reported and never stops the others.
"""
from __future__ import annotations

import dataclasses
import logging

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from carevoice.align import (
    assign_word_speakers,
    filter_sentences,
    group_sentences,
    speaker_transcript,
    transcribe,
)
from carevoice.analytics import (
    PhraseCorpus,
    age_by_category,
    compare_groups,
    gender_confusion,
    kde_curve,
    level_by_score,
    patient_mean_scores,
    phrase_frequencies,
    split_groups,
    summary_stats,
    tfidf_top_phrases,
)
from carevoice.artifacts import (
    CohortAnalysis,
    VisitPaths,
    analysis_path,
    clear_clips,
    is_fresh,
    load_analysis,
    model_slug,
    read_json,
    record_stage,
    require,
    write_json,
    write_jsonl,
    write_report,
    write_text,
    write_wav_if_changed,
)
from carevoice.audio import read_wav
from carevoice.backends import BackendSuite, http_suite, load_script, mock_suite
from carevoice.biomarkers import (
    VoiceReport,
    describe_voice,
    predict_gender_age,
)
from carevoice.clinical import (
    PromptTemplate,
    assign_roles,
    generate_soap,
    load_templates,
    render_vitals,
    score_illness,
)
from carevoice.config import CareVoiceConfig
from carevoice.core import (
    AcousticFeature,
    IllnessAssessment,
    InputMode,
    Sentence,
    SoapNote,
    SpeakerRole,
    SpeakerSegment,
    VisitManifest,
    read_jsonl,
)
from carevoice.diarize import stitch
from carevoice.errors import (
    CareVoiceError,
    ClipDurationError,
    UnparseableReply,
)
from carevoice.logs import visit_context
from carevoice.quantify import (
    EmbeddingCache,
    QuantifiedFeature,
    builtin_scales,
    quantify_descriptions,
)
from carevoice.reverify import reverify

__all__ = [
    "VISIT_STAGES",
    "RunContext",
    "VisitFailure",
    "StageReport",
    "build_context",
    "run_visit_stage",
    "run_stage",
    "analyze",
    "run_analysis",
    "report",
    "read_scores",
    "read_reports",
    "prerequisites",
    "run_all",
]

logger = logging.getLogger(__name__)

VISIT_STAGES = (
    "stitch",
    "align",
    "reverify",
    "roles",
    "soap",
    "score",
    "describe",
    "quantify",
)


@dataclass
class RunContext:
    config: CareVoiceConfig
    backends: BackendSuite
    templates: dict[str, PromptTemplate]
    out: Path
    manifest_dir: Path
    mode: InputMode = InputMode.soap_vital
    force: bool = False
    # Identifies the backend set, so switching mock seeds reruns stages.
    backend_tag: str = "http"
    text_cache: Optional[EmbeddingCache] = None

    def __post_init__(self):
        if self.text_cache is None:
            self.text_cache = EmbeddingCache(self.backends.text_embedder)

    def visit(self, entry: VisitManifest) -> VisitPaths:
        return VisitPaths(self.out / entry.visit_id)

    def audio_path(self, entry: VisitManifest) -> Path:
        p = Path(entry.audio_ref)
        return p if p.is_absolute() else self.manifest_dir / p


def build_context(
    config: CareVoiceConfig,
    manifest_path: Path,
    mode: InputMode = InputMode.soap_vital,
    mock_seed: Optional[int] = None,
    force: bool = False,
) -> RunContext:
    """Backends, templates and paths for one invocation. A mock seed swaps
    every service for its deterministic mock."""
    if mock_seed is not None:
        backends = mock_suite(
            mock_seed,
            load_script(config.mock.script),
            embedding_dim=config.mock.embedding_dim,
        )
        tag = f"mock:{mock_seed}"
    else:
        backends = http_suite(config.backends)
        tag = "http"
    return RunContext(
        config=config,
        backends=backends,
        templates=load_templates(config.llm.prompts_dir),
        out=Path(config.out_dir),
        manifest_dir=Path(manifest_path).parent,
        mode=mode,
        force=force,
        backend_tag=tag,
    )


# Results ----------------------------------------------------------------------


@dataclass
class VisitFailure:
    visit_id: str
    stage: str
    error: str
    message: str
    fields: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def of(cls, visit_id: str, stage: str, e: BaseException) -> "VisitFailure":
        fields = {
            k: v
            for k, v in vars(e).items()
            if isinstance(v, (str, int, float, bool)) or v is None
        }
        return cls(visit_id, stage, type(e).__name__, str(e), fields)

    def to_json(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class StageReport:
    stage: str
    ran: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failed: list[VisitFailure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed

    def merge(self, other: "StageReport") -> None:
        self.ran.extend(other.ran)
        self.skipped.extend(other.skipped)
        self.failed.extend(other.failed)


# Per-visit stages -------------------------------------------------------------


def _params(ctx: RunContext, *parts: Any) -> list[Any]:
    return [ctx.backend_tag, *parts]


def _once(
    ctx: RunContext,
    visit: VisitPaths,
    stage: str,
    inputs: Sequence[Path],
    params: Any,
    outputs: Sequence[Path],
    body: Callable[[], None],
) -> bool:
    """Runs `body` unless the stage is fresh. Returns whether it ran."""
    require(stage, inputs)
    if not ctx.force and is_fresh(visit, stage, inputs, params, outputs):
        logger.info("inputs unchanged; skipping")
        return False
    body()
    record_stage(visit, stage, inputs, params, outputs)
    return True


def _stitch(ctx: RunContext, entry: VisitManifest) -> bool:
    v = ctx.visit(entry)
    audio_path = ctx.audio_path(entry)
    cfg = ctx.config.pipeline

    def body() -> None:
        result = stitch(read_wav(audio_path), ctx.backends, cfg, jobs=1)
        write_json(v.diarization, result.to_json())

    return _once(
        ctx,
        v,
        "stitch",
        [audio_path],
        _params(ctx, dataclasses.asdict(cfg)),
        [v.diarization],
        body,
    )


def _align(ctx: RunContext, entry: VisitManifest) -> bool:
    v = ctx.visit(entry)
    audio_path = ctx.audio_path(entry)
    cfg = ctx.config.pipeline

    def body() -> None:
        segments = [
            SpeakerSegment.model_validate(s)
            for s in read_json(v.diarization)["segments"]
        ]
        words = assign_word_speakers(
            transcribe(read_wav(audio_path), ctx.backends.asr), segments
        )
        candidates = group_sentences(
            words, cfg.sentence_terminators, cfg.closing_marks
        )
        write_jsonl(v.words, words)
        write_jsonl(v.sentences, filter_sentences(candidates))
        transcript = speaker_transcript(words)
        write_text(v.transcript, transcript + "\n" if transcript else "")

    return _once(
        ctx,
        v,
        "align",
        [audio_path, v.diarization],
        _params(ctx, cfg.sentence_terminators, cfg.closing_marks),
        [v.words, v.sentences, v.transcript],
        body,
    )


def _reverify(ctx: RunContext, entry: VisitManifest) -> bool:
    v = ctx.visit(entry)
    audio_path = ctx.audio_path(entry)
    cfg = ctx.config.pipeline

    def body() -> None:
        sentences = read_jsonl(v.sentences, Sentence)
        result = reverify(sentences, read_wav(audio_path), ctx.backends, cfg)
        write_jsonl(v.verified, result.verified)
        clip_files = {}
        for spk, clip in sorted(result.clips.items()):
            write_wav_if_changed(v.clip(spk), clip)
            clip_files[str(spk)] = {
                "path": v.clip(spk).relative_to(v.root).as_posix(),
                "duration_s": clip.duration_s,
            }
        clear_clips(v, [c["path"] for c in clip_files.values()])
        write_json(
            v.reverify,
            {
                "clips": clip_files,
                "similarities": result.similarities,
                "warnings": result.warnings,
            },
        )

    return _once(
        ctx,
        v,
        "reverify",
        [audio_path, v.sentences],
        _params(ctx, dataclasses.asdict(cfg)),
        [v.verified, v.reverify],
        body,
    )


def _roles(ctx: RunContext, entry: VisitManifest) -> bool:
    v = ctx.visit(entry)

    def body() -> None:
        roles = assign_roles(
            v.transcript.read_text(encoding="utf-8"),
            ctx.backends.chat_llm,
            ctx.templates,
            clarifications=ctx.config.llm.role_clarifications,
        )
        write_json(v.roles, {"roles": roles})

    return _once(
        ctx,
        v,
        "roles",
        [v.transcript],
        _params(ctx, ctx.backends.chat_llm.model_id, ctx.templates["roles"]),
        [v.roles],
        body,
    )


def _soap(ctx: RunContext, entry: VisitManifest) -> bool:
    v = ctx.visit(entry)

    def body() -> None:
        warnings: list[str] = []
        note = generate_soap(
            v.transcript.read_text(encoding="utf-8"),
            ctx.backends.chat_llm,
            ctx.templates,
            attempts=ctx.config.llm.retries,
            warnings=warnings,
        )
        write_json(v.soap, {"note": note, "warnings": warnings})

    return _once(
        ctx,
        v,
        "soap",
        [v.transcript],
        _params(ctx, ctx.backends.chat_llm.model_id, ctx.templates["soap"]),
        [v.soap],
        body,
    )


def read_scores(path: Path) -> dict[str, IllnessAssessment]:
    """Assessments in a score file, keyed by model id."""
    if not path.is_file():
        return {}
    return {
        model: IllnessAssessment.model_validate(a)
        for model, a in read_json(path).items()
    }


def _score(ctx: RunContext, entry: VisitManifest) -> bool:
    v = ctx.visit(entry)
    mode = ctx.mode
    llm = ctx.backends.chat_llm
    path = v.score(mode)
    inputs = [v.soap] if mode.needs_soap else []
    vitals = render_vitals(entry.vitals) if entry.vitals else None
    template = ctx.templates[f"illness_{mode.value}"]

    def body() -> None:
        soap = None
        if mode.needs_soap:
            soap = SoapNote.model_validate(read_json(v.soap)["note"])
        assessment = score_illness(
            soap,
            vitals,
            mode,
            llm,
            ctx.templates,
            attempts=ctx.config.llm.retries,
        )
        scores = read_scores(path)
        scores[llm.model_id] = assessment
        write_json(path, dict(sorted(scores.items())))

    ran = _once(
        ctx,
        v,
        f"score.{mode.value}.{model_slug(llm.model_id)}",
        inputs,
        _params(ctx, vitals, template),
        [path],
        body,
    )
    if not ran and llm.model_id not in read_scores(path):
        body()
        ran = True
    return ran


def _roles_of(v: VisitPaths) -> dict[int, SpeakerRole]:
    return {
        int(k): SpeakerRole(r) for k, r in read_json(v.roles)["roles"].items()
    }


def _describe(ctx: RunContext, entry: VisitManifest) -> bool:
    v = ctx.visit(entry)
    alm = ctx.backends.audio_lm
    cfg = ctx.config.pipeline

    def body() -> None:
        roles = _roles_of(v)
        reports, warnings = [], []
        for spk, info in sorted(
            read_json(v.reverify)["clips"].items(), key=lambda kv: int(kv[0])
        ):
            speaker = int(spk)
            role = roles.get(speaker, SpeakerRole.unknown)
            clip = read_wav(v.root / info["path"])
            try:
                descriptions = describe_voice(
                    clip,
                    alm,
                    ctx.templates,
                    attempts=ctx.config.llm.retries,
                    warnings=warnings,
                )
                profile = None
                if role is SpeakerRole.patient:
                    profile = predict_gender_age(
                        clip, alm, ctx.templates, warnings=warnings
                    )
            except (UnparseableReply, ClipDurationError) as e:
                logger.warning("speaker %d: %s", speaker, e)
                warnings.append(f"speaker {speaker}: {e}")
                continue
            reports.append(
                VoiceReport(
                    speaker=speaker,
                    role=role,
                    clip_duration_s=clip.duration_s,
                    low_confidence=clip.duration_s < cfg.low_confidence_s,
                    descriptions=tuple(descriptions),
                    profile=profile,
                )
            )
        write_json(v.descriptions, {"reports": reports, "warnings": warnings})

    clips = [v.root / c["path"] for c in _clips_listed(v.reverify)]
    return _once(
        ctx,
        v,
        "describe",
        [v.reverify, v.roles, *clips],
        _params(
            ctx,
            alm.model_id,
            cfg.low_confidence_s,
            ctx.templates["voice"],
            ctx.templates["profile"],
        ),
        [v.descriptions],
        body,
    )


def _clips_listed(reverify_path: Path) -> list[dict[str, Any]]:
    if not reverify_path.is_file():
        return []
    return list(read_json(reverify_path)["clips"].values())


def read_reports(path: Path) -> list[VoiceReport]:
    return [VoiceReport.model_validate(r) for r in read_json(path)["reports"]]


def _quantify(ctx: RunContext, entry: VisitManifest) -> bool:
    v = ctx.visit(entry)
    aggregation = ctx.config.analysis.aggregation
    embedder = ctx.backends.text_embedder
    assert ctx.text_cache is not None

    def body() -> None:
        speakers, warnings = [], []
        for r in read_reports(v.descriptions):
            features = quantify_descriptions(
                list(r.descriptions),
                ctx.text_cache,  # type: ignore[arg-type]
                builtin_scales(),
                aggregation,  # type: ignore[arg-type]
                warnings=warnings,
            )
            speakers.append(
                {"speaker": r.speaker, "role": r.role, "features": features}
            )
        write_json(v.quantified, {"speakers": speakers, "warnings": warnings})

    return _once(
        ctx,
        v,
        "quantify",
        [v.descriptions],
        _params(ctx, embedder.model_id, aggregation, builtin_scales()),
        [v.quantified],
        body,
    )


_STAGE_FNS: dict[str, Callable[[RunContext, VisitManifest], bool]] = {
    "stitch": _stitch,
    "align": _align,
    "reverify": _reverify,
    "roles": _roles,
    "soap": _soap,
    "score": _score,
    "describe": _describe,
    "quantify": _quantify,
}


def run_visit_stage(
    ctx: RunContext, stage: str, entry: VisitManifest
) -> tuple[bool, Optional[VisitFailure]]:
    """Runs one stage for one visit. Returns whether it ran (False when
    skipped or failed) and the failure, if any."""
    with visit_context(entry.visit_id, stage):
        try:
            ran = _STAGE_FNS[stage](ctx, entry)
        except CareVoiceError as e:
            logger.error("%s failed: %s", stage, e)
            return False, VisitFailure.of(entry.visit_id, stage, e)
        except Exception as e:
            logger.exception("%s failed unexpectedly", stage)
            return False, VisitFailure.of(entry.visit_id, stage, e)
        if ran:
            logger.info("%s done", stage)
    return ran, None


def run_stage(
    ctx: RunContext, stage: str, visits: Sequence[VisitManifest]
) -> StageReport:
    """One per-visit stage over every visit, `config.jobs` at a time."""
    assert stage in _STAGE_FNS, f"not a per-visit stage: {stage}"
    report = StageReport(stage)
    with ThreadPoolExecutor(max_workers=ctx.config.jobs) as pool:
        results = list(
            pool.map(lambda e: run_visit_stage(ctx, stage, e), visits)
        )
    for entry, (ran, failure) in zip(visits, results):
        if failure is not None:
            report.failed.append(failure)
        elif ran:
            report.ran.append(entry.visit_id)
        else:
            report.skipped.append(entry.visit_id)
    return report


# Cohort analysis --------------------------------------------------------------


def _visit_scores(
    ctx: RunContext, visits: Sequence[VisitManifest]
) -> dict[tuple[str, str], dict[str, int]]:
    """Every (model, mode) pair on disk, with its score per visit."""
    grid: dict[tuple[str, str], dict[str, int]] = {}
    for entry in visits:
        v = ctx.visit(entry)
        for mode in InputMode:
            for model, a in read_scores(v.score(mode)).items():
                grid.setdefault((model, mode.value), {})[entry.visit_id] = (
                    a.score
                )
    return dict(sorted(grid.items()))


def _bucket_scores(
    ctx: RunContext, grid: dict[tuple[str, str], dict[str, int]]
) -> dict[str, int]:
    """Per-visit scores that group the acoustic analyses: the configured
    mode, preferring the configured chat model."""
    mode = ctx.config.analysis.score_mode
    models = sorted(m for m, md in grid if md == mode)
    if not models:
        return {}
    preferred = ctx.backends.chat_llm.model_id
    model = preferred if preferred in models else models[0]
    return grid[(model, mode)]


def analyze(
    ctx: RunContext, visits: Sequence[VisitManifest]
) -> CohortAnalysis:
    """Reduces every visit's artifacts into the cohort tables."""
    cfg = ctx.config.analysis
    warnings: list[str] = []
    tables: dict[str, list[dict[str, Any]]] = {
        name: []
        for name in (
            "summary", "wd", "kde", "tfidf", "freq", "violin", "gender", "age"
        )
    }
    outcomes = {e.patient_id: e.patient_outcome for e in visits}

    grid = _visit_scores(ctx, visits)
    for (model, mode), per_visit in grid.items():
        by_patient: dict[str, list[int]] = {}
        for entry in visits:
            if entry.visit_id in per_visit:
                by_patient.setdefault(entry.patient_id, []).append(
                    per_visit[entry.visit_id]
                )
        none, event = split_groups(patient_mean_scores(by_patient), outcomes)
        row = compare_groups(model, mode, none, event)
        tables["wd"].append(
            {
                "model": model,
                "mode": mode,
                "WD": row.wd,
                "no_ed_hosp_mean": row.no_event_mean,
                "ed_hosp_mean": row.event_mean,
                "no_ed_hosp_n": row.no_event_n,
                "ed_hosp_n": row.event_n,
            }
        )
        for d in (none, event):
            if not d.samples:
                warnings.append(f"{model}/{mode}: group {d.label} is empty")
                continue
            stats = summary_stats(d)
            tables["summary"].append(
                {"model": model, "mode": mode, "group": d.label}
                | stats.model_dump()
            )
            for x, density in kde_curve(
                d, cfg.kde_lo, cfg.kde_hi, cfg.kde_points
            ):
                tables["kde"].append(
                    {
                        "model": model,
                        "mode": mode,
                        "group": d.label,
                        "x": x,
                        "density": density,
                    }
                )

    bucket = _bucket_scores(ctx, grid)
    _phrase_tables(ctx, visits, bucket, tables, warnings)
    accuracy = _profile_tables(ctx, visits, tables)
    return CohortAnalysis(
        tables={k: tuple(rows) for k, rows in tables.items()},
        gender_accuracy=accuracy,
        warnings=tuple(warnings),
    )


def _phrase_tables(
    ctx: RunContext,
    visits: Sequence[VisitManifest],
    bucket: dict[str, int],
    tables: dict[str, list[dict[str, Any]]],
    warnings: list[str],
) -> None:
    by_score: dict[AcousticFeature, dict[str, list[str]]] = {}
    by_role: dict[AcousticFeature, dict[str, list[str]]] = {}
    levels: dict[AcousticFeature, list[tuple[int, float]]] = {}
    for entry in visits:
        v = ctx.visit(entry)
        if not v.descriptions.is_file():
            continue
        score = bucket.get(entry.visit_id)
        for r in read_reports(v.descriptions):
            for d in r.descriptions:
                by_role.setdefault(d.feature, {}).setdefault(
                    r.role.value, []
                ).extend(d.phrases)
                if r.role is SpeakerRole.patient and score is not None:
                    by_score.setdefault(d.feature, {}).setdefault(
                        str(score), []
                    ).extend(d.phrases)
        if v.quantified.is_file() and bucket.get(entry.visit_id) is not None:
            for spk in read_json(v.quantified)["speakers"]:
                if spk["role"] != SpeakerRole.patient.value:
                    continue
                for f in spk["features"]:
                    q = QuantifiedFeature.model_validate(f)
                    levels.setdefault(q.feature, []).append(
                        (bucket[entry.visit_id], q.visit_level)
                    )

    for feature in AcousticFeature:
        groups = {
            g: tuple(p)
            for g, p in by_score.get(feature, {}).items()
            if p
        }
        if groups:
            top = tfidf_top_phrases(
                PhraseCorpus(groups=groups), ctx.config.analysis.tfidf_k
            )
            for g, ranked in top.items():
                for rank, (phrase, score) in enumerate(ranked, 1):
                    tables["tfidf"].append(
                        {
                            "feature": feature.value,
                            "group": g,
                            "rank": rank,
                            "phrase": phrase,
                            "score": score,
                        }
                    )
        else:
            warnings.append(f"no patient phrases for {feature.value}")
        roles = by_role.get(feature, {})
        if roles:
            corpus = PhraseCorpus(
                groups={g: tuple(p) for g, p in roles.items()}
            )
            for g in corpus.groups:
                for phrase, count in phrase_frequencies(corpus, g).items():
                    tables["freq"].append(
                        {
                            "feature": feature.value,
                            "group": g,
                            "phrase": phrase,
                            "count": count,
                        }
                    )
        for score, dist in level_by_score(levels.get(feature, [])).items():
            for level in dist.samples:
                tables["violin"].append(
                    {"feature": feature.value, "score": score, "level": level}
                )


def _profile_tables(
    ctx: RunContext,
    visits: Sequence[VisitManifest],
    tables: dict[str, list[dict[str, Any]]],
) -> Optional[float]:
    genders, ages = [], []
    for entry in visits:
        v = ctx.visit(entry)
        if not v.descriptions.is_file():
            continue
        for r in read_reports(v.descriptions):
            if r.role is not SpeakerRole.patient or r.profile is None:
                continue
            if entry.patient_gender is not None:
                genders.append((entry.patient_gender, r.profile.gender))
            if entry.patient_age is not None:
                ages.append((entry.patient_age, r.profile.age_category))
    accuracy, confusion = gender_confusion(genders)
    for (truth, pred), count in confusion.items():
        if count:
            tables["gender"].append(
                {"truth": truth.value, "predicted": pred.value, "count": count}
            )
    for category, dist in age_by_category(ages).items():
        tables["age"].append(
            {"category": category.value} | summary_stats(dist).model_dump()
        )
    return accuracy


def run_analysis(
    ctx: RunContext, visits: Sequence[VisitManifest]
) -> StageReport:
    report = StageReport("analyze")
    with visit_context(None, "analyze"):
        try:
            analysis = analyze(ctx, visits)
        except CareVoiceError as e:
            logger.error("analysis failed: %s", e)
            report.failed.append(VisitFailure.of("*", "analyze", e))
            return report
        write_json(analysis_path(ctx.out), analysis)
        for w in analysis.warnings:
            logger.warning(w)
    return report


def report(out: Path) -> StageReport:
    """Writes the CSV exports from the stored analysis."""
    result = StageReport("report")
    with visit_context(None, "report"):
        try:
            write_report(load_analysis(out), out)
        except CareVoiceError as e:
            logger.error("report failed: %s", e)
            result.failed.append(VisitFailure.of("*", "report", e))
    return result


# Earlier stages whose artifacts each stage reads.
_PREREQUISITES: dict[str, tuple[str, ...]] = {
    "stitch": (),
    "align": ("stitch",),
    "reverify": ("align",),
    "roles": ("align",),
    "soap": ("align",),
    "score": ("soap",),
    "describe": ("reverify", "roles"),
    "quantify": ("describe",),
}


def prerequisites(stage: str, mode: InputMode) -> tuple[str, ...]:
    if stage == "score" and not mode.needs_soap:
        return ()
    return _PREREQUISITES[stage]


def run_all(
    ctx: RunContext, visits: Sequence[VisitManifest]
) -> StageReport:
    """Every per-visit stage in order, then the analysis and the report.
    A visit that fails a stage is left out of the stages that read that
    stage's artifacts, directly or through another stage."""
    total = StageReport("run-all")
    blocked: dict[str, set[str]] = {}
    for stage in VISIT_STAGES:
        skip: set[str] = set().union(
            *(blocked[p] for p in prerequisites(stage, ctx.mode))
        )
        result = run_stage(
            ctx, stage, [e for e in visits if e.visit_id not in skip]
        )
        total.failed.extend(result.failed)
        blocked[stage] = skip | {f.visit_id for f in result.failed}
    incomplete: set[str] = set().union(*blocked.values())
    total.ran.extend(e.visit_id for e in visits if e.visit_id not in incomplete)
    total.merge(run_analysis(ctx, visits))
    total.merge(report(ctx.out))
    return total
