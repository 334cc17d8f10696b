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
Command-line entry point.

    carevoice run-all --manifest visits.jsonl --config carevoice.yaml
    carevoice score --manifest visits.jsonl --mode soap --mock 42

Exit status: 0 when every visit succeeded, 1 when some failed, 2 for
configuration or manifest errors. Failures are printed to stdout as one JSON
object per line; logs go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from pathlib import Path
from typing import Any, Optional, Sequence
from pydantic import ValidationError

from carevoice.config import CareVoiceConfig, load_config
from carevoice.core import (
    InputMode,
    VisitManifest,
    read_manifest,
    validate_manifest,
)
from carevoice.errors import CareVoiceError, ConfigError, ManifestError
from carevoice.logs import setup_logging
from carevoice.pipeline import (
    VISIT_STAGES,
    StageReport,
    VisitFailure,
    build_context,
    report,
    run_all,
    run_analysis,
    run_stage,
)

__all__ = ["EXIT_OK", "EXIT_PARTIAL", "EXIT_CONFIG", "build_parser", "main"]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

STAGES = ("validate", *VISIT_STAGES, "analyze", "run-all", "report")
MODE_FLAGS = ("vital", "soap", "soap+vital")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config file")
    common.add_argument("--manifest", type=Path, help="visit manifest (JSONL)")
    common.add_argument(
        "--mode",
        choices=MODE_FLAGS,
        default="soap+vital",
        help="illness-score input mode",
    )
    common.add_argument("--jobs", type=int, help="visits processed at once")
    common.add_argument(
        "--mock",
        type=int,
        metavar="SEED",
        help="use the deterministic mock backends",
    )
    common.add_argument("--visit", help="only process this visit id")
    common.add_argument(
        "--force", action="store_true", help="recompute fresh stages too"
    )
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="config override, e.g. pipeline.gap_s=0.25 (repeatable)",
    )
    common.add_argument("--out", type=Path, help="run directory")
    common.add_argument(
        "--log-level",
        default="info",
        choices=("debug", "info", "warning", "error"),
    )

    parser = argparse.ArgumentParser(
        prog="carevoice",
        description="Speech pipeline and cohort analysis for clinical visits.",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common])
    return parser


def _emit(obj: dict[str, Any]) -> None:
    print(json.dumps(obj, sort_keys=True), flush=True)


def _config(args: argparse.Namespace) -> CareVoiceConfig:
    overrides = list(args.overrides)
    if args.jobs is not None:
        overrides.append(f"jobs={args.jobs}")
    if args.out is not None:
        overrides.append(f"out_dir={args.out}")
    return load_config(args.config, overrides)


def _visits(
    args: argparse.Namespace,
) -> tuple[list[VisitManifest], list[ManifestError]]:
    if args.manifest is None:
        raise ConfigError("--manifest is required for this stage")
    try:
        entries = read_manifest(args.manifest)
    except (OSError, ValueError, ValidationError) as e:
        raise ConfigError(f"cannot read manifest {args.manifest}: {e}") from e
    accepted, errors = validate_manifest(entries)
    if args.visit is not None:
        accepted = [e for e in accepted if e.visit_id == args.visit]
        errors = [e for e in errors if e.visit_id == args.visit]
        if not accepted and not errors:
            raise ConfigError(f"visit {args.visit!r} is not in the manifest")
    return accepted, errors


def _finish(result: StageReport, rejected: Sequence[ManifestError]) -> int:
    for e in rejected:
        _emit(VisitFailure.of(e.visit_id, "validate", e).to_json())
    for f in result.failed:
        _emit(f.to_json())
    _emit(
        {
            "stage": result.stage,
            "ran": len(result.ran),
            "skipped": len(result.skipped),
            "failed": len(result.failed) + len(rejected),
        }
    )
    return EXIT_OK if result.ok and not rejected else EXIT_PARTIAL


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        cfg = _config(args)
        if args.stage == "report":
            return _finish(report(Path(cfg.out_dir)), [])

        visits, rejected = _visits(args)
        if args.stage == "validate":
            return _validate(visits, rejected)
        if not visits:
            raise ConfigError("no manifest entry passed validation")

        ctx = build_context(
            cfg,
            args.manifest,
            mode=InputMode.from_flag(args.mode),
            mock_seed=args.mock,
            force=args.force,
        )
    except CareVoiceError as e:
        # Config, manifest and template errors all land here.
        logger.error(str(e))
        _emit({"error": type(e).__name__, "message": str(e)})
        return EXIT_CONFIG

    if args.stage == "run-all":
        result = run_all(ctx, visits)
    elif args.stage == "analyze":
        result = run_analysis(ctx, visits)
    else:
        result = run_stage(ctx, args.stage, visits)
    return _finish(result, rejected)


def _validate(
    visits: Sequence[VisitManifest], rejected: Sequence[ManifestError]
) -> int:
    for e in rejected:
        _emit(VisitFailure.of(e.visit_id, "validate", e).to_json())
    _emit(
        {
            "stage": "validate",
            "accepted": len(visits),
            "rejected": len(rejected),
        }
    )
    return EXIT_CONFIG if rejected else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
