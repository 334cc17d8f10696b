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
Line-delimited JSON logging with visit correlation fields.
"""
from __future__ import annotations

import contextvars
import json
import logging
import sys

from concurrent.futures import Executor
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import Callable, Iterable, Iterator, Optional, TextIO, TypeVar

__all__ = [
    "JsonLinesFormatter",
    "setup_logging",
    "visit_context",
    "map_in_context",
]

T = TypeVar("T")
R = TypeVar("R")

_visit: contextvars.ContextVar[Optional[str]] = contextvars.ContextVar(
    "visit_id", default=None
)
_stage: contextvars.ContextVar[Optional[str]] = contextvars.ContextVar(
    "stage", default=None
)


@contextmanager
def visit_context(visit_id: Optional[str], stage: str) -> Iterator[None]:
    """Tags every record logged inside the block with the visit and stage."""
    v, s = _visit.set(visit_id), _stage.set(stage)
    try:
        yield
    finally:
        _visit.reset(v)
        _stage.reset(s)


def map_in_context(
    pool: Executor, fn: Callable[[T], R], items: Iterable[T]
) -> Iterator[R]:
    """`pool.map` with each call run in its own copy of the caller's
    context, so records logged by workers keep the visit and stage."""
    items = list(items)
    contexts = [contextvars.copy_context() for _ in items]
    return pool.map(lambda c, x: c.run(fn, x), contexts, items)


class _ContextFilter(logging.Filter):
    def filter(self, record: logging.LogRecord) -> bool:
        record.visit_id = _visit.get()
        record.stage = _stage.get()
        return True


class JsonLinesFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "ts": datetime.fromtimestamp(record.created, timezone.utc)
            .isoformat(timespec="milliseconds"),
            "level": record.levelname.lower(),
            "logger": record.name,
            "visit_id": getattr(record, "visit_id", None),
            "stage": getattr(record, "stage", None),
            "msg": record.getMessage(),
        }
        if record.exc_info:
            entry["exc"] = self.formatException(record.exc_info)
        return json.dumps(entry, ensure_ascii=False)


def setup_logging(
    level: str = "info", stream: Optional[TextIO] = None
) -> logging.Handler:
    """Installs a single JSON-lines handler on the package logger."""
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JsonLinesFormatter())
    handler.addFilter(_ContextFilter())
    root = logging.getLogger("carevoice")
    for h in list(root.handlers):
        root.removeHandler(h)
    root.addHandler(handler)
    root.setLevel(level.upper())
    root.propagate = False
    # Client libraries stay at warning; their debug records carry bodies.
    for name in ("openai", "httpx", "urllib3", "backoff"):
        logging.getLogger(name).setLevel(logging.WARNING)
    return handler
