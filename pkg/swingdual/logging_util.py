"""JSON-lines event logging for the pricing pipeline.

Every record is one line on stderr: ``ts``, ``level``, ``event`` and the
caller's fields. Regression, simulation and table workers log from several
threads at once, so each line is written under a lock.
"""
from __future__ import annotations
import json, os, sys, threading, time
from contextlib import contextmanager
from typing import Any, Iterator

LEVELS = {"DEBUG": 10, "INFO": 20, "WARN": 30, "ERROR": 40}
_write_lock = threading.Lock()


def _enabled(level: str) -> bool:
    # LOG_LEVEL is looked up on every call; tests flip it with monkeypatch
    wanted = LEVELS.get(os.environ.get("LOG_LEVEL", "INFO").upper())
    return wanted is None or LEVELS.get(level, LEVELS["ERROR"]) >= wanted


def _jsonable(value: Any) -> Any:
    """numpy arrays become lists and numpy scalars plain numbers; anything else is str()'d."""
    for attr in ("tolist", "item"):
        convert = getattr(value, attr, None)
        if convert is not None:
            return convert()
    return str(value)


def log(level: str, event: str, **fields: Any) -> None:
    level = level.upper()
    if not _enabled(level):
        return
    stamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    text = json.dumps({"ts": stamp, "level": level, "event": event, **fields},
                      separators=(",", ":"), default=_jsonable)
    with _write_lock:
        print(text, file=sys.stderr, flush=True)


def debug(event: str, **fields: Any) -> None:
    log("DEBUG", event, **fields)


def info(event: str, **fields: Any) -> None:
    log("INFO", event, **fields)


def warn(event: str, **fields: Any) -> None:
    log("WARN", event, **fields)


def error(event: str, **fields: Any) -> None:
    log("ERROR", event, **fields)


@contextmanager
def timed(event: str, level: str = "INFO", **fields: Any) -> Iterator[dict]:
    """Log `event` with the elapsed wall time once the block finishes.

    The yielded dict can be filled inside the block; its keys are added to
    the record.
    """
    extra: dict = {}
    start = time.perf_counter()
    try:
        yield extra
    finally:
        log(level, event, seconds=round(time.perf_counter() - start, 6), **fields, **extra)
