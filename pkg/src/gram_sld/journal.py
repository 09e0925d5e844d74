"""Append-only run journal with replay-based resume.

Every pipeline step appends exactly one JSON line carrying everything
needed to restore its outcome; side effects inside a step (label writes)
append their own unnumbered log lines first. Events carry no timestamps
and are serialized with sorted keys, so a run is reproducible down to
the journal bytes.

Resume works by replay: reopening an existing journal queues its events,
and each step first tries to consume its recorded event instead of
executing. An interrupted step leaves unnumbered log lines with no step
line after them; those are dropped at open (the step will re-execute and
re-append them), which keeps a resumed journal byte-identical to an
uninterrupted one.
"""

from __future__ import annotations

import json
import threading
from collections import deque
from pathlib import Path
from typing import Callable, Iterator, Optional


class JournalError(Exception):
    pass


def _encode(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True)


def read_events(path: str | Path) -> list[dict]:
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise JournalError(f"{path}:{lineno}: corrupt journal line") from exc
    return events


class Journal:
    """One run's event log; open an existing file to resume it."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._step = 0
        pending: list[dict] = []
        if self.path.exists():
            events = read_events(self.path)
            # Trailing log lines with no step line after them belong to
            # an interrupted step; drop them so re-execution re-logs.
            last_complete = max(
                (i for i, e in enumerate(events) if "step" in e), default=-1
            )
            events = events[: last_complete + 1]
            self.path.write_text(
                "".join(_encode(e) + "\n" for e in events), encoding="utf-8"
            )
            pending = events
        self._pending = deque(pending)
        self._fh = open(self.path, "a", encoding="utf-8")
        # Annotation-service threads log label writes concurrently with
        # the engine thread; appends must not interleave.
        self._write_lock = threading.Lock()

    @property
    def replaying(self) -> bool:
        return bool(self._pending)

    def _append(self, obj: dict) -> None:
        with self._write_lock:
            self._fh.write(_encode(obj) + "\n")
            self._fh.flush()

    def record(self, event_type: str, make: Callable[[], dict]) -> tuple[dict, bool]:
        """Run one step, or replay its recorded outcome.

        Returns ``(event, replayed)``. During replay the heads of the
        queue are consumed: log lines are skipped (their effects are
        already on disk), and the next step line must match *event_type*
        in sequence or the journal does not belong to this run.
        """
        self._step += 1
        while self._pending:
            head = self._pending.popleft()
            if "step" not in head:
                continue
            if head["event"] != event_type or head["step"] != self._step:
                raise JournalError(
                    f"journal mismatch at step {self._step}: recorded "
                    f"{head['event']!r}/{head['step']}, expected {event_type!r}"
                )
            return head, True
        payload = make()
        event = {"event": event_type, "step": self._step, **payload}
        self._append(event)
        return event, False

    def log(self, event_type: str, **fields) -> None:
        """Append a side-effect log line (not a step; never replayed)."""
        if self._pending:
            raise JournalError(
                f"log {event_type!r} emitted while journal is still replaying"
            )
        self._append({"event": event_type, **fields})

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "Journal":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
