"""HTTP endpoints for the humans in the loop.

The service exposes the annotation queue, label writes, the optional
pseudo-label review queue, image bytes, and live run status. It holds no
state of its own: every read comes from the engine's sample table and
label store, and every mutation goes through the store's single writer,
which journals the write within the same request.

``serve`` runs the engine in a background thread; the run blocks at the
annotation gate until the endpoints have collected labels for every key
sample, then continues to completion while the service keeps answering
status queries.
"""

from __future__ import annotations

import mimetypes
import threading
from pathlib import Path
from typing import Optional

from fastapi import Body, FastAPI, HTTPException, Response

from .data_model import (
    KEY_PENDING,
    LABELED_HUMAN,
    LABELED_SELF,
    UNLABELED,
    BoxValidationError,
    LabelSet,
    RevisionConflict,
    UnknownSample,
)
from .orchestrator import Engine

QUEUE_KINDS = ("key_annotation", "pseudo_review")
REVIEW_ACTIONS = ("approve", "reject", "edit")


def _queue_items(engine: Engine, kind: str) -> list[dict]:
    if kind == "key_annotation":
        wanted = KEY_PENDING
    else:
        wanted = LABELED_SELF
    items = []
    for sid, sample in engine.samples.items():
        if sample.status != wanted:
            continue
        current = engine.store.read(sid)
        boxes = [] if current is None else [b.to_json() for b in current.boxes]
        items.append(
            {
                "sample_id": sid,
                "kind": kind,
                "width": sample.width,
                "height": sample.height,
                "boxes": boxes,
                "revision": engine.store.current_revision(sid),
                "cluster_id": sample.cluster_id,
            }
        )
    items.sort(key=lambda it: (it["cluster_id"] or 0, it["sample_id"]))
    return items


def build_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="gram-sld annotation service")

    @app.get("/api/queue")
    def queue(kind: str = "key_annotation") -> list[dict]:
        if kind not in QUEUE_KINDS:
            raise HTTPException(
                status_code=400,
                detail=f"unknown queue kind {kind!r}; expected one of {QUEUE_KINDS}",
            )
        return _queue_items(engine, kind)

    @app.get("/api/labels/{sample_id}")
    def get_labels(sample_id: str) -> dict:
        if sample_id not in engine.samples:
            raise HTTPException(status_code=404, detail=f"unknown sample {sample_id!r}")
        current = engine.store.read(sample_id)
        if current is None:
            # Never written: revision 0 is what a first PUT must carry.
            return {
                "sample_id": sample_id,
                "revision": 0,
                "annotator": "",
                "boxes": [],
            }
        return current.to_json()

    @app.put("/api/labels/{sample_id}")
    def put_labels(sample_id: str, body: dict = Body(...)) -> dict:
        sample = engine.samples.get(sample_id)
        if sample is None:
            raise HTTPException(status_code=404, detail=f"unknown sample {sample_id!r}")
        if sample.status not in (KEY_PENDING, LABELED_HUMAN):
            raise HTTPException(
                status_code=409,
                detail=f"sample {sample_id} is {sample.status}, not awaiting annotation",
            )
        body_sid = body.get("sample_id")
        if body_sid not in (None, sample_id):
            raise HTTPException(
                status_code=422,
                detail=f"body sample_id {body_sid!r} does not match path",
            )
        try:
            labels = LabelSet.from_json({**body, "sample_id": sample_id})
        except BoxValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=f"malformed label set: {exc}") from exc
        if not labels.annotator:
            labels = LabelSet(
                sample_id=sample_id,
                boxes=labels.boxes,
                revision=labels.revision,
                annotator="service",
            )
        try:
            revision = engine.store.write(labels)
        except RevisionConflict as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except BoxValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except UnknownSample as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        if sample.status == KEY_PENDING:
            sample.transition(LABELED_HUMAN)
        engine.notify_gate()
        return {"sample_id": sample_id, "revision": revision}

    @app.post("/api/review/{sample_id}")
    def review(sample_id: str, body: dict = Body(...)) -> dict:
        sample = engine.samples.get(sample_id)
        if sample is None:
            raise HTTPException(status_code=404, detail=f"unknown sample {sample_id!r}")
        if not engine.config.review_enabled:
            raise HTTPException(status_code=409, detail="review mode is disabled")
        action = body.get("action")
        if action not in REVIEW_ACTIONS:
            raise HTTPException(
                status_code=422,
                detail=f"unknown action {action!r}; expected one of {REVIEW_ACTIONS}",
            )
        if sample.status != LABELED_SELF:
            raise HTTPException(
                status_code=409,
                detail=f"sample {sample_id} is {sample.status}, not reviewable",
            )
        if action == "approve":
            engine.journal.log("review", sample_id=sample_id, action="approve")
        elif action == "reject":
            sample.transition(UNLABELED, review=True)
            engine.store.delete(sample_id)
            engine.journal.log("review", sample_id=sample_id, action="reject")
        else:
            raw_boxes = body.get("boxes")
            if not isinstance(raw_boxes, list):
                raise HTTPException(status_code=422, detail="edit requires a boxes list")
            try:
                boxes = tuple(
                    _as_human_box(b, i) for i, b in enumerate(raw_boxes)
                )
            except BoxValidationError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            try:
                engine.store.write(
                    LabelSet(
                        sample_id=sample_id,
                        boxes=boxes,
                        revision=engine.store.current_revision(sample_id),
                        annotator="review",
                    )
                )
            except BoxValidationError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            sample.transition(LABELED_HUMAN, review=True)
            engine.journal.log(
                "review", sample_id=sample_id, action="edit", n_boxes=len(boxes)
            )
        return {"sample_id": sample_id, "status": sample.status}

    @app.get("/api/image/{sample_id}")
    def image(sample_id: str) -> Response:
        sample = engine.samples.get(sample_id)
        if sample is None:
            raise HTTPException(status_code=404, detail=f"unknown sample {sample_id!r}")
        path = Path(sample.image_path)
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"image file missing for {sample_id}")
        media_type = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        return Response(content=path.read_bytes(), media_type=media_type)

    @app.get("/api/status")
    def status() -> dict:
        return engine.status()

    return app


def _as_human_box(obj: dict, index: int):
    from .data_model import BoundingBox

    try:
        box = BoundingBox.from_json(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise BoxValidationError(f"box {index}: {exc}") from exc
    if box.source != "human":
        box = BoundingBox(
            x_min=box.x_min,
            y_min=box.y_min,
            x_max=box.x_max,
            y_max=box.y_max,
            class_name=box.class_name,
            confidence=box.confidence,
            source="human",
        )
    return box


class ServiceRun:
    """An engine run executing on a background thread behind the app."""

    def __init__(self, engine: Engine):
        self.engine = engine
        self.app = build_app(engine)
        self.result = None
        self.error: Optional[BaseException] = None
        self._thread = threading.Thread(target=self._run, daemon=True)

    def _run(self) -> None:
        try:
            self.result = self.engine.run()
        except BaseException as exc:  # surfaced via self.error for the caller
            self.error = exc

    def start(self) -> "ServiceRun":
        self._thread.start()
        return self

    def join(self, timeout: Optional[float] = None) -> None:
        self._thread.join(timeout)

    @property
    def finished(self) -> bool:
        return not self._thread.is_alive()


def serve(config, port: int = 8000, host: str = "127.0.0.1") -> None:
    """Run the annotation service and the engine together until the run ends."""
    import uvicorn

    engine = Engine(config)
    runner = ServiceRun(engine).start()
    try:
        uvicorn.run(runner.app, host=host, port=port, log_level="warning")
    finally:
        engine.journal.close()
