"""Core records, the on-disk label store, and dataset manifests.

Everything downstream (clustering, scoring, the orchestrator, the HTTP
service) shares these types. Records are plain immutable-ish dataclasses;
persistence is one JSON file per sample plus whatever journal the caller
hooks in. Coordinates are continuous absolute pixels, origin top-left.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional

# Sample lifecycle states.
UNLABELED = "unlabeled"
KEY_PENDING = "key_pending_annotation"
LABELED_HUMAN = "labeled_human"
LABELED_SELF = "labeled_self"
EXCLUDED = "excluded"

STATUSES = (UNLABELED, KEY_PENDING, LABELED_HUMAN, LABELED_SELF, EXCLUDED)

# Legal transitions. Review-mode transitions (a human vetoing or editing a
# pseudo-label) are kept separate so the automated pipeline cannot take them.
_TRANSITIONS = {
    (UNLABELED, KEY_PENDING),
    (KEY_PENDING, LABELED_HUMAN),
    (UNLABELED, LABELED_SELF),
}
_REVIEW_TRANSITIONS = {
    (LABELED_SELF, UNLABELED),      # reject
    (LABELED_SELF, LABELED_HUMAN),  # edit
}

BOX_SOURCES = ("human", "self", "hidden_gt")


class DataModelError(Exception):
    """Base class for validation and store failures."""


class ManifestError(DataModelError):
    pass


class BoxValidationError(DataModelError):
    pass


class RevisionConflict(DataModelError):
    """Optimistic concurrency check failed; the store was not modified."""


class UnknownSample(DataModelError):
    pass


class IllegalTransition(DataModelError):
    pass


@dataclass
class Sample:
    """One image with its lifecycle status inside a run."""

    id: str
    image_path: str
    width: int
    height: int
    status: str = UNLABELED
    cluster_id: Optional[int] = None
    entropy: Optional[float] = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise DataModelError(f"sample {self.id}: non-positive dimensions")
        if self.status not in STATUSES:
            raise DataModelError(f"sample {self.id}: unknown status {self.status!r}")

    def transition(self, new_status: str, *, review: bool = False) -> None:
        """Move to *new_status*, enforcing the lifecycle state machine.

        Review transitions (pseudo-label reject/edit) are only legal when
        *review* is set; the automated pipeline never passes it.
        """
        edge = (self.status, new_status)
        allowed = _TRANSITIONS | (_REVIEW_TRANSITIONS if review else set())
        if edge not in allowed:
            raise IllegalTransition(
                f"sample {self.id}: illegal transition {self.status} -> {new_status}"
            )
        self.status = new_status

    def assign_cluster(self, cluster_id: int) -> None:
        if self.cluster_id is not None and self.cluster_id != cluster_id:
            raise DataModelError(
                f"sample {self.id}: cluster_id already set to {self.cluster_id}"
            )
        if cluster_id < 0:
            raise DataModelError("cluster_id must be >= 0")
        self.cluster_id = cluster_id


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with class and confidence; the unit of all labels."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    class_name: str
    confidence: float = 1.0
    source: str = "human"

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise BoxValidationError(
                f"degenerate box [{self.x_min},{self.y_min},{self.x_max},{self.y_max}]"
            )
        if not (0.0 <= self.confidence <= 1.0):
            raise BoxValidationError(f"confidence {self.confidence} outside [0,1]")
        if self.source not in BOX_SOURCES:
            raise BoxValidationError(f"unknown box source {self.source!r}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def clamped(self, width: float, height: float) -> "BoundingBox":
        """Clamp to image bounds; raises if nothing is left inside."""
        x0 = min(max(self.x_min, 0.0), float(width))
        y0 = min(max(self.y_min, 0.0), float(height))
        x1 = min(max(self.x_max, 0.0), float(width))
        y1 = min(max(self.y_max, 0.0), float(height))
        if not (x0 < x1 and y0 < y1):
            raise BoxValidationError(
                f"box [{self.x_min},{self.y_min},{self.x_max},{self.y_max}] "
                f"falls outside a {width}x{height} image"
            )
        if (x0, y0, x1, y1) == (self.x_min, self.y_min, self.x_max, self.y_max):
            return self
        return replace(self, x_min=x0, y_min=y0, x_max=x1, y_max=y1)

    def to_json(self) -> dict:
        return {
            "class": self.class_name,
            "bbox": [self.x_min, self.y_min, self.x_max, self.y_max],
            "confidence": self.confidence,
            "source": self.source,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BoundingBox":
        bbox = obj["bbox"]
        if len(bbox) != 4:
            raise BoxValidationError(f"bbox must have 4 coordinates, got {len(bbox)}")
        return cls(
            x_min=float(bbox[0]),
            y_min=float(bbox[1]),
            x_max=float(bbox[2]),
            y_max=float(bbox[3]),
            class_name=str(obj["class"]),
            confidence=float(obj.get("confidence", 1.0)),
            source=str(obj.get("source", "human")),
        )


@dataclass
class LabelSet:
    """All boxes for one sample at one revision."""

    sample_id: str
    boxes: tuple[BoundingBox, ...]
    revision: int = 0
    annotator: str = ""

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "revision": self.revision,
            "annotator": self.annotator,
            "boxes": [b.to_json() for b in self.boxes],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LabelSet":
        return cls(
            sample_id=str(obj["sample_id"]),
            boxes=tuple(BoundingBox.from_json(b) for b in obj["boxes"]),
            revision=int(obj.get("revision", 0)),
            annotator=str(obj.get("annotator", "")),
        )


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    image_path: str
    label_path: Optional[str] = None


@dataclass
class Manifest:
    """An ordered list of dataset entries with a purpose tag."""

    purpose: str
    entries: tuple[ManifestEntry, ...] = ()

    PURPOSES = ("train", "unlabeled", "test")

    def __post_init__(self):
        if self.purpose not in self.PURPOSES:
            raise ManifestError(f"unknown manifest purpose {self.purpose!r}")
        seen = set()
        for e in self.entries:
            if e.sample_id in seen:
                raise ManifestError(f"duplicate sample id {e.sample_id!r}")
            seen.add(e.sample_id)

    def ids(self) -> list[str]:
        return [e.sample_id for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def load_manifest(path: str | Path, *, check_files: bool = True) -> Manifest:
    """Parse a JSON Lines manifest.

    The first line is a header ``{"purpose": ...}``; every following line is
    ``{"id": str, "image": path, "labels": path|null}``. Relative paths are
    resolved against the manifest's directory. With *check_files* (default),
    missing image or label files are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    purpose = None
    entries: list[ManifestEntry] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if purpose is None:
                if "purpose" not in obj:
                    raise ManifestError(f"{path}:{lineno}: expected header with 'purpose'")
                purpose = obj["purpose"]
                continue
            if "id" not in obj or "image" not in obj:
                raise ManifestError(f"{path}:{lineno}: entry needs 'id' and 'image'")
            image = str(base / obj["image"]) if not os.path.isabs(obj["image"]) else obj["image"]
            labels = obj.get("labels")
            if labels is not None and not os.path.isabs(labels):
                labels = str(base / labels)
            if check_files:
                if not os.path.exists(image):
                    raise ManifestError(f"{path}:{lineno}: missing image file {image}")
                if labels is not None and not os.path.exists(labels):
                    raise ManifestError(f"{path}:{lineno}: missing label file {labels}")
            entries.append(ManifestEntry(str(obj["id"]), image, labels))
    if purpose is None:
        raise ManifestError(f"{path}: empty file, header line required")
    return Manifest(purpose=purpose, entries=tuple(entries))


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"purpose": manifest.purpose}) + "\n")
        for e in manifest.entries:
            fh.write(
                json.dumps(
                    {"id": e.sample_id, "image": e.image_path, "labels": e.label_path}
                )
                + "\n"
            )


class LabelStore:
    """Single-writer label store: one JSON file per sample, atomic replace.

    Writes go through an optimistic revision check: the incoming LabelSet
    must carry the revision the writer last saw. Concurrent readers are
    safe; every successful write is reported to the optional *journal*
    callback so the run journal stays the single source of truth.
    """

    def __init__(
        self,
        root: str | Path,
        dims: Optional[dict[str, tuple[int, int]]] = None,
        journal: Optional[Callable[[dict], None]] = None,
    ):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._dims = dims or {}
        self._journal = journal
        self._lock = threading.Lock()

    def _path(self, sample_id: str) -> Path:
        return self.root / f"{sample_id}.json"

    def register(self, sample_id: str, width: int, height: int) -> None:
        self._dims[sample_id] = (width, height)

    def known(self, sample_id: str) -> bool:
        return sample_id in self._dims

    def current_revision(self, sample_id: str) -> int:
        p = self._path(sample_id)
        if not p.exists():
            return 0
        with open(p, "r", encoding="utf-8") as fh:
            return int(json.load(fh).get("revision", 0))

    def read(self, sample_id: str) -> Optional[LabelSet]:
        p = self._path(sample_id)
        if not p.exists():
            return None
        with open(p, "r", encoding="utf-8") as fh:
            return LabelSet.from_json(json.load(fh))

    def write(self, labels: LabelSet) -> int:
        """Persist *labels*; returns the new revision.

        The incoming ``labels.revision`` must equal the stored revision
        (0 for a first write). Boxes are clamped to the sample's image
        bounds before validation.
        """
        sid = labels.sample_id
        if sid not in self._dims:
            raise UnknownSample(f"unknown sample {sid!r}")
        w, h = self._dims[sid]
        clamped = []
        for i, box in enumerate(labels.boxes):
            try:
                clamped.append(box.clamped(w, h))
            except BoxValidationError as exc:
                raise BoxValidationError(f"sample {sid} box {i}: {exc}") from exc
        with self._lock:
            current = self.current_revision(sid)
            if labels.revision != current:
                raise RevisionConflict(
                    f"sample {sid}: expected revision {current}, got {labels.revision}"
                )
            new = LabelSet(
                sample_id=sid,
                boxes=tuple(clamped),
                revision=current + 1,
                annotator=labels.annotator,
            )
            tmp = self._path(sid).with_suffix(".json.tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(new.to_json(), fh, sort_keys=True)
            os.replace(tmp, self._path(sid))
        if self._journal is not None:
            self._journal(
                {
                    "event": "labels_written",
                    "sample_id": sid,
                    "revision": new.revision,
                    "annotator": new.annotator,
                    "n_boxes": len(new.boxes),
                }
            )
        return new.revision

    def delete(self, sample_id: str) -> None:
        p = self._path(sample_id)
        if p.exists():
            p.unlink()

    def labeled_ids(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.json"))


# Object-size classes, as a fraction of image area. The boundary values
# (exactly 1% and exactly 10%) both count as normal.
SIZE_SMALL = "small"
SIZE_NORMAL = "normal"
SIZE_BIG = "big"


def size_class(box: BoundingBox, width: float, height: float) -> str:
    frac = box.area / (float(width) * float(height))
    if frac < 0.01:
        return SIZE_SMALL
    if frac <= 0.10:
        return SIZE_NORMAL
    return SIZE_BIG


def dataset_stats(
    manifest: Manifest,
    labels: "LabelStore | dict[str, LabelSet]",
    dims: Optional[dict[str, tuple[int, int]]] = None,
) -> dict:
    """Size-class histogram over a fully labeled manifest.

    Returns ``{"per_class": {class: {small,normal,big}}, "total": {...}}``.
    *dims* maps sample id to (width, height); when *labels* is a LabelStore
    its registered dims are used.
    """
    if isinstance(labels, LabelStore):
        getter = labels.read
        dims = dims or labels._dims
    else:
        getter = labels.get
        if dims is None:
            raise DataModelError("dims required when labels is a plain mapping")
    per_class: dict[str, dict[str, int]] = {}
    total = {SIZE_SMALL: 0, SIZE_NORMAL: 0, SIZE_BIG: 0}
    for entry in manifest.entries:
        ls = getter(entry.sample_id)
        if ls is None:
            raise DataModelError(f"unlabeled entry {entry.sample_id!r}")
        w, h = dims[entry.sample_id]
        for box in ls.boxes:
            cls = box.class_name
            bucket = size_class(box, w, h)
            per_class.setdefault(cls, {SIZE_SMALL: 0, SIZE_NORMAL: 0, SIZE_BIG: 0})
            per_class[cls][bucket] += 1
            total[bucket] += 1
    return {"per_class": per_class, "total": total}
