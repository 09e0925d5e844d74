"""Detector plugins: the in-process synthetic pair and the subprocess bridge.

A detector plugin owns *both* co-trained heads. The engine only asks it
to train on the current labeled pool, predict on ids, and (optionally)
expose per-sample feature maps for the gram computation; everything else
about the model is the plugin's business. Detection losses cross this
boundary as opaque scalars since every network defines its own.

The synthetic detector is a closed-form stand-in used for experiments
and tests. Its skill rises with the effective amount of training signal,
where a self-labeled sample counts at a quality in [0, 1] judged against
hidden ground truth, so feeding it wrong pseudo-labels genuinely slows
it down. All randomness is drawn per sample from a seed derived from the
sample id, which makes predictions reproducible, independent of call
order, and monotone in skill: a box detected at some skill stays
detected at any higher skill. The two heads share each random draw with
probability rho (per quantity, via a coin draw), so rho sweeps head
correlation from independent (0) to identical (1) without changing
either head's marginal behavior.
"""

from __future__ import annotations

import hashlib
import json
import math
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Protocol, Sequence, Tuple

import numpy as np

from .data_model import BoundingBox, Manifest, ManifestEntry, write_manifest
from .evaluation import greedy_match_count, iou
from .gram import FeatureMap, read_feature_csv


class DetectorError(RuntimeError):
    """A plugin failed to train, predict, or report features."""


class FeatureUnsupported(DetectorError):
    """The plugin cannot expose feature maps; gram extras are skipped."""


@dataclass(frozen=True)
class TrainReport:
    """Parsed training report; detector losses feed the total loss."""

    loss_d1: float
    loss_d2: float
    gram_loss: Optional[float] = None
    epochs: int = 1
    n_labeled: int = 0
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "loss_d1": self.loss_d1,
            "loss_d2": self.loss_d2,
            "gram_loss": self.gram_loss,
            "epochs": self.epochs,
            "n_labeled": self.n_labeled,
            "diagnostics": self.diagnostics,
        }


Predictions = Dict[str, Tuple[List[BoundingBox], List[BoundingBox]]]


class DetectorPlugin(Protocol):
    name: str

    def train(self, labels: Mapping[str, Sequence[BoundingBox]], iteration: int) -> TrainReport:
        ...

    def predict(self, sample_ids: Sequence[str]) -> Predictions:
        ...

    def report_features(self, sample_id: str) -> Tuple[FeatureMap, FeatureMap]:
        ...


@dataclass(frozen=True)
class SyntheticDetectorConfig:
    """Knobs of the synthetic pair; defaults give a plausible mid-size run."""

    s_min: float = 0.5
    s_max: float = 0.9
    tau: float = 100.0
    rho: float = 0.5
    fp_rate: float = 0.5
    confusion_rate: float = 0.25
    confusion_fade: float = 0.65
    confusion_learn: float = 2.5
    quality_penalty: float = 6.0
    miss_penalty: float = 0.5
    self_discount: float = 0.9
    seed: int = 0
    feature_shape: tuple[int, int, int] = (4, 4, 8)

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise DetectorError(f"rho must be in [0, 1], got {self.rho}")
        if not 0.0 < self.s_min <= self.s_max <= 1.0:
            raise DetectorError("need 0 < s_min <= s_max <= 1")
        if self.tau <= 0:
            raise DetectorError("tau must be positive")

    def to_json(self) -> dict:
        return {
            "s_min": self.s_min,
            "s_max": self.s_max,
            "tau": self.tau,
            "rho": self.rho,
            "fp_rate": self.fp_rate,
            "confusion_rate": self.confusion_rate,
            "confusion_fade": self.confusion_fade,
            "confusion_learn": self.confusion_learn,
            "quality_penalty": self.quality_penalty,
            "miss_penalty": self.miss_penalty,
            "self_discount": self.self_discount,
            "seed": self.seed,
            "feature_shape": list(self.feature_shape),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticDetectorConfig":
        kwargs = dict(obj)
        if "feature_shape" in kwargs:
            kwargs["feature_shape"] = tuple(kwargs["feature_shape"])
        return cls(**kwargs)


# Per ground-truth box the sampler consumes one row per quantity, in this
# order; per false-positive slot likewise. Rows are drawn up front so the
# stream layout never depends on skill or on which branches fire.
_GT_ROWS = 7   # det, conf, jx0, jy0, jx1, jy1, cls
_FP_SLOTS = 5
_FP_ROWS = 7   # active, cx, cy, bw, bh, conf, cls


def _sample_key(sample_id: str) -> int:
    digest = hashlib.blake2b(sample_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class SyntheticDetector:
    """Closed-form co-trained pair driven by hidden ground truth."""

    name = "synthetic"

    def __init__(
        self,
        config: SyntheticDetectorConfig,
        ground_truth: Mapping[str, Sequence[BoundingBox]],
        dims: Mapping[str, tuple[int, int]],
    ):
        self.config = config
        self._gt = {sid: list(boxes) for sid, boxes in ground_truth.items()}
        self._dims = dict(dims)
        self._classes = sorted({b.class_name for v in self._gt.values() for b in v})
        if not self._classes:
            raise DetectorError("ground truth defines no classes")
        # Deterministic confusable-class map: each class is mistaken for
        # the next one in sorted order, so class errors are systematic
        # rather than uniform noise.
        n = len(self._classes)
        self._confused = {c: self._classes[(i + 1) % n] for i, c in enumerate(self._classes)}
        self.skill1 = config.s_min
        self.skill2 = config.s_min
        self._pool_wrongness = 0.0
        self._w_first: float | None = None

    # -- training ---------------------------------------------------------

    def _label_quality(self, sample_id: str, boxes: Sequence[BoundingBox]) -> float:
        """Training value of one labeled sample, in [0, 1].

        Human labels count fully. Self labels are discounted by
        *self_discount* and judged against hidden ground truth: matched
        boxes (same class, IoU >= 0.5, one-to-one) help in proportion to
        how tightly they localize, wrong ones hurt at *quality_penalty*
        weight each, and unannotated objects hurt at *miss_penalty* each,
        since an object the label misses is trained on as background. A
        wrong box or a mostly-incomplete label can zero a sample's worth
        outright.
        """
        if all(b.source == "human" for b in boxes):
            return 1.0
        gt = self._gt.get(sample_id, [])
        tp_value, matched = self._matched_quality(boxes, gt)
        fp = len(boxes) - matched
        missing = max(len(gt) - matched, 0)
        denom = max(len(boxes), 1)
        raw = (
            tp_value
            - self.config.quality_penalty * fp
            - self.config.miss_penalty * missing
        ) / denom
        return self.config.self_discount * min(max(raw, 0.0), 1.0)

    @staticmethod
    def _matched_quality(
        boxes: Sequence[BoundingBox], gt: Sequence[BoundingBox]
    ) -> tuple[float, int]:
        """Greedy one-to-one match against GT; value scales with tightness.

        A box at IoU 0.7 or below is worth 0, a perfect box 1, so loosely
        localized pseudo-labels train much less than sharp ones.
        """
        candidates = []
        for i, pb in enumerate(boxes):
            for j, gb in enumerate(gt):
                if pb.class_name != gb.class_name:
                    continue
                v = iou(pb, gb)
                if v >= 0.5:
                    candidates.append((v, i, j))
        candidates.sort(key=lambda t: (-t[0], t[1], t[2]))
        used_p: set = set()
        used_g: set = set()
        value = 0.0
        for v, i, j in candidates:
            if i in used_p or j in used_g:
                continue
            used_p.add(i)
            used_g.add(j)
            value += min(max((v - 0.7) / 0.3, 0.0), 1.0)
        return value, len(used_p)

    def _label_wrongness(self, sample_id: str, boxes: Sequence[BoundingBox]) -> tuple[int, int]:
        """(wrong, total) box counts for one labeled sample.

        A box is wrong when it does not match any same-class GT box at
        IoU >= 0.5. Wrong boxes in the pool teach the error: the fraction
        feeds back into predict-time class confusion.
        """
        if all(b.source == "human" for b in boxes):
            return 0, len(boxes)
        gt = self._gt.get(sample_id, [])
        _, matched = self._matched_quality(boxes, gt)
        return len(boxes) - matched, len(boxes)

    def train(self, labels: Mapping[str, Sequence[BoundingBox]], iteration: int) -> TrainReport:
        cfg = self.config
        n_eff = sum(self._label_quality(sid, boxes) for sid, boxes in labels.items())
        skill = cfg.s_min + (cfg.s_max - cfg.s_min) * (1.0 - math.exp(-n_eff / cfg.tau))
        self.skill1 = skill
        self.skill2 = skill
        wrong = total = 0
        for sid, boxes in labels.items():
            w, t = self._label_wrongness(sid, boxes)
            wrong += w
            total += t
        # The current pool's wrong-box fraction drives confusion at
        # predict time; the first self-trained pool leaves an additional
        # permanent scar, so a dirty ignition is never fully bought back
        # by later clean data.
        now = wrong / total if total else 0.0
        self._pool_wrongness = now
        if self._w_first is None and any(
            any(b.source != "human" for b in boxes) for boxes in labels.values()
        ):
            self._w_first = now
        loss1 = 0.05 + 1.8 * (1.0 - self.skill1)
        loss2 = 0.05 + 1.8 * (1.0 - self.skill2)
        return TrainReport(
            loss_d1=loss1,
            loss_d2=loss2,
            gram_loss=None,
            epochs=1,
            n_labeled=len(labels),
            diagnostics={
                "n_effective": n_eff,
                "skill1": self.skill1,
                "skill2": self.skill2,
                "pool_wrongness": self._pool_wrongness,
                "iteration": iteration,
            },
        )

    # -- prediction -------------------------------------------------------

    def _head_draws(self, rows: np.ndarray, always_shared: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Split raw rows [coin, shared, own1, own2] into per-head streams.

        Rows flagged always_shared model scene properties (whether a box
        is findable at the current skill, how salient it looks) and are
        common to both heads at any rho; the remaining rows are noise,
        shared with probability rho per row so rho=1 gives identical
        heads and rho=0 independent noise.
        """
        coin, shared, own1, own2 = rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3]
        use_shared = (coin < self.config.rho) | always_shared
        return (
            np.where(use_shared, shared, own1),
            np.where(use_shared, shared, own2),
        )

    def _predict_one(self, sample_id: str) -> tuple[List[BoundingBox], List[BoundingBox]]:
        cfg = self.config
        if sample_id not in self._dims:
            raise DetectorError(f"unknown sample {sample_id!r}")
        width, height = self._dims[sample_id]
        gt = self._gt.get(sample_id, [])
        rng = np.random.default_rng([cfg.seed, _sample_key(sample_id)])
        n_rows = _GT_ROWS * len(gt) + _FP_ROWS * _FP_SLOTS
        rows = rng.random((n_rows, 4))
        # Detection and confidence rows (first two of each GT group) are
        # scene difficulty and salience, not head noise: both heads face
        # the same findability and report the same conviction band.
        always_shared = np.zeros(n_rows, dtype=bool)
        always_shared[: _GT_ROWS * len(gt) : _GT_ROWS] = True
        always_shared[1 : _GT_ROWS * len(gt) : _GT_ROWS] = True
        u1, u2 = self._head_draws(rows, always_shared)
        out: tuple[List[BoundingBox], List[BoundingBox]] = ([], [])
        for head, u, skill in ((0, u1, self.skill1), (1, u2, self.skill2)):
            row = 0
            boxes = out[head]
            for box in gt:
                det, conf_u = u[row], u[row + 1]
                jit = u[row + 2 : row + 6]
                cls_u = u[row + 6]
                row += _GT_ROWS
                if det >= skill:
                    continue
                bw = box.x_max - box.x_min
                bh = box.y_max - box.y_min
                amp = 0.1 * (1.0 - skill)
                coords = [
                    box.x_min + (2 * jit[0] - 1) * amp * bw,
                    box.y_min + (2 * jit[1] - 1) * amp * bh,
                    box.x_max + (2 * jit[2] - 1) * amp * bw,
                    box.y_max + (2 * jit[3] - 1) * amp * bh,
                ]
                # Noise is strongly top-weighted (cubic in the draw):
                # detectors are overconfident on the boxes they commit to,
                # and the band tightens as skill grows.
                conf = min(max(skill + (1.0 - 2.0 * conf_u ** 3) * (1 - skill), 0.0), 1.0)
                cls_name = box.class_name
                # Three confusion sources: the model's own immaturity,
                # which fades out entirely once skill reaches
                # confusion_fade; confusion learned from the current
                # pool; and the scar from the first self-trained pool.
                # The learned terms are quadratic in the wrong-box
                # fraction, so a mostly-clean pool barely hurts while a
                # dirty one compounds fast.
                w = self._pool_wrongness
                w0 = self._w_first or 0.0
                fade_span = cfg.confusion_fade - cfg.s_min
                ramp = (
                    max(0.0, cfg.confusion_fade - skill) / fade_span
                    if fade_span > 0
                    else 0.0
                )
                c_prob = min(
                    cfg.confusion_rate * ramp
                    + cfg.confusion_learn * (w * w + w0 * w0) / 0.05 * (1.0 - skill),
                    0.3,
                )
                if cls_u < c_prob:
                    cls_name = self._confused[cls_name]
                boxes.append(
                    BoundingBox(
                        x_min=coords[0],
                        y_min=coords[1],
                        x_max=coords[2],
                        y_max=coords[3],
                        class_name=cls_name,
                        confidence=conf,
                        source="self",
                    ).clamped(width, height)
                )
            for _ in range(_FP_SLOTS):
                active, cx_u, cy_u, bw_u, bh_u, conf_u, cls_u = u[row : row + _FP_ROWS]
                row += _FP_ROWS
                if active >= cfg.fp_rate * (1.0 - skill) / _FP_SLOTS:
                    continue
                cx, cy = cx_u * width, cy_u * height
                bw = (0.05 + 0.25 * bw_u) * width
                bh = (0.05 + 0.25 * bh_u) * height
                cls_name = self._classes[min(int(cls_u * len(self._classes)), len(self._classes) - 1)]
                boxes.append(
                    BoundingBox(
                        x_min=cx - bw / 2,
                        y_min=cy - bh / 2,
                        x_max=cx + bw / 2,
                        y_max=cy + bh / 2,
                        class_name=cls_name,
                        confidence=0.2 + 0.75 * conf_u,
                        source="self",
                    ).clamped(width, height)
                )
        return out

    def predict(self, sample_ids: Sequence[str]) -> Predictions:
        return {sid: self._predict_one(sid) for sid in sample_ids}

    # -- features ---------------------------------------------------------

    def report_features(self, sample_id: str) -> Tuple[FeatureMap, FeatureMap]:
        """Per-sample conv feature pair with correlation rho between heads.

        Built as sqrt(rho) * shared + sqrt(1 - rho) * own noise, so at
        rho = 1 both heads return bitwise identical tensors and the gram
        difference is exactly zero; mean gram difference grows as rho
        falls.
        """
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, _sample_key(sample_id), 7])
        shape = cfg.feature_shape
        shared = rng.standard_normal(shape)
        own1 = rng.standard_normal(shape)
        own2 = rng.standard_normal(shape)
        a = math.sqrt(cfg.rho)
        b = math.sqrt(1.0 - cfg.rho)
        return (
            FeatureMap.conv(a * shared + b * own1),
            FeatureMap.conv(a * shared + b * own2),
        )


class CommandDetector:
    """Bridge to an external detector pair driven by shell command templates.

    Templates may use the placeholders ``{train_manifest}``,
    ``{predict_manifest}``, ``{work_dir}``, and ``{config}``; the train
    template must contain ``{train_manifest}`` and ``{work_dir}``, the
    predict template ``{predict_manifest}`` and ``{work_dir}``. The file
    contract is:

    * train: the command reads the manifest (entries carry label paths),
      then prints the training report JSON (``loss_d1``, ``loss_d2``,
      ``gram_loss``, ``epochs``) on stdout or writes it to
      ``{work_dir}/train_report.json``.
    * predict: the command writes predictions JSON Lines to
      ``{work_dir}/predictions.jsonl`` (see ``write_predictions``).
    * features (optional template with ``{sample_id}`` and ``{work_dir}``):
      writes ``{work_dir}/features/{sample_id}_d1.csv`` and ``_d2.csv``.

    ``{config}`` expands to a JSON file holding *plugin_config*. Failures
    surface as DetectorError carrying the exit status and the tail of
    stderr; the run state is untouched.
    """

    name = "command"

    def __init__(
        self,
        train_template: str,
        predict_template: str,
        work_dir: str | Path,
        features_template: Optional[str] = None,
        plugin_config: Optional[dict] = None,
        image_paths: Optional[Mapping[str, str]] = None,
        timeout: float = 300.0,
    ):
        for template, required in (
            (train_template, ("{train_manifest}", "{work_dir}")),
            (predict_template, ("{predict_manifest}", "{work_dir}")),
        ):
            for ph in required:
                if ph not in template:
                    raise DetectorError(f"template missing placeholder {ph}: {template!r}")
        if features_template is not None:
            for ph in ("{sample_id}", "{work_dir}"):
                if ph not in features_template:
                    raise DetectorError(
                        f"features template missing placeholder {ph}: {features_template!r}"
                    )
        self.train_template = train_template
        self.predict_template = predict_template
        self.features_template = features_template
        self.work_dir = Path(work_dir)
        self.work_dir.mkdir(parents=True, exist_ok=True)
        self.timeout = timeout
        self._image_paths = dict(image_paths or {})
        self._config_path = self.work_dir / "plugin_config.json"
        self._config_path.write_text(
            json.dumps(plugin_config or {}, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    def register_images(self, image_paths: Mapping[str, str]) -> None:
        self._image_paths.update(image_paths)

    def _run(self, command: str) -> subprocess.CompletedProcess:
        try:
            proc = subprocess.run(
                shlex.split(command),
                capture_output=True,
                text=True,
                timeout=self.timeout,
            )
        except subprocess.TimeoutExpired as exc:
            raise DetectorError(f"command timed out after {self.timeout}s: {command}") from exc
        except OSError as exc:
            raise DetectorError(f"command failed to start: {command} ({exc})") from exc
        if proc.returncode != 0:
            tail = proc.stderr[-500:] if proc.stderr else "<no stderr>"
            raise DetectorError(
                f"command exited {proc.returncode}: {command}\nstderr tail: {tail}"
            )
        return proc

    def _fill(self, template: str, **extra: str) -> str:
        values = {"work_dir": str(self.work_dir), "config": str(self._config_path)}
        values.update(extra)
        return template.format(**values)

    def _image_path(self, sample_id: str) -> str:
        if sample_id not in self._image_paths:
            raise DetectorError(f"no registered image path for sample {sample_id!r}")
        return self._image_paths[sample_id]

    def train(self, labels: Mapping[str, Sequence[BoundingBox]], iteration: int) -> TrainReport:
        stage = self.work_dir / f"train_{iteration:03d}"
        labels_dir = stage / "labels"
        labels_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for sid in sorted(labels):
            label_path = labels_dir / f"{sid}.json"
            label_path.write_text(
                json.dumps(
                    {
                        "sample_id": sid,
                        "revision": 1,
                        "annotator": "engine",
                        "boxes": [b.to_json() for b in labels[sid]],
                    },
                    sort_keys=True,
                )
                + "\n",
                encoding="utf-8",
            )
            entries.append(ManifestEntry(sid, self._image_path(sid), str(label_path)))
        manifest_path = stage / "train.jsonl"
        write_manifest(Manifest("train", tuple(entries)), manifest_path)
        proc = self._run(self._fill(self.train_template, train_manifest=str(manifest_path)))
        raw = proc.stdout.strip()
        if not raw:
            report_path = self.work_dir / "train_report.json"
            if not report_path.exists():
                raise DetectorError("train command produced no report (stdout or file)")
            raw = report_path.read_text(encoding="utf-8")
        try:
            report = json.loads(raw)
            return TrainReport(
                loss_d1=float(report["loss_d1"]),
                loss_d2=float(report["loss_d2"]),
                gram_loss=None if report.get("gram_loss") is None else float(report["gram_loss"]),
                epochs=int(report.get("epochs", 1)),
                n_labeled=len(labels),
                diagnostics=report.get("diagnostics", {}),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DetectorError(f"train command produced invalid report: {exc}") from exc

    def predict(self, sample_ids: Sequence[str]) -> Predictions:
        entries = tuple(ManifestEntry(sid, self._image_path(sid), None) for sid in sample_ids)
        manifest_path = self.work_dir / "predict.jsonl"
        write_manifest(Manifest("unlabeled", entries), manifest_path)
        out_path = self.work_dir / "predictions.jsonl"
        if out_path.exists():
            out_path.unlink()
        self._run(self._fill(self.predict_template, predict_manifest=str(manifest_path)))
        if not out_path.exists():
            raise DetectorError(f"predict command wrote no {out_path.name}")
        preds = read_predictions(out_path)
        missing = [sid for sid in sample_ids if sid not in preds]
        if missing:
            raise DetectorError(f"predict command omitted {len(missing)} ids: {missing[:5]}")
        return {sid: preds[sid] for sid in sample_ids}

    def report_features(self, sample_id: str) -> Tuple[FeatureMap, FeatureMap]:
        if self.features_template is None:
            raise FeatureUnsupported(f"{self.name} detector exposes no features")
        features_dir = self.work_dir / "features"
        features_dir.mkdir(exist_ok=True)
        self._run(self._fill(self.features_template, sample_id=sample_id))
        try:
            return (
                read_feature_csv(features_dir / f"{sample_id}_d1.csv"),
                read_feature_csv(features_dir / f"{sample_id}_d2.csv"),
            )
        except (OSError, ValueError) as exc:
            raise DetectorError(f"features command output unreadable: {exc}") from exc


def write_predictions(preds: Predictions, path: str | Path) -> None:
    """Predictions JSONL: one line per sample, the two heads as d1/d2."""
    with open(path, "w", encoding="utf-8") as fh:
        for sid in sorted(preds):
            d1, d2 = preds[sid]
            fh.write(
                json.dumps(
                    {
                        "id": sid,
                        "d1": [b.to_json() for b in d1],
                        "d2": [b.to_json() for b in d2],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_predictions(path: str | Path) -> Predictions:
    preds: Predictions = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                preds[str(obj["id"])] = (
                    [BoundingBox.from_json(b) for b in obj["d1"]],
                    [BoundingBox.from_json(b) for b in obj["d2"]],
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DetectorError(f"{path}:{lineno}: bad prediction record: {exc}") from exc
    return preds


def build_detector(
    config: dict,
    ground_truth: Optional[Mapping[str, Sequence[BoundingBox]]] = None,
    dims: Optional[Mapping[str, tuple[int, int]]] = None,
    image_paths: Optional[Mapping[str, str]] = None,
    work_dir: Optional[str | Path] = None,
):
    """Instantiate a plugin from its config block.

    ``{"kind": "synthetic", ...}`` needs ground truth and dims from the
    caller; ``{"kind": "command", ...}`` takes the template fields plus
    the engine-provided work dir and image registry.
    """
    kind = config.get("kind", "synthetic")
    opts = {k: v for k, v in config.items() if k != "kind"}
    if kind == "synthetic":
        if ground_truth is None or dims is None:
            raise DetectorError("synthetic detector needs ground truth and dims")
        return SyntheticDetector(SyntheticDetectorConfig.from_json(opts), ground_truth, dims)
    if kind == "command":
        if work_dir is None:
            raise DetectorError("command detector needs a work dir")
        try:
            return CommandDetector(work_dir=work_dir, image_paths=image_paths, **opts)
        except TypeError as exc:
            raise DetectorError(f"bad command detector config: {exc}") from exc
    raise DetectorError(f"unknown detector kind {kind!r}")
