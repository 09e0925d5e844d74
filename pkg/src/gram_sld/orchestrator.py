"""The co-training run engine: configuration, state machine, resume.

A run walks a fixed sequence of journaled steps: descriptor extraction,
clustering, key selection, the human-annotation gate, initial training,
then the iterative loop (predict on the remaining pool, score cross-head
agreement, promote confident samples, retrain) until the pool is
exhausted or an iteration adds nothing. Every step appends one journal
event carrying enough to restore its outcome, so rerunning a work dir
replays completed steps from the journal and picks up where it stopped.
Given the same config, seed, and label inputs, the journal bytes are
identical across runs, interrupted or not.

Three training strategies share this engine: the full co-training run,
the initial-train-only baseline (stops after the first training), and
the fully supervised ceiling (every sample labeled from ground truth).
``run_modes`` executes all three on one corpus and reports their final
mAPs side by side.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

from PIL import Image

from . import clustering, features, report
from .data_model import (
    KEY_PENDING,
    LABELED_HUMAN,
    LABELED_SELF,
    UNLABELED,
    BoundingBox,
    LabelSet,
    LabelStore,
    Manifest,
    ManifestEntry,
    Sample,
    dataset_stats,
    load_manifest,
)
from .detector import DetectorError, FeatureUnsupported, build_detector, write_predictions, read_predictions
from .evaluation import evaluate_heads, greedy_match_count, save_evaluation
from .gram import AlphaPolicy, gram_difference, mean_gram_loss, total_loss
from .journal import Journal, JournalError
from .key_selection import KeySet, SelectionConfig, load_keyset, save_keyset, select_keys
from .self_labeling import (
    IterationScores,
    ScoringConfig,
    cluster_thresholds,
    confident_samples,
    load_scores,
    merged_boxes,
    save_scores,
    score_sample,
    should_terminate,
)
from .simulate import load_ground_truth, load_scenario

MODES = ("gram_sld", "initial_only", "full_supervision")
ANNOTATION_MODES = ("oracle", "pre_labeled", "service")


class RunConfigError(ValueError):
    pass


class AnnotationPending(RuntimeError):
    """The gate is blocked: key samples still await human labels."""

    def __init__(self, pending: Sequence[str]):
        self.pending = list(pending)
        super().__init__(
            f"{len(self.pending)} key samples await annotation; "
            "label them via the annotation service, then rerun"
        )


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run configuration; all paths are absolute."""

    work_dir: Path
    unlabeled_manifest: Path
    test_manifest: Optional[Path]
    ground_truth_dir: Optional[Path]
    scenario: Optional[Path]
    k_min: int = 2
    k_max: int = 30
    force_k: Optional[int] = None
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    detector: dict = field(default_factory=lambda: {"kind": "synthetic"})
    alpha: dict = field(default_factory=lambda: {"mode": "auto", "fraction": 0.1})
    spatial_normalize: bool = True
    feature_samples: int = 8
    annotation_mode: str = "oracle"
    annotation_labels_dir: Optional[Path] = None
    review_enabled: bool = False
    max_iterations: int = 12
    mode: str = "gram_sld"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise RunConfigError(f"unknown run mode {self.mode!r}")
        if self.annotation_mode not in ANNOTATION_MODES:
            raise RunConfigError(f"unknown annotation mode {self.annotation_mode!r}")
        if self.max_iterations < 0:
            raise RunConfigError("max_iterations must be >= 0")
        if not 2 <= self.k_min <= self.k_max:
            raise RunConfigError("need 2 <= k_min <= k_max")

    def canonical(self) -> dict:
        """JSON form used for journal identity checks."""
        return {
            "work_dir": str(self.work_dir),
            "unlabeled_manifest": str(self.unlabeled_manifest),
            "test_manifest": None if self.test_manifest is None else str(self.test_manifest),
            "ground_truth_dir": None
            if self.ground_truth_dir is None
            else str(self.ground_truth_dir),
            "scenario": None if self.scenario is None else str(self.scenario),
            "clustering": {"k_min": self.k_min, "k_max": self.k_max, "force_k": self.force_k},
            "selection": {
                "ratio": self.selection.ratio,
                "per_cluster_cap": self.selection.per_cluster_cap,
            },
            "scoring": self.scoring.to_json(),
            "detector": self.detector,
            "alpha": self.alpha,
            "gram": {
                "spatial_normalize": self.spatial_normalize,
                "feature_samples": self.feature_samples,
            },
            "annotation": {
                "mode": self.annotation_mode,
                "labels_dir": None
                if self.annotation_labels_dir is None
                else str(self.annotation_labels_dir),
                "review": self.review_enabled,
            },
            "max_iterations": self.max_iterations,
            "mode": self.mode,
            "seed": self.seed,
        }


def _resolve(base: Path, value: Optional[str]) -> Optional[Path]:
    if value is None:
        return None
    p = Path(value)
    return (base / p).resolve() if not p.is_absolute() else p


def load_run_config(path: str | Path, overrides: Optional[dict] = None) -> RunConfig:
    """Parse a run-config JSON file and apply CLI overrides.

    Relative paths resolve against the config file's directory. Supported
    overrides: ratio, beta, force_k, seed (seed also reseeds the
    detector), mode, work_dir, max_iterations, rho.
    """
    path = Path(path)
    if not path.exists():
        raise RunConfigError(f"config not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RunConfigError(f"{path}: malformed JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise RunConfigError(f"{path}: config must be a JSON object")
    base = path.parent.resolve()
    overrides = overrides or {}

    data = raw.get("data", {})
    if "unlabeled_manifest" not in data:
        raise RunConfigError("config needs data.unlabeled_manifest")
    if "work_dir" not in raw:
        raise RunConfigError("config needs work_dir")

    clustering_cfg = raw.get("clustering", {})
    selection_cfg = dict(raw.get("selection", {}))
    scoring_cfg = dict(raw.get("scoring", {}))
    detector_cfg = dict(raw.get("detector", {"kind": "synthetic"}))
    annotation_cfg = raw.get("annotation", {})
    gram_cfg = raw.get("gram", {})

    if "ratio" in overrides and overrides["ratio"] is not None:
        selection_cfg["ratio"] = overrides["ratio"]
    if "beta" in overrides and overrides["beta"] is not None:
        scoring_cfg["beta"] = overrides["beta"]
    force_k = clustering_cfg.get("force_k")
    if "force_k" in overrides and overrides["force_k"] is not None:
        force_k = overrides["force_k"]
    seed = int(raw.get("seed", 0))
    if "seed" in overrides and overrides["seed"] is not None:
        seed = int(overrides["seed"])
        detector_cfg["seed"] = seed
    if "rho" in overrides and overrides["rho"] is not None:
        detector_cfg["rho"] = overrides["rho"]
    mode = raw.get("mode", "gram_sld")
    if "mode" in overrides and overrides["mode"] is not None:
        mode = overrides["mode"]
    work_dir = raw["work_dir"]
    if "work_dir" in overrides and overrides["work_dir"] is not None:
        work_dir = overrides["work_dir"]
    max_iterations = int(raw.get("max_iterations", 12))
    if "max_iterations" in overrides and overrides["max_iterations"] is not None:
        max_iterations = int(overrides["max_iterations"])

    try:
        selection = SelectionConfig(**selection_cfg)
        scoring = ScoringConfig(**scoring_cfg)
    except (TypeError, ValueError) as exc:
        raise RunConfigError(f"bad selection/scoring config: {exc}") from exc

    return RunConfig(
        work_dir=_resolve(base, str(work_dir)),
        unlabeled_manifest=_resolve(base, data["unlabeled_manifest"]),
        test_manifest=_resolve(base, data.get("test_manifest")),
        ground_truth_dir=_resolve(base, data.get("ground_truth_dir")),
        scenario=_resolve(base, data.get("scenario")),
        k_min=int(clustering_cfg.get("k_min", 2)),
        k_max=int(clustering_cfg.get("k_max", 30)),
        force_k=None if force_k is None else int(force_k),
        selection=selection,
        scoring=scoring,
        detector=detector_cfg,
        alpha=raw.get("alpha", {"mode": "auto", "fraction": 0.1}),
        spatial_normalize=bool(gram_cfg.get("spatial_normalize", True)),
        feature_samples=int(gram_cfg.get("feature_samples", 8)),
        annotation_mode=annotation_cfg.get("mode", "oracle"),
        annotation_labels_dir=_resolve(base, annotation_cfg.get("labels_dir")),
        review_enabled=bool(annotation_cfg.get("review", False)),
        max_iterations=max_iterations,
        mode=mode,
        seed=seed,
    )


@dataclass
class RunResult:
    work_dir: Path
    iterations: int
    reason: str
    counts: Dict[str, int]
    history: List[dict]
    final_eval: Optional[dict] = None

    @property
    def headline_map(self) -> Optional[float]:
        if self.final_eval is None:
            return None
        return self.final_eval["headline_map"]


class Engine:
    """One run over one work dir; construct fresh per (re)start."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.config.work_dir.mkdir(parents=True, exist_ok=True)
        self.journal = Journal(self.config.work_dir / "journal.jsonl")

        self.pool_manifest = load_manifest(config.unlabeled_manifest)
        self.test_manifest = (
            load_manifest(config.test_manifest) if config.test_manifest else None
        )
        self._dims = self._load_dims()
        self._gt = (
            load_ground_truth(config.ground_truth_dir)
            if config.ground_truth_dir
            else {}
        )
        self._test_gt = self._load_test_gt()

        self.store = LabelStore(
            self.config.work_dir / "labels",
            dims={sid: self._dims[sid] for sid in self.pool_manifest.ids()},
            journal=self._journal_log,
        )
        self.samples: Dict[str, Sample] = {
            e.sample_id: Sample(
                id=e.sample_id,
                image_path=e.image_path,
                width=self._dims[e.sample_id][0],
                height=self._dims[e.sample_id][1],
            )
            for e in self.pool_manifest.entries
        }

        self.alpha_policy = AlphaPolicy.from_json(config.alpha)
        self.detector = self._build_detector()
        self.keyset: Optional[KeySet] = None
        self.cluster_model: Optional[clustering.ClusterModel] = None
        self.history: List[dict] = []
        self.iteration = 0
        self.phase = "created"
        self._status_lock = threading.Lock()
        self._gate_changed = threading.Condition()

    # -- construction helpers --------------------------------------------

    def _load_dims(self) -> Dict[str, tuple[int, int]]:
        dims: Dict[str, tuple[int, int]] = {}
        if self.config.scenario is not None:
            scenario = load_scenario(self.config.scenario)
            for sid, wh in scenario.get("dims", {}).items():
                dims[sid] = (int(wh[0]), int(wh[1]))
        entries = list(self.pool_manifest.entries)
        if self.test_manifest is not None:
            entries += list(self.test_manifest.entries)
        for e in entries:
            if e.sample_id not in dims:
                with Image.open(e.image_path) as im:
                    dims[e.sample_id] = (int(im.size[0]), int(im.size[1]))
        return dims

    def _load_test_gt(self) -> Dict[str, List[BoundingBox]]:
        out: Dict[str, List[BoundingBox]] = {}
        if self.test_manifest is None:
            return out
        for e in self.test_manifest.entries:
            if e.label_path is None:
                raise RunConfigError(f"test entry {e.sample_id} has no label file")
            ls = LabelSet.from_json(
                json.loads(Path(e.label_path).read_text(encoding="utf-8"))
            )
            out[e.sample_id] = list(ls.boxes)
        return out

    def _build_detector(self):
        image_paths = {e.sample_id: e.image_path for e in self.pool_manifest.entries}
        if self.test_manifest is not None:
            image_paths.update(
                {e.sample_id: e.image_path for e in self.test_manifest.entries}
            )
        cfg = dict(self.config.detector)
        if cfg.get("kind", "synthetic") == "synthetic":
            cfg.setdefault("seed", self.config.seed)
        return build_detector(
            cfg,
            ground_truth=self._gt or None,
            dims=self._dims,
            image_paths=image_paths,
            work_dir=self.config.work_dir / "detector",
        )

    def _journal_log(self, event: dict) -> None:
        payload = dict(event)
        event_type = payload.pop("event")
        self.journal.log(event_type, **payload)

    def _set_phase(self, phase: str, iteration: Optional[int] = None) -> None:
        with self._status_lock:
            self.phase = phase
            if iteration is not None:
                self.iteration = iteration

    # -- shared pieces ----------------------------------------------------

    def pool_counts(self) -> Dict[str, int]:
        counts = {UNLABELED: 0, KEY_PENDING: 0, LABELED_HUMAN: 0, LABELED_SELF: 0}
        for s in self.samples.values():
            counts[s.status] = counts.get(s.status, 0) + 1
        return counts

    def status(self) -> dict:
        with self._status_lock:
            return {
                "iteration": self.iteration,
                "phase": self.phase,
                "pools": self.pool_counts(),
                "metrics": list(self.history),
            }

    def _commit_labels(
        self, sample_id: str, boxes: Sequence[BoundingBox], annotator: str
    ) -> None:
        """Write labels; repeats after resume keep journal bytes stable."""
        w, h = self._dims[sample_id]
        clamped = tuple(b.clamped(w, h) for b in boxes)
        current = self.store.read(sample_id)
        if (
            current is not None
            and current.boxes == clamped
            and current.annotator == annotator
        ):
            self.journal.log(
                "labels_written",
                sample_id=sample_id,
                revision=current.revision,
                annotator=annotator,
                n_boxes=len(clamped),
            )
            return
        self.store.write(
            LabelSet(
                sample_id=sample_id,
                boxes=tuple(boxes),
                revision=self.store.current_revision(sample_id),
                annotator=annotator,
            )
        )

    def _labeled_pool(self) -> Dict[str, List[BoundingBox]]:
        out: Dict[str, List[BoundingBox]] = {}
        for sid in sorted(self.samples):
            if self.samples[sid].status in (LABELED_HUMAN, LABELED_SELF):
                ls = self.store.read(sid)
                if ls is None:
                    raise JournalError(f"labeled sample {sid} missing from store")
                out[sid] = list(ls.boxes)
        return out

    def _unlabeled_ids(self) -> List[str]:
        return sorted(
            sid for sid, s in self.samples.items() if s.status == UNLABELED
        )

    def _feature_ids(self) -> List[str]:
        labeled = sorted(
            sid
            for sid, s in self.samples.items()
            if s.status in (LABELED_HUMAN, LABELED_SELF)
        )
        return labeled[: self.config.feature_samples]

    def _gram_value(self) -> Optional[float]:
        ids = self._feature_ids()
        if not ids:
            return None
        try:
            pairs = [self.detector.report_features(sid) for sid in ids]
        except FeatureUnsupported:
            return None
        return mean_gram_loss(pairs, spatial_normalize=self.config.spatial_normalize)

    def _evaluate_now(self) -> Optional[dict]:
        if self.test_manifest is None:
            return None
        test_ids = [e.sample_id for e in self.test_manifest.entries]
        preds = self.detector.predict(test_ids)
        result = evaluate_heads(
            {sid: preds[sid][0] for sid in test_ids},
            {sid: preds[sid][1] for sid in test_ids},
            self._test_gt,
        )
        return {
            "map_d1": result.head1.map,
            "map_d2": result.head2.map,
            "headline_map": result.headline_map,
            "better_head": result.better_head,
        }

    def _pseudo_quality(
        self, committed: Mapping[str, Sequence[BoundingBox]]
    ) -> tuple[Optional[float], Optional[float]]:
        """Precision/recall of committed pseudo-boxes against hidden GT."""
        if not self._gt:
            return None, None
        tp = 0
        n_pred = 0
        n_gt = 0
        for sid, boxes in committed.items():
            gt = self._gt.get(sid, [])
            tp += greedy_match_count(boxes, gt)
            n_pred += len(boxes)
            n_gt += len(gt)
        precision = tp / n_pred if n_pred else None
        recall = tp / n_gt if n_gt else None
        return precision, recall

    # -- journaled steps --------------------------------------------------

    def _step_run_started(self) -> None:
        ev, replayed = self.journal.record(
            "run_started", lambda: {"config": self.config.canonical()}
        )
        if replayed and ev["config"] != self.config.canonical():
            raise JournalError(
                "work dir journal was produced by a different config; "
                "use a fresh work dir or the original config"
            )

    def _step_descriptors(self) -> Dict[str, tuple]:
        cache_path = self.config.work_dir / "descriptors.csv"

        def make() -> dict:
            rows = {}
            for e in self.pool_manifest.entries:
                rows[e.sample_id] = features.describe_image(e.image_path)
            features.write_descriptor_cache(cache_path, rows)
            return {"n": len(rows), "path": cache_path.name}

        ev, replayed = self.journal.record("descriptors", make)
        descriptors = features.read_descriptor_cache(cache_path)
        missing = [sid for sid in self.pool_manifest.ids() if sid not in descriptors]
        if missing:
            raise JournalError(f"descriptor cache incomplete: missing {missing[:3]}")
        for sid, (_, entropy) in descriptors.items():
            if sid in self.samples:
                self.samples[sid].entropy = entropy
        return descriptors

    def _step_cluster(self, descriptors: Dict[str, tuple]) -> clustering.ClusterModel:
        model_path = self.config.work_dir / "clusters.json"
        ids = self.pool_manifest.ids()
        histograms = [descriptors[sid][0] for sid in ids]

        def make() -> dict:
            dendrogram = clustering.agglomerate(histograms)
            k_max = min(self.config.k_max, len(ids) - 1)
            model = clustering.select_k(
                dendrogram,
                histograms,
                self.config.k_min,
                k_max,
                ids=ids,
                force_k=self.config.force_k,
            )
            clustering.save_cluster_model(model, model_path)
            return {"k": model.k, "forced": model.forced, "path": model_path.name}

        self.journal.record("clustered", make)
        model = clustering.load_cluster_model(model_path)
        for sid, cluster_id in model.assignments.items():
            self.samples[sid].assign_cluster(cluster_id)
        self.cluster_model = model
        return model

    def _step_select_keys(self, model: clustering.ClusterModel) -> KeySet:
        keyset_path = self.config.work_dir / "keyset.json"

        def make() -> dict:
            entropies = {sid: s.entropy for sid, s in self.samples.items()}
            keyset = select_keys(model, entropies, self.config.selection)
            save_keyset(keyset, keyset_path)
            return {"n_keys": keyset.total, "path": keyset_path.name}

        self.journal.record("keys_selected", make)
        keyset = load_keyset(keyset_path)
        for sid in keyset.all_ids():
            self.samples[sid].transition(KEY_PENDING)
        self.keyset = keyset
        return keyset

    def _gate_pending(self) -> List[str]:
        assert self.keyset is not None
        return [
            sid for sid in self.keyset.all_ids() if self.store.read(sid) is None
        ]

    def _step_annotation_gate(self, keyset: KeySet) -> None:
        mode = self.config.annotation_mode
        key_ids = keyset.all_ids()

        def make() -> dict:
            if mode == "oracle":
                if not self._gt:
                    raise RunConfigError("oracle annotation needs a ground truth dir")
                for sid in key_ids:
                    boxes = [
                        replace(b, source="human", confidence=1.0)
                        for b in self._gt.get(sid, [])
                    ]
                    self._commit_labels(sid, boxes, annotator="oracle")
            elif mode == "pre_labeled":
                if self.config.annotation_labels_dir is None:
                    raise RunConfigError("pre_labeled annotation needs labels_dir")
                for sid in key_ids:
                    p = self.config.annotation_labels_dir / f"{sid}.json"
                    if not p.exists():
                        raise AnnotationPending(self._gate_pending())
                    ls = LabelSet.from_json(json.loads(p.read_text(encoding="utf-8")))
                    boxes = [replace(b, source="human") for b in ls.boxes]
                    self._commit_labels(sid, boxes, annotator=ls.annotator or "pre_labeled")
            else:
                # Service mode: block until the annotation endpoints have
                # labeled every key sample (they write straight into the
                # store and journal as they go).
                with self._gate_changed:
                    while self._gate_pending():
                        if not self._gate_changed.wait(timeout=300.0):
                            raise AnnotationPending(self._gate_pending())
            return {"n_keys": len(key_ids), "mode": mode}

        self.journal.record("annotation_complete", make)
        for sid in key_ids:
            if self.samples[sid].status == KEY_PENDING:
                self.samples[sid].transition(LABELED_HUMAN)

    def notify_gate(self) -> None:
        """Wake the gate wait after a service-side annotation lands."""
        with self._gate_changed:
            self._gate_changed.notify_all()

    def _step_train(self, iteration: int) -> dict:
        labeled = self._labeled_pool()

        def make() -> dict:
            train_report = self.detector.train(labeled, iteration)
            gram_value = self._gram_value()
            if gram_value is None:
                alpha = 0.0
                loss = total_loss(train_report.loss_d1, train_report.loss_d2, 0.0, 0.0)
            else:
                alpha = self.alpha_policy.resolve(
                    train_report.loss_d1, train_report.loss_d2, gram_value
                )
                loss = total_loss(
                    train_report.loss_d1, train_report.loss_d2, gram_value, alpha
                )
            payload = {
                "iteration": iteration,
                "n_labeled": len(labeled),
                "loss_d1": loss.loss_d1,
                "loss_d2": loss.loss_d2,
                "gram_loss": None if gram_value is None else loss.gram_loss,
                "alpha": alpha,
                "total_loss": loss.total,
                "diagnostics": train_report.diagnostics,
            }
            current_eval = self._evaluate_now()
            if current_eval is not None:
                payload.update(current_eval)
            return payload

        ev, replayed = self.journal.record("trained", make)
        if replayed:
            # Re-train to restore plugin state; the journal stays untouched.
            self.detector.train(labeled, iteration)
            if ev.get("gram_loss") is not None:
                self.alpha_policy.restore(ev["alpha"])
        return ev

    def _history_row(self, trained_ev: Optional[dict], pool_ev: Optional[dict], iteration: int) -> None:
        row: dict = {"iteration": iteration}
        if pool_ev is not None:
            for key in ("added", "remaining", "precision", "recall"):
                row[key] = pool_ev.get(key)
        if trained_ev is not None:
            for key in (
                "n_labeled",
                "loss_d1",
                "loss_d2",
                "gram_loss",
                "alpha",
                "total_loss",
                "map_d1",
                "map_d2",
                "headline_map",
            ):
                row[key] = trained_ev.get(key)
        self.history.append(row)

    # -- the run ----------------------------------------------------------

    def run(self) -> RunResult:
        cfg = self.config
        self._set_phase("starting")
        self._step_run_started()

        if cfg.mode == "full_supervision":
            result = self._run_full_supervision()
        else:
            result = self._run_cotraining()

        self._set_phase("reporting")
        self._step_report()
        self._set_phase("done")
        return result

    def _run_full_supervision(self) -> RunResult:
        all_ids = sorted(self.samples)

        def make() -> dict:
            if not self._gt:
                raise RunConfigError("full supervision needs a ground truth dir")
            for sid in all_ids:
                boxes = [
                    replace(b, source="human", confidence=1.0)
                    for b in self._gt.get(sid, [])
                ]
                self._commit_labels(sid, boxes, annotator="oracle")
            return {"n_labeled": len(all_ids)}

        self._set_phase("labeling")
        self.journal.record("fully_labeled", make)
        for sid in all_ids:
            s = self.samples[sid]
            if s.status == UNLABELED:
                s.transition(KEY_PENDING)
                s.transition(LABELED_HUMAN)

        self._set_phase("training", iteration=0)
        trained = self._step_train(0)
        self._history_row(trained, None, 0)
        return self._finish(iterations=0, reason="full_supervision")

    def _run_cotraining(self) -> RunResult:
        cfg = self.config
        self._set_phase("descriptors")
        descriptors = self._step_descriptors()
        self._set_phase("clustering")
        model = self._step_cluster(descriptors)
        self._set_phase("key_selection")
        keyset = self._step_select_keys(model)
        self._set_phase("annotation_gate")
        self._step_annotation_gate(keyset)

        self._set_phase("training", iteration=0)
        trained = self._step_train(0)
        self._history_row(trained, None, 0)

        initial_pool = len(self._unlabeled_ids())
        if cfg.mode == "initial_only" or cfg.max_iterations == 0:
            return self._finish(iterations=0, reason="initial_only")
        if initial_pool == 0:
            return self._finish(iterations=0, reason="empty_pool")

        cluster_of = {sid: s.cluster_id for sid, s in self.samples.items()}
        reason = "max_iterations"
        iteration = 0
        for iteration in range(1, cfg.max_iterations + 1):
            self._set_phase("predicting", iteration=iteration)
            remaining = self._unlabeled_ids()
            pred_path = self.config.work_dir / f"predictions_{iteration:02d}.jsonl"

            def make_predict() -> dict:
                preds = self.detector.predict(remaining)
                write_predictions(preds, pred_path)
                return {"iteration": iteration, "n": len(remaining), "path": pred_path.name}

            self.journal.record("predicted", make_predict)
            preds = read_predictions(pred_path)

            self._set_phase("scoring", iteration=iteration)
            scores_path = self.config.work_dir / f"scores_{iteration:02d}.json"
            pairs_by_sid: Dict[str, list] = {}

            def make_score() -> dict:
                scores: Dict[str, int] = {}
                for sid in remaining:
                    d1, d2 = preds[sid]
                    scores[sid], pairs_by_sid[sid] = score_sample(d1, d2, cfg.scoring)
                sigma = cluster_thresholds(scores, cluster_of, cfg.scoring.beta)
                promoted = confident_samples(scores, cluster_of, sigma)
                table = IterationScores(
                    iteration=iteration,
                    scores=scores,
                    thresholds=sigma,
                    promoted=tuple(promoted),
                )
                save_scores(table, scores_path)
                return {
                    "iteration": iteration,
                    "n_scored": len(scores),
                    "n_added": len(promoted),
                    "path": scores_path.name,
                }

            self.journal.record("scored", make_score)
            table = load_scores(scores_path)

            self._set_phase("updating_pool", iteration=iteration)

            def make_update() -> dict:
                committed: Dict[str, List[BoundingBox]] = {}
                for sid in table.promoted:
                    if sid not in pairs_by_sid:
                        d1, d2 = preds[sid]
                        _, pairs_by_sid[sid] = score_sample(d1, d2, cfg.scoring)
                    boxes = merged_boxes(pairs_by_sid[sid], cfg.scoring)
                    committed[sid] = boxes
                    self._commit_labels(sid, boxes, annotator="self_labeling")
                precision, recall = self._pseudo_quality(committed)
                return {
                    "iteration": iteration,
                    "added": len(table.promoted),
                    "remaining": len(remaining) - len(table.promoted),
                    "precision": precision,
                    "recall": recall,
                }

            pool_ev, _ = self.journal.record("pool_updated", make_update)
            for sid in table.promoted:
                if self.samples[sid].status == UNLABELED:
                    self.samples[sid].transition(LABELED_SELF)

            added = pool_ev["added"]
            remaining_after = pool_ev["remaining"]

            trained_ev = None
            if added > 0:
                self._set_phase("training", iteration=iteration)
                trained_ev = self._step_train(iteration)
            self._history_row(trained_ev, pool_ev, iteration)

            terminate, term_reason = should_terminate(
                remaining_after, initial_pool, added, cfg.scoring
            )
            self.journal.record(
                "iteration_done",
                lambda: {
                    "iteration": iteration,
                    "added": added,
                    "remaining": remaining_after,
                    "terminate": terminate,
                    "reason": term_reason,
                },
            )
            if terminate:
                reason = term_reason
                break

        return self._finish(iterations=iteration, reason=reason)

    def _finish(self, iterations: int, reason: str) -> RunResult:
        counts = self.pool_counts()
        self.journal.record(
            "finished",
            lambda: {"iterations": iterations, "reason": reason, "pools": counts},
        )

        final_eval = None
        if self.test_manifest is not None:
            eval_path = self.config.work_dir / "eval.json"

            def make_eval() -> dict:
                test_ids = [e.sample_id for e in self.test_manifest.entries]
                preds = self.detector.predict(test_ids)
                result = evaluate_heads(
                    {sid: preds[sid][0] for sid in test_ids},
                    {sid: preds[sid][1] for sid in test_ids},
                    self._test_gt,
                )
                save_evaluation(result, eval_path)
                return {
                    "map_d1": result.head1.map,
                    "map_d2": result.head2.map,
                    "headline_map": result.headline_map,
                    "better_head": result.better_head,
                    "path": eval_path.name,
                }

            ev, _ = self.journal.record("evaluated", make_eval)
            final_eval = {k: ev[k] for k in ("map_d1", "map_d2", "headline_map", "better_head")}

        return RunResult(
            work_dir=self.config.work_dir,
            iterations=iterations,
            reason=reason,
            counts=counts,
            history=self.history,
            final_eval=final_eval,
        )

    def _step_report(self) -> None:
        report_dir = self.config.work_dir / "report"

        def make() -> dict:
            gram_matrix = None
            ids = self._feature_ids()
            if ids:
                try:
                    total = None
                    for sid in ids:
                        f1, f2 = self.detector.report_features(sid)
                        diff = gram_difference(f1, f2, self.config.spatial_normalize)
                        total = diff if total is None else total + diff
                    gram_matrix = total / len(ids)
                except FeatureUnsupported:
                    gram_matrix = None
            size_stats = None
            labeled = [
                e
                for e in self.pool_manifest.entries
                if self.samples[e.sample_id].status in (LABELED_HUMAN, LABELED_SELF)
            ]
            if labeled:
                size_stats = dataset_stats(
                    Manifest("train", tuple(labeled)), self.store
                )
            paths = report.render_run_report(
                report_dir, self.history, gram_matrix, size_stats
            )
            return {"paths": [p.name for p in paths]}

        self.journal.record("reported", make)


def run(config: RunConfig) -> RunResult:
    engine = Engine(config)
    try:
        return engine.run()
    finally:
        engine.journal.close()


def run_modes(config: RunConfig) -> dict:
    """Run the three strategies side by side and compare final mAPs.

    Returns {"it": ..., "gram_sld": ..., "fs": ..., "diff": fs - gram_sld}
    and writes modes.csv, modes.json, and a comparison figure under the
    work dir.
    """
    if config.test_manifest is None:
        raise RunConfigError("run_modes needs a test manifest to compare mAPs")
    out: Dict[str, float] = {}
    labels = {"it": "initial_only", "gram_sld": "gram_sld", "fs": "full_supervision"}
    for short, mode in labels.items():
        sub = replace(config, mode=mode, work_dir=config.work_dir / "modes" / short)
        result = run(sub)
        if result.headline_map is None:
            raise RunConfigError(f"mode {short} produced no evaluation")
        out[short] = result.headline_map
    out["diff"] = out["fs"] - out["gram_sld"]

    config.work_dir.mkdir(parents=True, exist_ok=True)
    (config.work_dir / "modes.json").write_text(
        json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    with open(config.work_dir / "modes.csv", "w", encoding="utf-8") as fh:
        fh.write("mode,map\n")
        for short in ("it", "gram_sld", "fs"):
            fh.write(f"{short},{out[short]!r}\n")
    report.plot_mode_comparison(
        {k: out[k] for k in ("it", "gram_sld", "fs")},
        config.work_dir / "modes_map.png",
    )
    return out
