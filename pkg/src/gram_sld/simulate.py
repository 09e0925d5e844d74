"""Synthetic dataset generator for end-to-end pipeline runs.

Produces a small instance-detection world no network access can spoil:
each image is a noisy scene whose background hue marks its scene type
(so unsupervised clustering on color histograms has real structure to
find), with one to five class-colored rectangles as objects. Hidden
ground truth goes to ``gt/`` as ordinary label files; manifests and a
``scenario.json`` summary tie the corpus together. Everything is a pure
function of the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from matplotlib.colors import hsv_to_rgb
from PIL import Image

from .data_model import (
    BoundingBox,
    LabelSet,
    Manifest,
    ManifestEntry,
    write_manifest,
)

CLASS_NAMES = ("alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel")

CLASS_COLORS = (
    (208, 62, 52),
    (233, 196, 72),
    (61, 170, 80),
    (70, 88, 210),
    (150, 60, 180),
    (90, 200, 200),
    (240, 140, 40),
    (120, 120, 120),
)

# Background hues (degrees) sit squarely inside distinct bins of the
# downstream hue histogram, one per scene type.
SCENE_HUES = (10.0, 60.0, 120.0, 175.0, 235.0, 282.0, 320.0, 350.0)


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    n_unlabeled: int = 600
    n_test: int = 200
    width: int = 96
    height: int = 72
    n_scene_types: int = 4
    n_classes: int = 4
    min_boxes: int = 1
    max_boxes: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_scene_types <= len(SCENE_HUES):
            raise SimulationError(f"n_scene_types must be in [1, {len(SCENE_HUES)}]")
        if not 1 <= self.n_classes <= len(CLASS_NAMES):
            raise SimulationError(f"n_classes must be in [1, {len(CLASS_NAMES)}]")
        if not 1 <= self.min_boxes <= self.max_boxes:
            raise SimulationError("need 1 <= min_boxes <= max_boxes")
        if self.width < 48 or self.height < 48 // 2:
            raise SimulationError("image too small for object placement")

    def to_json(self) -> dict:
        return {
            "n_unlabeled": self.n_unlabeled,
            "n_test": self.n_test,
            "width": self.width,
            "height": self.height,
            "n_scene_types": self.n_scene_types,
            "n_classes": self.n_classes,
            "min_boxes": self.min_boxes,
            "max_boxes": self.max_boxes,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SimulationConfig":
        return cls(**obj)


def _render_image(
    rng: np.random.Generator,
    cfg: SimulationConfig,
    scene: int,
    boxes: List[tuple[int, int, int, int, int]],
) -> np.ndarray:
    """Scene background plus filled class rectangles, uint8 RGB."""
    h, w = cfg.height, cfg.width
    hue = SCENE_HUES[scene] / 360.0
    noise_amp = 0.01 + 0.11 * rng.random()
    sat = 0.45 + 0.2 * rng.random()
    v_top = 0.35 + 0.1 * rng.random()
    v_bot = 0.7 + 0.15 * rng.random()
    value = np.linspace(v_top, v_bot, h)[:, None] + noise_amp * rng.standard_normal((h, w))
    hsv = np.empty((h, w, 3))
    hsv[..., 0] = hue + 0.01 * rng.standard_normal((h, w))
    hsv[..., 1] = sat
    hsv[..., 2] = value
    hsv = np.clip(hsv, 0.0, 1.0)
    rgb = hsv_to_rgb(hsv) * 255.0
    for x0, y0, x1, y1, cls_idx in boxes:
        color = np.array(CLASS_COLORS[cls_idx], dtype=np.float64)
        patch = color[None, None, :] + 6.0 * rng.standard_normal((y1 - y0, x1 - x0, 3))
        rgb[y0:y1, x0:x1, :] = patch
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def _place_boxes(
    rng: np.random.Generator, cfg: SimulationConfig
) -> List[tuple[int, int, int, int, int]]:
    n = int(rng.integers(cfg.min_boxes, cfg.max_boxes + 1))
    out = []
    for _ in range(n):
        bw = int(rng.integers(10, min(31, cfg.width // 3 + 1)))
        bh = int(rng.integers(8, min(25, cfg.height // 2 + 1)))
        x0 = int(rng.integers(0, cfg.width - bw + 1))
        y0 = int(rng.integers(0, cfg.height - bh + 1))
        cls_idx = int(rng.integers(0, cfg.n_classes))
        out.append((x0, y0, x0 + bw, y0 + bh, cls_idx))
    return out


@dataclass
class SimulationResult:
    out_dir: Path
    unlabeled_manifest: Path
    test_manifest: Path
    gt_dir: Path
    scenario_path: Path
    summary: dict = field(default_factory=dict)


def simulate(out_dir: str | Path, cfg: SimulationConfig) -> SimulationResult:
    """Write the full corpus under *out_dir*; returns the key paths."""
    out = Path(out_dir)
    images = out / "images"
    gt_dir = out / "gt"
    images.mkdir(parents=True, exist_ok=True)
    gt_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)

    scenes: Dict[str, str] = {}
    dims: Dict[str, List[int]] = {}
    entries_unlabeled: List[ManifestEntry] = []
    entries_test: List[ManifestEntry] = []
    box_total = 0

    specs = [("u", i, False) for i in range(cfg.n_unlabeled)] + [
        ("t", i, True) for i in range(cfg.n_test)
    ]
    for prefix, i, is_test in specs:
        sid = f"{prefix}{i:04d}"
        scene = int(rng.integers(0, cfg.n_scene_types))
        boxes = _place_boxes(rng, cfg)
        arr = _render_image(rng, cfg, scene, boxes)
        img_rel = f"images/{sid}.png"
        Image.fromarray(arr, "RGB").save(out / img_rel)
        gt_boxes = tuple(
            BoundingBox(
                x_min=float(x0),
                y_min=float(y0),
                x_max=float(x1),
                y_max=float(y1),
                class_name=CLASS_NAMES[cls_idx],
                confidence=1.0,
                source="hidden_gt",
            )
            for x0, y0, x1, y1, cls_idx in boxes
        )
        gt_rel = f"gt/{sid}.json"
        label_set = LabelSet(sample_id=sid, boxes=gt_boxes, revision=1, annotator="simulator")
        (out / gt_rel).write_text(
            json.dumps(label_set.to_json(), sort_keys=True) + "\n", encoding="utf-8"
        )
        scenes[sid] = f"scene_{scene}"
        dims[sid] = [cfg.width, cfg.height]
        box_total += len(boxes)
        if is_test:
            entries_test.append(ManifestEntry(sid, img_rel, gt_rel))
        else:
            entries_unlabeled.append(ManifestEntry(sid, img_rel, None))

    unlabeled_manifest = out / "unlabeled.jsonl"
    test_manifest = out / "test.jsonl"
    write_manifest(Manifest("unlabeled", tuple(entries_unlabeled)), unlabeled_manifest)
    write_manifest(Manifest("test", tuple(entries_test)), test_manifest)

    scenario = {
        "config": cfg.to_json(),
        "classes": list(CLASS_NAMES[: cfg.n_classes]),
        "scene_types": [f"scene_{i}" for i in range(cfg.n_scene_types)],
        "scenes": scenes,
        "dims": dims,
        "n_boxes": box_total,
    }
    scenario_path = out / "scenario.json"
    scenario_path.write_text(
        json.dumps(scenario, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return SimulationResult(
        out_dir=out,
        unlabeled_manifest=unlabeled_manifest,
        test_manifest=test_manifest,
        gt_dir=gt_dir,
        scenario_path=scenario_path,
        summary={
            "n_unlabeled": cfg.n_unlabeled,
            "n_test": cfg.n_test,
            "n_boxes": box_total,
            "classes": list(CLASS_NAMES[: cfg.n_classes]),
        },
    )


def load_scenario(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def load_ground_truth(gt_dir: str | Path) -> Dict[str, List[BoundingBox]]:
    """All hidden-GT label files in a directory, keyed by sample id."""
    out: Dict[str, List[BoundingBox]] = {}
    for p in sorted(Path(gt_dir).glob("*.json")):
        ls = LabelSet.from_json(json.loads(p.read_text(encoding="utf-8")))
        out[ls.sample_id] = list(ls.boxes)
    return out
