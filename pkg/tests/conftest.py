"""Shared fixtures: synthetic corpora, run-config builders, result reporting.

Corpora are generated once per session into pytest's tmp factory; every
test that needs images, manifests, or hidden ground truth draws from one
of these instead of shipping binary fixtures.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import pytest

from gram_sld.orchestrator import RunConfig
from gram_sld.self_labeling import ScoringConfig
from gram_sld.key_selection import SelectionConfig
from gram_sld.simulate import SimulationConfig, simulate


@dataclass(frozen=True)
class Corpus:
    root: Path
    unlabeled_manifest: Path
    test_manifest: Path
    gt_dir: Path
    scenario: Path


def _build_corpus(tmp_path_factory, name: str, **kwargs) -> Corpus:
    root = tmp_path_factory.mktemp(name)
    result = simulate(root, SimulationConfig(**kwargs))
    return Corpus(
        root=root,
        unlabeled_manifest=result.unlabeled_manifest,
        test_manifest=result.test_manifest,
        gt_dir=result.gt_dir,
        scenario=result.scenario_path,
    )


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory) -> Corpus:
    """60 unlabeled + 20 test samples, 3 scene types, 3 classes."""
    return _build_corpus(
        tmp_path_factory,
        "mini_corpus",
        n_unlabeled=60,
        n_test=20,
        n_scene_types=3,
        n_classes=3,
        seed=7,
    )


@pytest.fixture(scope="session")
def service_corpus(tmp_path_factory) -> Corpus:
    """40 unlabeled + 12 test samples; with force_k=2 and ratio 0.1 the
    key selection lands on exactly 5 key samples, the count the gate
    tests are written against."""
    return _build_corpus(
        tmp_path_factory,
        "service_corpus",
        n_unlabeled=40,
        n_test=12,
        n_scene_types=2,
        n_classes=3,
        seed=5,
    )


@pytest.fixture(scope="session")
def acceptance_corpus(tmp_path_factory) -> Corpus:
    """The 600-sample, 6-class scenario all acceptance runs share."""
    return _build_corpus(
        tmp_path_factory,
        "acceptance_corpus",
        n_unlabeled=600,
        n_test=200,
        n_scene_types=4,
        n_classes=6,
        seed=1234,
    )


def make_run_config(corpus: Corpus, work_dir: Path, **overrides) -> RunConfig:
    """RunConfig against a corpus with sensible small-run defaults.

    Keyword overrides map onto the config fields; ``ratio``, ``beta``,
    ``delta_acc``, ``delta_iou``, and ``rho`` are accepted as shorthands
    for the nested selection/scoring/detector settings.
    """
    selection = SelectionConfig(ratio=overrides.pop("ratio", 0.1))
    scoring = ScoringConfig(
        delta_acc=overrides.pop("delta_acc", 0.9),
        delta_iou=overrides.pop("delta_iou", 0.75),
        beta=overrides.pop("beta", 1.0),
    )
    detector = overrides.pop("detector", {"kind": "synthetic"})
    if "rho" in overrides:
        detector = {**detector, "rho": overrides.pop("rho")}
    seed = overrides.pop("seed", 7)
    if detector.get("kind") == "synthetic":
        detector.setdefault("seed", seed)
    kwargs = dict(
        work_dir=work_dir,
        unlabeled_manifest=corpus.unlabeled_manifest,
        test_manifest=corpus.test_manifest,
        ground_truth_dir=corpus.gt_dir,
        scenario=corpus.scenario,
        k_min=2,
        k_max=8,
        selection=selection,
        scoring=scoring,
        detector=detector,
        annotation_mode="oracle",
        max_iterations=8,
        seed=seed,
    )
    kwargs.update(overrides)
    return RunConfig(**kwargs)


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion at the end of the run."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py" not in rep.nodeid:
                continue
            if getattr(rep, "when", "call") != "call" and outcome != "error":
                continue
            m = re.search(r"test_c(\d{2})_(\w+)", rep.nodeid)
            if m:
                rows.append((int(m.group(1)), m.group(2), outcome == "passed"))
    for rep in terminalreporter.stats.get("skipped", []):
        if "test_acceptance.py" not in rep.nodeid:
            continue
        m = re.search(r"test_c(\d{2})_(\w+)", rep.nodeid)
        if m:
            rows.append((int(m.group(1)), m.group(2), None))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num, label, ok in sorted(set(rows)):
        verdict = "PASS" if ok else ("SKIP" if ok is None else "FAIL")
        terminalreporter.write_line(
            f"criterion {num:02d} {verdict}  {label.replace('_', ' ')}"
        )
