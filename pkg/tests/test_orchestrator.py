"""End-to-end pipeline runs: artifacts, determinism, resume, and modes.

Byte identity of the journal is the determinism oracle: two runs from the
same config and corpus must produce identical journal files, and resuming
a truncated journal in place must converge to the same bytes as the
uninterrupted run.
"""

import json
import shutil

import pytest
from conftest import make_run_config

from gram_sld import orchestrator
from gram_sld.data_model import LabelStore
from gram_sld.journal import JournalError, read_events
from gram_sld.orchestrator import (
    AnnotationPending,
    RunConfig,
    RunConfigError,
    load_run_config,
    run_modes,
)


@pytest.fixture(scope="module")
def smoke_run(mini_corpus, tmp_path_factory):
    """One completed co-training run shared by the artifact tests."""
    work_dir = tmp_path_factory.mktemp("smoke") / "run"
    config = make_run_config(mini_corpus, work_dir)
    result = orchestrator.run(config)
    return config, result


class TestSmokeRun:
    def test_terminates_with_a_reason(self, smoke_run):
        _, result = smoke_run
        assert result.reason in {"stalled", "exhausted", "max_iterations"}
        assert 1 <= result.iterations <= 8

    def test_artifacts_on_disk(self, smoke_run):
        config, result = smoke_run
        for name in ("journal.jsonl", "descriptors.csv", "clusters.json",
                     "keyset.json", "eval.json", "predictions_01.jsonl",
                     "scores_01.json"):
            assert (config.work_dir / name).exists(), name
        report_dir = config.work_dir / "report"
        assert (report_dir / "metrics.csv").exists()
        assert (report_dir / "map_curve.png").exists()
        assert (report_dir / "gram_diff.png").exists()
        assert (report_dir / "size_distribution.png").exists()

    def test_metrics_csv_matches_history(self, smoke_run):
        config, result = smoke_run
        lines = (config.work_dir / "report" / "metrics.csv").read_text().splitlines()
        header = lines[0].split(",")
        assert "iteration" in header and "headline_map" in header
        assert len(lines) - 1 == len(result.history)

    def test_history_shape(self, smoke_run):
        _, result = smoke_run
        first = result.history[0]
        assert first["iteration"] == 0
        assert first["n_labeled"] > 0
        assert first["alpha"] > 0.0
        assert first["gram_loss"] is not None
        for row in result.history[1:]:
            assert {"added", "remaining", "iteration"} <= set(row)

    def test_pool_accounting(self, smoke_run, mini_corpus):
        config, result = smoke_run
        keyset = json.loads((config.work_dir / "keyset.json").read_text())
        n_keys = sum(len(v) for v in keyset["clusters"].values())
        assert result.counts["labeled_human"] == n_keys
        assert sum(result.counts.values()) == 60

    def test_key_labels_are_oracle_human(self, smoke_run):
        config, _ = smoke_run
        keyset = json.loads((config.work_dir / "keyset.json").read_text())
        store = LabelStore(config.work_dir / "labels")
        some_key = next(iter(keyset["clusters"].values()))[0]
        labels = store.read(some_key)
        assert labels.annotator == "oracle"
        assert labels.revision >= 1
        assert all(b.source == "human" for b in labels.boxes)

    def test_final_eval_reported(self, smoke_run):
        _, result = smoke_run
        assert result.final_eval is not None
        assert result.headline_map == pytest.approx(
            max(result.final_eval["map_d1"], result.final_eval["map_d2"])
        )
        assert 0.0 < result.headline_map <= 1.0

    def test_journal_is_replayable_record(self, smoke_run):
        config, _ = smoke_run
        events = read_events(config.work_dir / "journal.jsonl")
        steps = [e["event"] for e in events if "step" in e]
        assert steps[0] == "run_started"
        assert steps[1:5] == ["descriptors", "clustered", "keys_selected",
                              "annotation_complete"]
        assert steps[-1] == "reported"
        assert "evaluated" in steps


class TestDeterminismAndResume:
    def test_identical_config_identical_journal(self, mini_corpus, tmp_path):
        journals = []
        for name in ("a", "b"):
            config = make_run_config(mini_corpus, tmp_path / name)
            orchestrator.run(config)
            raw = (tmp_path / name / "journal.jsonl").read_bytes()
            # The recorded config embeds the work dir; normalize that one
            # difference before comparing.
            journals.append(raw.replace(str(config.work_dir).encode(), b"WORK"))
        assert journals[0] == journals[1]

    def test_wipe_and_rerun_byte_identical(self, mini_corpus, tmp_path):
        work_dir = tmp_path / "run"
        config = make_run_config(mini_corpus, work_dir)
        orchestrator.run(config)
        reference = (work_dir / "journal.jsonl").read_bytes()
        shutil.rmtree(work_dir)
        orchestrator.run(config)
        assert (work_dir / "journal.jsonl").read_bytes() == reference

    def test_rerun_in_place_replays_everything(self, mini_corpus, tmp_path):
        work_dir = tmp_path / "run"
        config = make_run_config(mini_corpus, work_dir)
        first = orchestrator.run(config)
        reference = (work_dir / "journal.jsonl").read_bytes()
        second = orchestrator.run(config)
        assert (work_dir / "journal.jsonl").read_bytes() == reference
        assert second.iterations == first.iterations
        assert second.reason == first.reason
        assert second.headline_map == first.headline_map
        assert second.history == first.history

    @pytest.mark.parametrize("keep_fraction", [0.2, 0.5, 0.8])
    def test_truncated_journal_resumes_to_same_bytes(
        self, mini_corpus, tmp_path, keep_fraction
    ):
        work_dir = tmp_path / "run"
        config = make_run_config(mini_corpus, work_dir)
        orchestrator.run(config)
        journal_path = work_dir / "journal.jsonl"
        reference = journal_path.read_bytes()
        lines = reference.decode().splitlines(keepends=True)
        cut = max(1, int(len(lines) * keep_fraction))
        journal_path.write_text("".join(lines[:cut]))
        orchestrator.run(config)
        assert journal_path.read_bytes() == reference

    def test_different_config_same_dir_rejected(self, mini_corpus, tmp_path):
        work_dir = tmp_path / "run"
        orchestrator.run(make_run_config(mini_corpus, work_dir))
        other = make_run_config(mini_corpus, work_dir, ratio=0.2)
        with pytest.raises(JournalError, match="different config"):
            orchestrator.run(other)


class TestModes:
    def test_initial_only_stops_after_first_training(self, mini_corpus, tmp_path):
        config = make_run_config(mini_corpus, tmp_path / "it", mode="initial_only")
        result = orchestrator.run(config)
        assert result.iterations == 0
        assert result.reason == "initial_only"
        assert not list(config.work_dir.glob("scores_*.json"))
        assert result.counts["labeled_self"] == 0

    def test_full_supervision_labels_everything(self, mini_corpus, tmp_path):
        config = make_run_config(mini_corpus, tmp_path / "fs", mode="full_supervision")
        result = orchestrator.run(config)
        assert result.reason == "full_supervision"
        assert result.counts["labeled_human"] == 60
        assert result.counts["unlabeled"] == 0

    def test_run_modes_compares_all_three(self, mini_corpus, tmp_path):
        config = make_run_config(mini_corpus, tmp_path / "cmp")
        out = run_modes(config)
        assert set(out) == {"it", "gram_sld", "fs", "diff"}
        assert out["diff"] == pytest.approx(out["fs"] - out["gram_sld"])
        assert out["it"] <= out["gram_sld"] <= out["fs"]
        for name in ("modes.json", "modes.csv", "modes_map.png"):
            assert (config.work_dir / name).exists()
        for sub in ("it", "gram_sld", "fs"):
            assert (config.work_dir / "modes" / sub / "journal.jsonl").exists()
        csv_rows = (config.work_dir / "modes.csv").read_text().splitlines()
        assert csv_rows[0] == "mode,map"
        assert [r.split(",")[0] for r in csv_rows[1:]] == ["it", "gram_sld", "fs"]

    def test_run_modes_needs_test_manifest(self, mini_corpus, tmp_path):
        config = make_run_config(
            mini_corpus, tmp_path / "cmp", test_manifest=None
        )
        with pytest.raises(RunConfigError):
            run_modes(config)


class TestAnnotationModes:
    def test_pre_labeled_missing_files_block_the_gate(self, mini_corpus, tmp_path):
        config = make_run_config(
            mini_corpus,
            tmp_path / "run",
            annotation_mode="pre_labeled",
            annotation_labels_dir=tmp_path / "empty",
        )
        (tmp_path / "empty").mkdir()
        with pytest.raises(AnnotationPending) as err:
            orchestrator.run(config)
        assert len(err.value.pending) > 0
        assert all(sid.startswith("u") for sid in err.value.pending)

    def test_pre_labeled_with_files_runs(self, mini_corpus, tmp_path):
        config = make_run_config(
            mini_corpus,
            tmp_path / "run",
            annotation_mode="pre_labeled",
            annotation_labels_dir=mini_corpus.gt_dir,
        )
        result = orchestrator.run(config)
        assert result.counts["labeled_human"] > 0
        keyset = json.loads((config.work_dir / "keyset.json").read_text())
        some_key = next(iter(keyset["clusters"].values()))[0]
        store = LabelStore(config.work_dir / "labels")
        assert store.read(some_key).annotator == "simulator"


class TestRunConfigLoading:
    def _write_config(self, tmp_path, corpus, **extra):
        payload = {
            "work_dir": "work",
            "data": {
                "unlabeled_manifest": str(corpus.unlabeled_manifest),
                "test_manifest": str(corpus.test_manifest),
                "ground_truth_dir": str(corpus.gt_dir),
                "scenario": str(corpus.scenario),
            },
            "clustering": {"k_min": 2, "k_max": 8},
            "selection": {"ratio": 0.1},
            "scoring": {"delta_acc": 0.9, "delta_iou": 0.75, "beta": 1.0},
            "detector": {"kind": "synthetic", "seed": 7},
            "seed": 7,
        }
        payload.update(extra)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(payload, indent=2))
        return path

    def test_relative_paths_resolve_against_config_dir(self, mini_corpus, tmp_path):
        path = self._write_config(tmp_path, mini_corpus)
        config = load_run_config(path)
        assert config.work_dir == (tmp_path / "work").resolve()
        assert config.unlabeled_manifest.is_absolute()

    def test_overrides_applied(self, mini_corpus, tmp_path):
        path = self._write_config(tmp_path, mini_corpus)
        config = load_run_config(
            path,
            overrides={
                "ratio": 0.25,
                "beta": 1.5,
                "force_k": 4,
                "seed": 99,
                "rho": 0.2,
                "mode": "initial_only",
                "max_iterations": 3,
                "work_dir": str(tmp_path / "elsewhere"),
            },
        )
        assert config.selection.ratio == 0.25
        assert config.scoring.beta == 1.5
        assert config.force_k == 4
        assert config.seed == 99
        # Reseeding propagates into the synthetic detector block.
        assert config.detector["seed"] == 99
        assert config.detector["rho"] == 0.2
        assert config.mode == "initial_only"
        assert config.max_iterations == 3
        assert config.work_dir == tmp_path / "elsewhere"

    def test_none_overrides_ignored(self, mini_corpus, tmp_path):
        path = self._write_config(tmp_path, mini_corpus)
        config = load_run_config(path, overrides={"ratio": None, "seed": None})
        assert config.selection.ratio == 0.1
        assert config.seed == 7

    def test_missing_file(self, tmp_path):
        with pytest.raises(RunConfigError, match="not found"):
            load_run_config(tmp_path / "nope.json")

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{oops")
        with pytest.raises(RunConfigError, match="malformed"):
            load_run_config(path)

    def test_missing_required_fields(self, mini_corpus, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"work_dir": "w", "data": {}}))
        with pytest.raises(RunConfigError, match="unlabeled_manifest"):
            load_run_config(path)
        path.write_text(
            json.dumps({"data": {"unlabeled_manifest": "u.jsonl"}})
        )
        with pytest.raises(RunConfigError, match="work_dir"):
            load_run_config(path)

    def test_bad_scoring_values_rejected(self, mini_corpus, tmp_path):
        path = self._write_config(
            tmp_path, mini_corpus, scoring={"delta_acc": 2.0}
        )
        with pytest.raises(RunConfigError):
            load_run_config(path)

    def test_runconfig_validation(self, mini_corpus, tmp_path):
        with pytest.raises(RunConfigError):
            make_run_config(mini_corpus, tmp_path / "w", mode="hybrid")
        with pytest.raises(RunConfigError):
            make_run_config(mini_corpus, tmp_path / "w", annotation_mode="robot")
        with pytest.raises(RunConfigError):
            make_run_config(mini_corpus, tmp_path / "w", max_iterations=-1)
        with pytest.raises(RunConfigError):
            make_run_config(mini_corpus, tmp_path / "w", k_min=1)
