"""Command-line entry points for the co-training pipeline.

Each subcommand takes a JSON config via --config plus targeted override
flags. Exit codes: 0 on success, 2 on any validation problem (bad
config, malformed input files, blocked annotation gate), 3 when a
detector plugin fails.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import clustering, features, key_selection, report
from .clustering import ClusteringError
from .data_model import DataModelError, LabelSet, load_manifest
from .detector import DetectorError, read_predictions
from .evaluation import evaluate_heads, save_evaluation
from .gram import GramError, gram_diff_export, read_feature_csv
from .journal import JournalError
from .key_selection import SelectionError
from .orchestrator import (
    AnnotationPending,
    RunConfigError,
    load_run_config,
    run,
    run_modes,
)
from .self_labeling import (
    IterationScores,
    ScoringError,
    cluster_thresholds,
    confident_samples,
    save_scores,
    score_sample,
)
from .simulate import SimulationConfig, SimulationError, simulate

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PLUGIN = 3

_VALIDATION_ERRORS = (
    RunConfigError,
    DataModelError,
    ClusteringError,
    SelectionError,
    ScoringError,
    GramError,
    SimulationError,
    JournalError,
    AnnotationPending,
    FileNotFoundError,
    json.JSONDecodeError,
    ValueError,
)


def _overrides(args: argparse.Namespace) -> dict:
    keys = ("ratio", "beta", "force_k", "seed", "mode", "work_dir", "max_iterations", "rho")
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


def _descriptors_for(config, manifest):
    """Compute or reuse the descriptor cache under the work dir."""
    cache = config.work_dir / "descriptors.csv"
    if cache.exists():
        rows = features.read_descriptor_cache(cache)
        if all(sid in rows for sid in manifest.ids()):
            return rows
    rows = {e.sample_id: features.describe_image(e.image_path) for e in manifest.entries}
    config.work_dir.mkdir(parents=True, exist_ok=True)
    features.write_descriptor_cache(cache, rows)
    return rows


def _cluster_model(config, manifest, rows):
    ids = manifest.ids()
    histograms = [rows[sid][0] for sid in ids]
    dendrogram = clustering.agglomerate(histograms)
    k_max = min(config.k_max, len(ids) - 1)
    return clustering.select_k(
        dendrogram, histograms, config.k_min, k_max, ids=ids, force_k=config.force_k
    )


def cmd_cluster(args) -> int:
    config = load_run_config(args.config, _overrides(args))
    manifest = load_manifest(config.unlabeled_manifest)
    rows = _descriptors_for(config, manifest)
    model = _cluster_model(config, manifest, rows)
    out = config.work_dir / "clusters.json"
    clustering.save_cluster_model(model, out)
    print(f"clustered {len(manifest)} samples into k={model.k} -> {out}")
    return EXIT_OK


def cmd_select_keys(args) -> int:
    config = load_run_config(args.config, _overrides(args))
    manifest = load_manifest(config.unlabeled_manifest)
    rows = _descriptors_for(config, manifest)
    model_path = config.work_dir / "clusters.json"
    if model_path.exists():
        model = clustering.load_cluster_model(model_path)
    else:
        model = _cluster_model(config, manifest, rows)
        clustering.save_cluster_model(model, model_path)
    entropies = {sid: rows[sid][1] for sid in manifest.ids()}
    keyset = key_selection.select_keys(model, entropies, config.selection)
    out = config.work_dir / "keyset.json"
    key_selection.save_keyset(keyset, out)
    print(f"selected {keyset.total} key samples across {model.k} clusters -> {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = load_run_config(args.config, _overrides(args))
    result = run(config)
    print(f"run finished after {result.iterations} iterations ({result.reason})")
    for status, count in sorted(result.counts.items()):
        print(f"  {status}: {count}")
    if result.headline_map is not None:
        print(f"  headline mAP: {result.headline_map:.4f}")
    print(f"  journal: {result.work_dir / 'journal.jsonl'}")
    print(f"  report: {result.work_dir / 'report'}")
    return EXIT_OK


def cmd_run_modes(args) -> int:
    config = load_run_config(args.config, _overrides(args))
    out = run_modes(config)
    for mode in ("it", "gram_sld", "fs"):
        print(f"  {mode}: mAP {out[mode]:.4f}")
    print(f"  diff (fs - gram_sld): {out['diff']:.4f}")
    print(f"  comparison: {config.work_dir / 'modes.csv'}")
    return EXIT_OK


def cmd_score(args) -> int:
    config = load_run_config(args.config, _overrides(args))
    preds = read_predictions(args.predictions)
    model_path = config.work_dir / "clusters.json"
    if not model_path.exists():
        raise RunConfigError(f"no clusters.json in {config.work_dir}; run `cluster` first")
    model = clustering.load_cluster_model(model_path)
    cluster_of = model.assignments
    missing = [sid for sid in preds if sid not in cluster_of]
    if missing:
        raise RunConfigError(f"predictions include unclustered samples: {missing[:5]}")
    scores = {}
    for sid in sorted(preds):
        d1, d2 = preds[sid]
        scores[sid], _ = score_sample(d1, d2, config.scoring)
    sigma = cluster_thresholds(scores, cluster_of, config.scoring.beta)
    promoted = confident_samples(scores, cluster_of, sigma)
    table = IterationScores(
        iteration=args.iteration, scores=scores, thresholds=sigma, promoted=tuple(promoted)
    )
    out = Path(args.out) if args.out else config.work_dir / "scores.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scores(table, out)
    print(f"scored {len(scores)} samples, {len(promoted)} above threshold -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = load_run_config(args.config, _overrides(args))
    if config.test_manifest is None:
        raise RunConfigError("eval needs data.test_manifest in the config")
    manifest = load_manifest(config.test_manifest)
    preds = read_predictions(args.predictions)
    missing = [sid for sid in manifest.ids() if sid not in preds]
    if missing:
        raise RunConfigError(f"predictions missing test samples: {missing[:5]}")
    gt = {}
    for e in manifest.entries:
        if e.label_path is None:
            raise RunConfigError(f"test entry {e.sample_id} has no label file")
        ls = LabelSet.from_json(json.loads(Path(e.label_path).read_text(encoding="utf-8")))
        gt[e.sample_id] = list(ls.boxes)
    result = evaluate_heads(
        {sid: preds[sid][0] for sid in manifest.ids()},
        {sid: preds[sid][1] for sid in manifest.ids()},
        gt,
    )
    out = Path(args.out) if args.out else config.work_dir / "eval.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_evaluation(result, out)
    print(
        f"mAP d1 {result.head1.map:.4f}, d2 {result.head2.map:.4f}, "
        f"headline d{result.better_head} -> {out}"
    )
    return EXIT_OK


def cmd_gram_diff(args) -> int:
    spatial_normalize = True
    if args.config:
        config = load_run_config(args.config, _overrides(args))
        out_base = config.work_dir
        spatial_normalize = config.spatial_normalize
    else:
        out_base = Path(args.d1).resolve().parent
    out_base.mkdir(parents=True, exist_ok=True)
    f1 = read_feature_csv(args.d1)
    f2 = read_feature_csv(args.d2)
    out_csv = out_base / "gram_diff.csv"
    out_pgm = out_base / "gram_diff.pgm"
    diff = gram_diff_export(f1, f2, out_csv, out_pgm, spatial_normalize)
    figure = report.plot_gram_diff(diff, out_base / "gram_diff.png")
    print(f"gram diff {diff.shape[0]}x{diff.shape[1]}, max {diff.max():.6g}")
    for p in (out_csv, out_pgm, figure):
        print(f"  {p}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    path = Path(args.config)
    raw = json.loads(path.read_text(encoding="utf-8"))
    if "out_dir" not in raw:
        raise SimulationError("simulate config needs out_dir")
    out_dir = Path(raw["out_dir"])
    if not out_dir.is_absolute():
        out_dir = (path.parent / out_dir).resolve()
    cfg = SimulationConfig.from_json(raw.get("simulation", {}))
    if getattr(args, "seed", None) is not None:
        cfg = SimulationConfig.from_json({**cfg.to_json(), "seed": args.seed})
    result = simulate(out_dir, cfg)
    print(
        f"simulated {cfg.n_unlabeled} unlabeled + {cfg.n_test} test samples -> {out_dir}"
    )
    print(f"  unlabeled manifest: {result.unlabeled_manifest}")
    print(f"  test manifest: {result.test_manifest}")
    print(f"  scenario: {result.scenario_path}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import serve

    config = load_run_config(args.config, _overrides(args))
    serve(config, port=args.port, host=args.host)
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser, *, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="path to the JSON config")
    p.add_argument("--ratio", type=float, default=None, help="key-sample ratio override")
    p.add_argument("--beta", type=float, default=None, help="threshold scale override")
    p.add_argument("--force-k", dest="force_k", type=int, default=None, help="pin the cluster count")
    p.add_argument("--seed", type=int, default=None, help="seed override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gram-sld",
        description="Co-training object-detection pipeline with gram-based head independence",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="extract descriptors and cluster the unlabeled pool")
    _add_common(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("select-keys", help="pick high-entropy key samples per cluster")
    _add_common(p)
    p.set_defaults(func=cmd_select_keys)

    p = sub.add_parser("run", help="execute the full co-training run")
    _add_common(p)
    p.add_argument("--mode", choices=("gram_sld", "initial_only", "full_supervision"), default=None)
    p.add_argument("--work-dir", dest="work_dir", default=None, help="work dir override")
    p.add_argument("--max-iterations", dest="max_iterations", type=int, default=None)
    p.add_argument("--rho", type=float, default=None, help="synthetic head-correlation override")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("run-modes", help="compare initial-only, co-training, and fully supervised")
    _add_common(p)
    p.add_argument("--work-dir", dest="work_dir", default=None, help="work dir override")
    p.add_argument("--rho", type=float, default=None, help="synthetic head-correlation override")
    p.set_defaults(func=cmd_run_modes)

    p = sub.add_parser("score", help="score a prediction file against cluster thresholds")
    _add_common(p)
    p.add_argument("--predictions", required=True, help="prediction JSONL from the detector")
    p.add_argument("--iteration", type=int, default=0)
    p.add_argument("--out", default=None, help="output scores.json path")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="evaluate a prediction file on the test manifest")
    _add_common(p)
    p.add_argument("--predictions", required=True, help="prediction JSONL from the detector")
    p.add_argument("--out", default=None, help="output eval.json path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gram-diff", help="render the gram difference of two feature CSVs")
    _add_common(p, config_required=False)
    p.add_argument("--d1", required=True, help="first head's feature CSV")
    p.add_argument("--d2", required=True, help="second head's feature CSV")
    p.set_defaults(func=cmd_gram_diff)

    p = sub.add_parser("simulate", help="generate a synthetic labeled corpus")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="run the annotation service plus the engine")
    _add_common(p)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DetectorError as exc:
        print(f"error: detector plugin failed: {exc}", file=sys.stderr)
        return EXIT_PLUGIN
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
