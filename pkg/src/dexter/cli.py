"""Command-line interface: generate | train | evaluate | bench.

One experiment = one JSON config = one master seed. ``generate`` writes the
four episode datasets and a manifest carrying the fully resolved config (per
dimension scales included); ``train`` fits and calibrates the configured
detector on those files; ``evaluate`` measures a saved model against a
dataset; ``bench`` runs the detector x correlation-mode matrix from scratch
with per-cell caching.

Exit codes: 0 success, 1 validation/configuration error, 2 runtime error.
"""

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import evaluation, persistence
from .errors import ConfigError, DataError, DexterError, IncompatibleModelError
from .seeding import child_seed
from .ts_features import catalogue_hash

DATASET_FILES = {
    "train": "train.jsonl",
    "validation": "validation.jsonl",
    "test_injected": "test_injected.jsonl",
    "test_clean": "test_clean.jsonl",
}
MANIFEST_NAME = "manifest.json"


def _resolved_config_with_scales(config: persistence.RunConfig):
    """Resolve the scenario (estimate per-dimension scales when absent) and
    return (scenario_config, policy, resolved config dict)."""
    scenario_cfg = config.scenario_config()
    _, policy = evaluation.resolve_policy(scenario_cfg, config.policy_kind())
    scenario_cfg = evaluation.resolve_scales(scenario_cfg, policy, config.master_seed)
    resolved = config.resolved_dict()
    if scenario_cfg.per_dimension_scale is not None:
        resolved["scenario"] = dict(resolved["scenario"])
        resolved["scenario"]["per_dimension_scale"] = list(scenario_cfg.per_dimension_scale)
    return scenario_cfg, policy, resolved


def cmd_generate(args) -> int:
    config = persistence.load_config(args.config, seed_override=args.seed_override)
    scenario_cfg, policy, resolved = _resolved_config_with_scales(config)
    counts = config.counts()
    seed = config.master_seed

    os.makedirs(args.out, exist_ok=True)
    banks = [
        ("train", counts.num_train, False),
        ("validation", counts.num_validation, False),
        ("test", counts.num_test, True),
        ("clean_test", counts.num_clean_test, False),
    ]
    file_map = {}
    episode_counts = {}
    for bank, count, inject in banks:
        episodes = evaluation.generate_episodes(scenario_cfg, policy, bank, count, seed, inject)
        key = {"train": "train", "validation": "validation",
               "test": "test_injected", "clean_test": "test_clean"}[bank]
        persistence.save_episodes(os.path.join(args.out, DATASET_FILES[key]), episodes)
        file_map[key] = DATASET_FILES[key]
        episode_counts[key] = len(episodes)

    persistence.save_dataset_manifest(
        os.path.join(args.out, MANIFEST_NAME), resolved,
        files={"paths": file_map, "episode_counts": episode_counts},
    )
    print(f"wrote dataset ({sum(episode_counts.values())} episodes) to {args.out}")
    return 0


def _load_dataset(dataset_dir: str):
    manifest_path = os.path.join(dataset_dir, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise ConfigError(f"dataset manifest not found: {manifest_path}")
    manifest = persistence.read_json(manifest_path)
    episodes = {}
    for key, name in manifest["files"]["paths"].items():
        episodes[key] = persistence.load_episodes(os.path.join(dataset_dir, name))
    return manifest, episodes


def cmd_train(args) -> int:
    config = persistence.load_config(args.config, seed_override=args.seed_override)
    manifest, episodes = _load_dataset(args.dataset)
    data_config = persistence.parse_config(manifest["config"])
    seed = data_config.master_seed

    trained = evaluation.train_detector(
        config.detector_kind, episodes["train"], config.detector_params(),
        seed=child_seed(seed, "detector"),
    )
    evaluation.calibrate_detector(
        trained, episodes["validation"], data_config.target_fpr,
        seed=child_seed(seed, "calibration"),
    )
    persistence.save_model(args.out, trained, manifest["config_hash"])
    print(f"wrote {config.detector_kind} model to {args.out}")
    return 0


def _check_catalogue_compat(model_doc: dict, manifest: dict):
    current = catalogue_hash()
    for origin, value in (("model", model_doc.get("feature_catalogue_hash")),
                          ("dataset", manifest.get("feature_catalogue_hash"))):
        if value is not None and value != current:
            raise IncompatibleModelError(
                f"{origin} feature catalogue hash {value[:12]}... does not match "
                f"this library's catalogue {current[:12]}...; refusing to evaluate"
            )


def cmd_evaluate(args) -> int:
    config = persistence.load_config(args.config, seed_override=args.seed_override)
    manifest, episodes = _load_dataset(args.dataset)
    model_doc = persistence.load_model(args.model)
    _check_catalogue_compat(model_doc, manifest)
    trained = evaluation.TrainedDetector.from_json_dict(model_doc["detector"])
    if not trained.calibrated():
        raise ConfigError("model file holds an uncalibrated detector")

    data_config = persistence.parse_config(manifest["config"])
    scenario_cfg = data_config.scenario_config()
    warmup = config.detector_section.get(
        "window_size", evaluation.DEFAULT_DETECTOR_PARAMS["dexter"]["window_size"]
    ) - 1

    result = evaluation.measure_detector(
        trained, episodes["test_injected"], episodes["test_clean"],
        horizon=scenario_cfg.horizon, warmup=warmup,
        scenario_id=f"{scenario_cfg.scenario.value}/{scenario_cfg.noise_post.correlation_mode.value}",
        master_seed=data_config.master_seed, target_fpr=data_config.target_fpr,
        counts=data_config.counts(),
    )

    os.makedirs(args.out, exist_ok=True)
    row = result.to_json_dict()
    persistence.atomic_write_text(
        os.path.join(args.out, "results.csv"), persistence.results_to_csv([row])
    )
    persistence.atomic_write_json(os.path.join(args.out, "report.json"), {
        "schema_version": persistence.SCHEMA_VERSION,
        "tool_version": persistence.TOOL_VERSION,
        "config_hash": manifest["config_hash"],
        "results": [row],
    })

    if args.emit_scores:
        scores_dir = os.path.join(args.out, "scores")
        os.makedirs(scores_dir, exist_ok=True)
        for idx, ep in enumerate(episodes["test_injected"]):
            scores = trained.transition_scores(ep)
            lines = [
                {"t": int(i + 1), "score": float(s)}
                for i, s in enumerate(scores)
                if not math.isnan(s)
            ]
            persistence.write_jsonl(os.path.join(scores_dir, f"episode_{idx:04d}.jsonl"), lines)

    print(f"evaluated {trained.kind} on {result.num_test_episodes} episodes: "
          f"auroc={result.auroc:.3f} mean_detection_time={result.mean_detection_time} "
          f"fpr={result.fpr_measured:.4f}")
    return 0


def _bench_cell(payload: dict) -> dict:
    """One bench matrix cell; module-level for use with process pools."""
    config = persistence.parse_config(payload["config"])
    mode = payload["correlation_mode"]
    scenario_cfg = config.scenario_config(correlation_mode=mode)
    params = config.detector_params() if payload["detector"] == config.detector_kind else None
    result = evaluation.run_experiment(
        scenario_cfg,
        payload["detector"],
        master_seed=payload["cell_seed"],
        counts=config.counts(),
        target_fpr=config.target_fpr,
        policy_kind=config.policy_kind(),
        detector_params=params,
        scenario_id=f"{scenario_cfg.scenario.value}/{mode}",
    )
    return result.to_json_dict()


def cmd_bench(args) -> int:
    config = persistence.load_config(args.config, seed_override=args.seed_override)
    resolved = config.resolved_dict()
    seed = config.master_seed

    cells = []
    for detector_kind in config.bench_section["detectors"]:
        for mode in config.bench_section["correlation_modes"]:
            payload = {
                "config": resolved,
                "detector": detector_kind,
                "correlation_mode": mode,
                "cell_seed": child_seed(seed, "bench", detector_kind, mode),
            }
            cells.append((persistence.config_hash(payload), payload))

    os.makedirs(os.path.join(args.out, "cells"), exist_ok=True)
    results, pending = {}, []
    for cell_hash, payload in cells:
        cache_path = os.path.join(args.out, "cells", f"{cell_hash}.json")
        if args.resume and os.path.exists(cache_path):
            results[cell_hash] = persistence.read_json(cache_path)["result"]
            print(f"cell {payload['detector']}/{payload['correlation_mode']}: cached")
        else:
            pending.append((cell_hash, payload, cache_path))

    def finish(cell_hash, payload, cache_path, outcome, error=None):
        doc = {
            "schema_version": persistence.SCHEMA_VERSION,
            "tool_version": persistence.TOOL_VERSION,
            "cell_hash": cell_hash,
            "cell": {k: payload[k] for k in ("detector", "correlation_mode", "cell_seed")},
            "result": outcome,
            "error": error,
        }
        persistence.atomic_write_json(cache_path, doc)
        results[cell_hash] = outcome

    if args.jobs > 1 and pending:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [(c, p, path, pool.submit(_bench_cell, p)) for c, p, path in pending]
            for cell_hash, payload, cache_path, future in futures:
                try:
                    finish(cell_hash, payload, cache_path, future.result())
                except DexterError as exc:
                    finish(cell_hash, payload, cache_path, None, error=str(exc))
                    print(f"cell {payload['detector']}/{payload['correlation_mode']} failed: {exc}",
                          file=sys.stderr)
    else:
        for cell_hash, payload, cache_path in pending:
            try:
                finish(cell_hash, payload, cache_path, _bench_cell(payload))
            except DexterError as exc:
                finish(cell_hash, payload, cache_path, None, error=str(exc))
                print(f"cell {payload['detector']}/{payload['correlation_mode']} failed: {exc}",
                      file=sys.stderr)

    rows = [results[c] for c, _ in cells if results.get(c) is not None]
    table = _bench_table(rows)
    persistence.atomic_write_text(os.path.join(args.out, "results.csv"),
                                  persistence.results_to_csv(table))
    persistence.atomic_write_json(os.path.join(args.out, "report.json"), {
        "schema_version": persistence.SCHEMA_VERSION,
        "tool_version": persistence.TOOL_VERSION,
        "config_hash": persistence.config_hash(resolved),
        "num_cells": len(cells),
        "num_failed": sum(1 for c, _ in cells if results.get(c) is None),
        "results": rows,
        "table": table,
    })
    print(f"bench complete: {len(rows)}/{len(cells)} runs, {len(table)} table cells -> {args.out}")
    return 0


def _bench_table(rows: list) -> list:
    """Expand underlying runs into the published table layout: one AUROC row
    per detector plus one detection-time row per CUSUM variant (dexter_c,
    pedm_c); the mean-shift detector is itself the sequential test, so it
    appears once."""
    table = []
    for row in rows:
        auroc_view = dict(row)
        auroc_view.pop("per_episode", None)
        for key in ("mean_detection_time", "detected_fraction", "num_pre_injection_alerts",
                    "fpr_measured"):
            auroc_view[key] = row[key] if row["detector_id"] == "meanshift" else None
        table.append(auroc_view)
        if row["detector_id"] in ("dexter", "pedm"):
            cusum_view = dict(row)
            cusum_view.pop("per_episode", None)
            cusum_view["detector_id"] = f"{row['detector_id']}_c"
            cusum_view["auroc"] = None
            cusum_view["auroc_raw"] = None
            cusum_view["per_episode_auroc"] = None
            table.append(cusum_view)
    return table


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dexter",
        description="Sequential out-of-distribution detection on trajectory streams",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="generate episode datasets from a config")
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed-override", type=int, default=None)
    p_gen.set_defaults(func=cmd_generate)

    p_train = sub.add_parser("train", help="train and calibrate a detector on a dataset")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--seed-override", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate a saved model against a dataset")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--seed-override", type=int, default=None)
    p_eval.add_argument("--emit-scores", action="store_true")
    p_eval.set_defaults(func=cmd_evaluate)

    p_bench = sub.add_parser("bench", help="run the detector x correlation-mode matrix")
    p_bench.add_argument("--config", required=True)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--seed-override", type=int, default=None)
    p_bench.add_argument("--resume", action="store_true")
    p_bench.add_argument("--jobs", type=int, default=1)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, IncompatibleModelError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DexterError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
