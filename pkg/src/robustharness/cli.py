"""Command-line front end.

Subcommands: evaluate, sweep, compose, validate, import-gtsrb, synth.
Configuration is a single JSON file; every run is a pure function of
(config, seed), so repeating a run rewrites the output directory with
byte-identical contents.

Exit codes: 0 success, 2 configuration/data error, 3 endpoint transport
error (partial results are persisted first), 4 score below --min-score.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import (
    BUILTIN_KINDS,
    CENTROID_SIDE,
    EXTERNAL_KINDS,
    ClassifierEndpoint,
    fit_centroid,
)
from .dataset import (
    DatasetManifest,
    generate_synthetic,
    import_gtsrb,
    load_manifest,
    write_manifest,
)
from .errors import (
    ConfigError,
    DatasetError,
    DecodeError,
    DomainError,
    ProtocolError,
    ReportError,
    TransportError,
)
from .evaluator import (
    PropertySpec,
    SearchBudget,
    combination_delta,
    compose_specs,
    evaluate_property,
    validate_property_spec,
)
from .reporting import (
    canonical_json,
    delta_matrix,
    emit_report,
    failure_report,
    sweep,
    write_delta_matrix,
    write_sweep,
)
from .transforms import KINDS, default_spec, override_domain

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRANSPORT = 3
EXIT_GATE = 4

_CONFIG_ERRORS = (ConfigError, DatasetError, DomainError, ReportError, DecodeError)
_TRANSPORT_ERRORS = (TransportError, ProtocolError)


@dataclass
class RunConfig:
    dataset: dict
    endpoint: dict
    properties: list[PropertySpec]
    global_seed: int
    workers: int
    output_dir: Path
    split: str


# ---------------------------------------------------------------------------
# Config parsing (schema errors name the offending field)
# ---------------------------------------------------------------------------


def _expect_map(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object")
    return value


def _opt_int(cfg: dict, key: str, path: str, default: int) -> int:
    v = cfg.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}.{key}: expected an integer")
    return v


def _parse_budget(cfg, path: str) -> SearchBudget:
    cfg = _expect_map(cfg, path)
    strategy = cfg.get("strategy")
    if not isinstance(strategy, str):
        raise ConfigError(f"{path}.strategy: required string")
    return SearchBudget(
        strategy=strategy,
        grid_steps=_opt_int(cfg, "grid_steps", path, 5),
        random_candidates=_opt_int(cfg, "random_candidates", path, 50),
        refine_rounds=_opt_int(cfg, "refine_rounds", path, 0),
    )


def _parse_transform(cfg, path: str):
    cfg = _expect_map(cfg, path)
    kind = cfg.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"{path}.kind: expected one of {sorted(KINDS)}, got {kind!r}")
    grid_size = _opt_int(cfg, "grid_size", path, 4)
    spec = default_spec(kind, grid_size=grid_size)
    domain = cfg.get("domain")
    if domain is not None:
        spec = override_domain(spec, _expect_map(domain, f"{path}.domain"))
    return spec


def _parse_property(cfg, path: str) -> PropertySpec:
    cfg = _expect_map(cfg, path)
    pid = cfg.get("id")
    if not isinstance(pid, str) or not pid:
        raise ConfigError(f"{path}.id: required non-empty string")
    transforms_cfg = cfg.get("transforms")
    if not isinstance(transforms_cfg, list) or not transforms_cfg:
        raise ConfigError(f"{path}.transforms: required non-empty list")
    transforms = tuple(
        _parse_transform(t, f"{path}.transforms[{i}]") for i, t in enumerate(transforms_cfg)
    )
    budget = _parse_budget(cfg.get("budget"), f"{path}.budget")
    seed = cfg.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise ConfigError(f"{path}.seed: expected an integer")
    spec = PropertySpec(pid, transforms, budget, seed)
    validate_property_spec(spec)
    return spec


def parse_config(text: str, config_dir: Path) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    raw = _expect_map(raw, "config")

    dataset = _expect_map(raw.get("dataset"), "dataset")
    sources = [k for k in ("manifest", "gtsrb_root", "synthetic") if k in dataset]
    if len(sources) != 1:
        raise ConfigError(
            "dataset: exactly one of manifest / gtsrb_root / synthetic is required"
        )
    if "synthetic" in dataset:
        syn = _expect_map(dataset["synthetic"], "dataset.synthetic")
        for key in ("num_classes", "per_class", "width", "height"):
            if key not in syn:
                raise ConfigError(f"dataset.synthetic.{key}: required")
            _opt_int(syn, key, "dataset.synthetic", 0)

    endpoint = _expect_map(raw.get("endpoint"), "endpoint")
    kind = endpoint.get("kind")
    if kind not in BUILTIN_KINDS + EXTERNAL_KINDS:
        raise ConfigError(
            f"endpoint.kind: expected one of {sorted(BUILTIN_KINDS + EXTERNAL_KINDS)}, got {kind!r}"
        )

    props_cfg = raw.get("properties")
    if not isinstance(props_cfg, list) or not props_cfg:
        raise ConfigError("properties: required non-empty list")
    properties = [_parse_property(p, f"properties[{i}]") for i, p in enumerate(props_cfg)]
    seen = set()
    for p in properties:
        if p.property_id in seen:
            raise ConfigError(f"properties: duplicate id {p.property_id!r}")
        seen.add(p.property_id)

    split = raw.get("split", "test")
    if split not in ("train", "test"):
        raise ConfigError(f"split: expected train or test, got {split!r}")
    workers = _opt_int(raw, "workers", "config", 1)
    if workers < 1:
        raise ConfigError("workers: must be >= 1")
    out = raw.get("output_dir", "report")
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir: expected a non-empty string")
    out_path = Path(out)
    if not out_path.is_absolute():
        out_path = config_dir / out_path

    return RunConfig(
        dataset=dataset,
        endpoint=endpoint,
        properties=properties,
        global_seed=_opt_int(raw, "seed", "config", 0),
        workers=workers,
        output_dir=out_path,
        split=split,
    )


def load_config(path: str) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, p.parent.resolve())


# ---------------------------------------------------------------------------
# Wiring
# ---------------------------------------------------------------------------


def build_dataset(config: RunConfig) -> DatasetManifest:
    cfg = config.dataset
    if "manifest" in cfg:
        return load_manifest(cfg["manifest"])
    if "gtsrb_root" in cfg:
        return import_gtsrb(cfg["gtsrb_root"], cfg.get("gtsrb_split", "train"))
    syn = cfg["synthetic"]
    out = syn.get("dir")
    out_dir = Path(out) if out else config.output_dir / "data"
    return generate_synthetic(
        out_dir,
        syn["num_classes"],
        syn["per_class"],
        syn["width"],
        syn["height"],
        syn.get("seed", config.global_seed),
    )


def build_endpoint(config: RunConfig, dataset: DatasetManifest | None) -> ClassifierEndpoint:
    cfg = dict(config.endpoint)
    fit_split = cfg.pop("fit_split", None)
    known = {
        "kind",
        "num_classes",
        "input_width",
        "input_height",
        "label",
        "thresholds",
        "command",
        "url",
        "timeout",
    }
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"endpoint: unknown keys {sorted(unknown)}")
    try:
        endpoint = ClassifierEndpoint(**cfg)
    except TypeError as exc:
        raise ConfigError(f"endpoint: {exc}") from None
    if endpoint.kind == "builtin_centroid" and endpoint.centroids is None:
        if dataset is None:
            # validate-only pass: check the remaining fields against
            # placeholder centroids of the right shape
            n = max(endpoint.num_classes, 0)
            probe = ClassifierEndpoint(
                **{**cfg, "centroids": np.zeros((n, CENTROID_SIDE, CENTROID_SIDE, 3), np.float32)}
            )
            probe.validate()
            return endpoint
        endpoint = ClassifierEndpoint(
            **{**cfg, "centroids": fit_centroid(dataset, fit_split)}
        )
    endpoint.validate()
    return endpoint


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    if args.out:
        config.output_dir = Path(args.out)
    if args.seed is not None:
        config.global_seed = args.seed
    if getattr(args, "workers", None) is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        config.workers = args.workers
    if getattr(args, "split", None):
        config.split = args.split
    return config


def _find_property(config: RunConfig, pid: str) -> PropertySpec:
    for spec in config.properties:
        if spec.property_id == pid:
            return spec
    known = [s.property_id for s in config.properties]
    raise ConfigError(f"unknown property {pid!r}; config defines {known}")


def _print_result(result) -> None:
    score = "n/a" if result.robustness_score is None else f"{result.robustness_score:.4f}"
    print(
        f"property {result.property_id}: accuracy={result.accuracy:.4f} "
        f"score={score} non_robust={result.non_robust_count} "
        f"of {result.correct_count} correct"
    )


def _persist_partial(out_dir: Path, results, failed_spec, exc) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    if results:
        emit_report(results, out_dir)
    partial = getattr(exc, "partial_verdicts", None) or []
    doc = {
        "property_id": failed_spec.property_id,
        "error": str(exc),
        "completed_verdicts": [
            {
                "sample_id": v.sample_id,
                "correct": v.correct,
                "robust": v.robust,
                "counterexample": v.counterexample,
            }
            for v in partial
        ],
    }
    path = out_dir / f"partial_{failed_spec.property_id}.json"
    path.write_text(canonical_json(doc), newline="\n")
    print(f"partial verdicts saved to {path}", file=sys.stderr)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    dataset = build_dataset(config)
    endpoint = build_endpoint(config, dataset)
    results = []
    for spec in config.properties:
        try:
            result = evaluate_property(
                dataset,
                spec,
                endpoint,
                split=config.split,
                run_seed=config.global_seed,
                workers=config.workers,
            )
        except _TRANSPORT_ERRORS as exc:
            print(f"error: {exc}", file=sys.stderr)
            _persist_partial(config.output_dir, results, spec, exc)
            return EXIT_TRANSPORT
        results.append(result)
        _print_result(result)
    emit_report(results, config.output_dir)
    specs = {s.property_id: s for s in config.properties}
    failure_report(
        results, specs, dataset, endpoint, config.output_dir, run_seed=config.global_seed
    )
    if any("+" in r.property_id for r in results):
        try:
            write_delta_matrix(delta_matrix(results), config.output_dir)
        except ReportError as exc:
            # pair evaluated without its parts: scores stand, delta cannot
            print(f"note: {exc}; skipping delta matrix", file=sys.stderr)
    print(f"report written to {config.output_dir}")
    if args.min_score is not None:
        failing = [
            r.property_id
            for r in results
            if r.robustness_score is None or r.robustness_score < args.min_score
        ]
        if failing:
            print(
                f"score gate: {failing} below {args.min_score}", file=sys.stderr
            )
            return EXIT_GATE
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    spec = _find_property(config, args.property_id)
    dataset = build_dataset(config)
    endpoint = build_endpoint(config, dataset)
    curve = sweep(
        dataset,
        spec,
        args.dim,
        endpoint,
        args.steps,
        split=config.split,
        run_seed=config.global_seed,
    )
    paths = write_sweep(curve, config.output_dir)
    for p in curve.points:
        print(
            f"{args.dim}={p['theta_value']:.6g}: fraction={p['robustness_fraction']:.4f}"
        )
    print(f"sweep written to {paths[0]} and {paths[1]}")
    return EXIT_OK


def cmd_compose(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    spec_a = _find_property(config, args.property_a)
    spec_b = _find_property(config, args.property_b)
    combined = compose_specs(spec_a, spec_b)
    dataset = build_dataset(config)
    endpoint = build_endpoint(config, dataset)
    results = []
    for spec in (spec_a, spec_b, combined):
        try:
            result = evaluate_property(
                dataset,
                spec,
                endpoint,
                split=config.split,
                run_seed=config.global_seed,
                workers=config.workers,
            )
        except _TRANSPORT_ERRORS as exc:
            print(f"error: {exc}", file=sys.stderr)
            _persist_partial(config.output_dir, results, spec, exc)
            return EXIT_TRANSPORT
        results.append(result)
        _print_result(result)
    delta = combination_delta(results[2], results[:2])
    shown = "n/a" if delta is None else f"{delta:+.2f}"
    print(f"combination delta vs {spec_b.property_id}: {shown} pp")
    emit_report(results, config.output_dir)
    write_delta_matrix(delta_matrix(results), config.output_dir)
    return EXIT_OK


def cmd_validate(args) -> int:
    config = load_config(args.config)
    build_endpoint(config, None)
    print("OK")
    return EXIT_OK


def cmd_import_gtsrb(args) -> int:
    manifest = import_gtsrb(args.root, args.gtsrb_split)
    path = write_manifest(manifest, args.out)
    print(f"{len(manifest.samples)} samples, {manifest.num_classes} classes -> {path}")
    return EXIT_OK


def cmd_synth(args) -> int:
    manifest = generate_synthetic(
        args.out, args.classes, args.per_class, args.width, args.height, args.seed
    )
    print(f"{len(manifest.samples)} samples -> {Path(args.out) / 'manifest.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _add_common(sub, workers=True):
    sub.add_argument("--config", required=True, help="run configuration JSON")
    sub.add_argument("--out", help="override the configured output directory")
    sub.add_argument("--seed", type=int, help="override the global seed")
    sub.add_argument("--split", choices=("train", "test"), help="override the split")
    if workers:
        sub.add_argument("--workers", type=int, help="parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustharness",
        description="Robustness testing for image classifiers via counterexample search.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("evaluate", help="evaluate every configured property")
    _add_common(p)
    p.add_argument(
        "--min-score",
        type=float,
        help="exit 4 if any robustness score falls below this threshold",
    )
    p.set_defaults(fn=cmd_evaluate)

    p = subs.add_parser("sweep", help="full-grid sweep over one parameter dim")
    _add_common(p, workers=False)
    p.add_argument("property_id")
    p.add_argument("dim", help="dim name, or kind.name for compositions")
    p.add_argument("--steps", type=int, default=11)
    p.set_defaults(fn=cmd_sweep)

    p = subs.add_parser("compose", help="evaluate two properties and their combination")
    _add_common(p)
    p.add_argument("property_a")
    p.add_argument("property_b")
    p.set_defaults(fn=cmd_compose)

    p = subs.add_parser("validate", help="schema-check a config without running")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_validate)

    p = subs.add_parser("import-gtsrb", help="build a manifest from a GTSRB tree")
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gtsrb-split", default="train", choices=("train", "test"))
    p.set_defaults(fn=cmd_import_gtsrb)

    p = subs.add_parser("synth", help="generate the synthetic benchmark dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=25)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _TRANSPORT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
