"""Command-line surface: run evaluations, sweep parameter grids, plot, manage the cache.

Exit codes are a stable contract: 0 success, 1 usage or configuration error,
2 runtime failure (a failing stage reports its kind and cache key on stderr).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .anonymize import AnonymizationSpec
from .cache import ArtifactCache
from .dataset import SyntheticSpec, generate_synthetic, save_dataset
from .pipeline import Pipeline, PipelineError, RunConfig
from .report import (
    atomic_write_text,
    auc_to_csv,
    curves_from_csv,
    curves_to_csv,
    result_csv,
    result_json,
    tradeoff_svg,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

_VARIANT_FLAG = {"with": "with_deanon", "without": "without_deanon", "both": "both"}
CACHE_ENV = "ANONBENCH_CACHE"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anonbench",
        description="Benchmark image anonymizations against recognition attacks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument(
            "--set",
            action="append",
            default=[],
            dest="overrides",
            metavar="KEY=VALUE",
            help="override an existing config key (dotted path, JSON value)",
        )
        p.add_argument("--cache-root", help=f"cache directory (default: ${CACHE_ENV} or OUT/cache)")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument(
            "--variant",
            choices=sorted(_VARIANT_FLAG),
            help="which evaluation variants to run",
        )
        p.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
        if needs_out:
            p.add_argument("--out", default=".", help="output directory")

    run_p = sub.add_parser("run", help="run one evaluation from a JSON config")
    run_p.add_argument("config")
    common(run_p)

    sweep_p = sub.add_parser("sweep", help="run a grid of anonymization specs")
    sweep_p.add_argument("config")
    sweep_p.add_argument("grid", help="JSON file listing anonymization specs")
    common(sweep_p)

    plot_p = sub.add_parser("plot", help="re-plot trade-off curve CSV files as SVG")
    plot_p.add_argument("curves", nargs="+", help="curve CSV files")
    plot_p.add_argument("--out", default="tradeoff.svg", help="output SVG path")

    cache_p = sub.add_parser("cache", help="inspect or maintain the artifact cache")
    cache_p.add_argument("action", choices=["stats", "clear", "verify"])
    cache_p.add_argument("--cache-root", help=f"cache directory (default: ${CACHE_ENV} or ./cache)")

    synth_p = sub.add_parser("synth", help="materialize a synthetic dataset as PNGs")
    synth_p.add_argument("out_dir")
    synth_p.add_argument("--identities", type=int, default=10)
    synth_p.add_argument("--samples", type=int, default=6)
    synth_p.add_argument("--width", type=int, default=64)
    synth_p.add_argument("--height", type=int, default=64)
    synth_p.add_argument("--sigma", type=float, default=0.05)
    synth_p.add_argument("--seed", type=int, default=0)
    return parser


def _load_json(path: str, what: str):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as exc:
        raise ValueError(f"cannot read {what} file {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"{what} file {path!r} is not valid JSON: {exc}") from exc


def apply_overrides(config, overrides):
    """Apply dotted KEY=VALUE overrides; every key must already exist."""
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ValueError(f"override {item!r} is not KEY=VALUE")
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ValueError(f"override {key!r} does not reference an existing config key")
            node = node[part]
        last = parts[-1]
        if not isinstance(node, dict) or last not in node:
            raise ValueError(f"override {key!r} does not reference an existing config key")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node[last] = value
    return config


def _config_from_args(args) -> RunConfig:
    raw = _load_json(args.config, "config")
    if not isinstance(raw, dict):
        raise ValueError("config file must contain a JSON object")
    apply_overrides(raw, args.overrides)
    if args.seed is not None:
        raw["master_seed"] = args.seed
    if args.variant is not None:
        raw["variant"] = _VARIANT_FLAG[args.variant]
    return RunConfig.from_dict(raw)


def _cache_root(args, out: str | None) -> str:
    if getattr(args, "cache_root", None):
        return args.cache_root
    env = os.environ.get(CACHE_ENV)
    if env:
        return env
    return os.path.join(out, "cache") if out is not None else "cache"


def _grid_specs(raw) -> list[AnonymizationSpec]:
    if isinstance(raw, dict):
        raw = raw.get("anonymizations")
    if not isinstance(raw, list) or not raw:
        raise ValueError("grid file must hold a non-empty list of anonymization specs")
    specs = []
    for entry in raw:
        if not isinstance(entry, dict):
            raise ValueError("each grid entry must be a JSON object")
        try:
            specs.append(AnonymizationSpec(**entry))
        except TypeError as exc:
            raise ValueError(f"bad grid entry: {exc}") from exc
    return specs


def _cmd_run(args) -> int:
    config = _config_from_args(args)
    pipeline = Pipeline(config, _cache_root(args, args.out))
    result = pipeline.run()
    os.makedirs(args.out, exist_ok=True)
    atomic_write_text(os.path.join(args.out, "result.json"), result_json(result))
    atomic_write_text(os.path.join(args.out, "result.csv"), result_csv(result))
    for variant in sorted(result.variants):
        outcome = result.variants[variant]
        print(
            f"{variant}: best={outcome.best.classifier} "
            f"accuracy={outcome.best.accuracy:.4f} "
            f"privacy={outcome.point.privacy:.4f} utility={outcome.point.utility:.4f}"
        )
    print(f"stages_executed={pipeline.stages_executed}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = _config_from_args(args)
    grid = _grid_specs(_load_json(args.grid, "grid"))
    pipeline = Pipeline(config, _cache_root(args, args.out))
    sweep = pipeline.sweep(grid, jobs=max(1, args.jobs))
    os.makedirs(args.out, exist_ok=True)
    for variant, curves in sweep.curves.items():
        atomic_write_text(os.path.join(args.out, f"curve_{variant}.csv"), curves_to_csv(curves))
    atomic_write_text(
        os.path.join(args.out, "auc.csv"), auc_to_csv(sweep.curves, sweep.worst_case)
    )
    atomic_write_text(os.path.join(args.out, "tradeoff.svg"), tradeoff_svg(sweep.curves))
    for variant in sorted(sweep.curves):
        for curve in sweep.curves[variant]:
            print(f"{curve.method} ({variant}): auc={curve.auc:.4f}")
    for method in sorted(sweep.worst_case):
        print(f"{method} (worst_case): auc={sweep.worst_case[method]:.4f}")
    print(f"stages_executed={pipeline.stages_executed}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    by_variant: dict[str, list] = {}
    for path in args.curves:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                text = handle.read()
        except OSError as exc:
            raise ValueError(f"cannot read curve file {path!r}: {exc}") from exc
        for curve in curves_from_csv(text):
            by_variant.setdefault(curve.points[0].variant, []).append(curve)
    if not by_variant:
        raise ValueError("no curve points found")
    atomic_write_text(args.out, tradeoff_svg(by_variant))
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_cache(args) -> int:
    cache = ArtifactCache(_cache_root(args, None))
    if args.action == "stats":
        stats = cache.stats()
        total_count = sum(s["count"] for s in stats.values())
        total_bytes = sum(s["bytes"] for s in stats.values())
        for kind in sorted(stats):
            print(f"{kind}: {stats[kind]['count']} artifacts, {stats[kind]['bytes']} bytes")
        print(f"total: {total_count} artifacts, {total_bytes} bytes")
    elif args.action == "clear":
        cache.clear()
        print("cache cleared")
    else:
        ok, quarantined = cache.verify()
        for kind, key in quarantined:
            print(f"quarantined {kind} {key}")
        print(f"verified {ok} artifacts, quarantined {len(quarantined)}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n_identities=args.identities,
        samples_per_identity=args.samples,
        width=args.width,
        height=args.height,
        intra_noise_sigma=args.sigma,
        seed=args.seed,
    )
    ds = generate_synthetic(spec)
    save_dataset(ds, args.out_dir)
    print(f"wrote {len(ds.points)} images to {args.out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "plot": _cmd_plot,
        "cache": _cmd_cache,
        "synth": _cmd_synth,
    }
    try:
        return handlers[args.command](args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    raise SystemExit(main())
