"""Command-line entry point.

Subcommands: synth, embed, train, eval, ablate, corrupt, thresholds.
All experiment settings live in a single JSON config file; individual keys
can be overridden on the command line with dotted paths, e.g.
--train.lr=1e-4. Outputs land in a run directory named by the config hash
and include JSON/CSV artifacts plus rendered figures.

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime/numerical.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics as M
from . import report
from .corruption import sweep as corruption_sweep
from .data import (compute_imputation_stats, impute, load_dataset, split)
from .embedding import (dump_prompts, embed_dataset, make_provider, read_cache,
                        write_cache, check_cache_against)
from .errors import ConfigError, DataError, EhrFuseError, NumericalError
from .fusion import FusionConfig, load_checkpoint, save_checkpoint
from .heads import head_from_items, head_items
from .synth import SynthSpec, generate
from .train import (Model, TrainConfig, VARIANTS, aggregate_metrics, evaluate,
                    make_variant, predict_scores, run_seeds, train)
from .data import fnv1a64

DEFAULT_CONFIG = {
    "data": {"schema": None, "table": None, "split_seed": 0},
    "provider": {"kind": "hashing", "dim": 32, "seed": 0, "cache": None},
    "fusion": {"blocks": 2, "heads": 2, "ffn_dim": 0, "ln_eps": 1e-5},
    "train": {"lr": 1e-5, "batch_size": 256, "max_epochs": 100, "patience": 10,
              "seeds": [0, 1, 2, 3, 4], "variant": "full", "head_hidden": 0},
    "eval": {"threshold": 0.5, "grid_points": 101},
    "experiment": {"rates": [0.0, 0.05, 0.1, 0.15, 0.2], "corrupt_seed": 0,
                   "corrupt_scope": "all"},
}


def load_config(path: str | None, overrides: list[str]) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        _merge(config, user, [])
    for item in overrides:
        _apply_override(config, item)
    return config


def _merge(base: dict, user: dict, trail: list[str]) -> None:
    for key, value in user.items():
        here = ".".join(trail + [key])
        if key not in base:
            raise ConfigError(f"unknown config key '{here}'")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value, trail + [key])
        else:
            base[key] = value


def _apply_override(config: dict, item: str) -> None:
    if not item.startswith("--") or "=" not in item:
        raise ConfigError(f"bad override '{item}', expected --section.key=value")
    dotted, raw = item[2:].split("=", 1)
    parts = dotted.split(".")
    node = config
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key '{dotted}'")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node:
        raise ConfigError(f"unknown config key '{dotted}'")
    try:
        node[leaf] = json.loads(raw)
    except json.JSONDecodeError:
        node[leaf] = raw


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return format(fnv1a64(canon.encode("utf-8")), "016x")[:12]


def run_dir(config: dict, out: str | None) -> Path:
    path = Path(out) if out else Path("runs") / config_hash(config)
    path.mkdir(parents=True, exist_ok=True)
    return path


def prepare_dataset(config: dict):
    data = config["data"]
    if not data["schema"] or not data["table"]:
        raise ConfigError("config needs data.schema and data.table paths")
    ds = load_dataset(data["schema"], data["table"])
    ds = split(ds, seed=int(data["split_seed"]))
    stats = compute_imputation_stats(ds)
    return impute(ds, stats)


def build_train_config(config: dict, dataset) -> TrainConfig:
    fusion = FusionConfig(
        dim=int(config["provider"]["dim"]),
        blocks=int(config["fusion"]["blocks"]),
        heads=int(config["fusion"]["heads"]),
        ffn_dim=int(config["fusion"]["ffn_dim"]),
        ln_eps=float(config["fusion"]["ln_eps"]),
    )
    t = config["train"]
    return TrainConfig(
        task=dataset.schema.task,
        num_classes=dataset.schema.num_classes,
        lr=float(t["lr"]),
        batch_size=int(t["batch_size"]),
        max_epochs=int(t["max_epochs"]),
        patience=int(t["patience"]),
        seeds=tuple(int(s) for s in t["seeds"]),
        fusion=fusion,
        variant=t["variant"],
        head_hidden=int(t["head_hidden"]),
    )


def build_provider(config: dict):
    p = config["provider"]
    return make_provider(p["kind"], int(p["dim"]), int(p["seed"]))


def _variant_inputs(config: dict, dataset, variant: str):
    p = config["provider"]
    return make_variant(dataset, variant, p["kind"], int(p["dim"]),
                        int(p["seed"]))


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)


# --- subcommands ------------------------------------------------------------

def cmd_synth(args, overrides) -> int:
    spec = SynthSpec(
        n_rows=args.rows,
        n_numerical=args.numerical,
        n_categorical=args.categorical,
        n_binary=args.binary,
        n_freetext=args.freetext,
        task=args.task,
        seed=args.seed,
        missing_rate=args.missing_rate,
    )
    params = generate(spec, args.out)
    print(f"wrote schema.json, table.csv, params.json to {args.out}")
    print(json.dumps(params["signal"], indent=2))
    return 0


def cmd_embed(args, overrides) -> int:
    config = load_config(args.config, overrides)
    dataset = prepare_dataset(config)
    variant = config["train"]["variant"]
    ds, cache = _variant_inputs(config, dataset, variant)
    out = config["provider"]["cache"] or str(
        run_dir(config, args.out) / "cache.cemb")
    out_path = Path(out)
    if out_path.exists() and not args.force:
        existing = read_cache(out_path)
        if existing.dim != cache.dim:
            raise ConfigError(
                f"existing cache at {out_path} has d={existing.dim}, "
                f"configured d={cache.dim}; pass --force to overwrite")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_cache(cache, out_path)
    if args.dump_prompts:
        n = dump_prompts(ds, args.dump_prompts,
                         variant="raw" if variant == "no_prompts" else "prompts")
        print(f"dumped {n} prompts to {args.dump_prompts}")
    print(f"cache: {out_path} N={cache.n} m={cache.m} d={cache.dim} "
          f"provider={cache.provider_id} seed={cache.seed} "
          f"schema_hash={cache.schema_hash:016x}")
    return 0


def _load_or_build_cache(config: dict, dataset, variant: str):
    cache_path = config["provider"]["cache"]
    if cache_path and Path(cache_path).exists():
        ds = dataset
        if variant == "no_freetext":
            from .data import drop_features
            ds = drop_features(dataset, ("freetext",))
        cache = read_cache(cache_path)
        check_cache_against(cache, ds)
        return ds, cache
    return _variant_inputs(config, dataset, variant)


def cmd_train(args, overrides) -> int:
    config = load_config(args.config, overrides)
    out = run_dir(config, args.out)
    dataset = prepare_dataset(config)
    tc = build_train_config(config, dataset)
    ds, cache = _load_or_build_cache(config, dataset, tc.variant)
    threshold = float(config["eval"]["threshold"])
    per_seed, histories = [], []
    for seed in tc.seeds:
        model, history = train(tc, ds, cache, seed)
        save_checkpoint(out / f"model_seed{seed}.fmdl", model.fusion,
                        head_items(model.head))
        m = evaluate(model, ds, cache, tc, threshold=threshold)
        per_seed.append({"seed": seed, **m})
        histories.append(history.to_dict())
    mean, std = aggregate_metrics(
        [{k: v for k, v in m.items() if k not in ("seed", "confusion")}
         for m in per_seed])
    _write_json({"per_seed": per_seed, "mean": mean, "std": std},
                out / "metrics.json")
    _write_json(histories, out / "history.json")
    report.plot_history(histories[0], out / "history.png")
    print(json.dumps({"mean": mean, "std": std}, indent=2))
    print(f"artifacts in {out}")
    return 0


def cmd_eval(args, overrides) -> int:
    config = load_config(args.config, overrides)
    out = run_dir(config, args.out)
    dataset = prepare_dataset(config)
    tc = build_train_config(config, dataset)
    ds, cache = _load_or_build_cache(config, dataset, tc.variant)
    fusion, head_list = load_checkpoint(args.checkpoint)
    model = Model(fusion=fusion, head=head_from_items(head_list))
    result = evaluate(model, ds, cache, tc,
                      threshold=float(config["eval"]["threshold"]))
    _write_json(result, out / "eval.json")
    if "confusion" in result:
        c = result["confusion"]
        counts = M.ConfusionCounts(tp=c["tp"], fp=c["fp"],
                                   tn=c["tn"], fn=c["fn"])
        report.plot_confusion(counts, out / "confusion.png")
    print(json.dumps(result, indent=2))
    return 0


def cmd_ablate(args, overrides) -> int:
    config = load_config(args.config, overrides)
    out = run_dir(config, args.out)
    dataset = prepare_dataset(config)
    tc = build_train_config(config, dataset)
    table = []
    for variant in VARIANTS:
        ds, cache = _variant_inputs(config, dataset, variant)
        vtc = TrainConfig(**{**tc.__dict__, "variant": variant})
        rep = run_seeds(vtc, ds, cache,
                        threshold=float(config["eval"]["threshold"]))
        table.append({"variant": variant, "mean": rep["mean"],
                      "std": rep["std"]})
    metric_names = sorted(table[0]["mean"].keys())
    _write_json(table, out / "ablation.json")
    report.write_ablation_csv(table, metric_names, out / "ablation.csv")
    report.plot_ablation(table, metric_names, out / "ablation.png")
    print(json.dumps(table, indent=2))
    print(f"artifacts in {out}")
    return 0


def cmd_corrupt(args, overrides) -> int:
    config = load_config(args.config, overrides)
    out = run_dir(config, args.out)
    dataset = prepare_dataset(config)
    tc = build_train_config(config, dataset)
    provider = build_provider(config)
    exp = config["experiment"]
    results = corruption_sweep(
        tc, dataset, provider, exp["rates"],
        corrupt_seed=int(exp["corrupt_seed"]),
        scope=exp["corrupt_scope"],
        threshold=float(config["eval"]["threshold"]),
    )
    slim = [{k: r[k] for k in ("rate", "selected_cells", "eligible_cells",
                               "mean", "std")} for r in results]
    _write_json(slim, out / "sweep.json")
    report.write_sweep_csv(results, out / "sweep.csv")
    report.plot_corruption_sweep(results, out / "sweep.png")
    print(json.dumps(slim, indent=2))
    print(f"artifacts in {out}")
    return 0


def cmd_thresholds(args, overrides) -> int:
    config = load_config(args.config, overrides)
    out = run_dir(config, args.out)
    dataset = prepare_dataset(config)
    tc = build_train_config(config, dataset)
    if tc.task != "classification":
        raise ConfigError("threshold sweep applies to classification tasks")
    ds, cache = _load_or_build_cache(config, dataset, tc.variant)
    fusion, head_list = load_checkpoint(args.checkpoint)
    model = Model(fusion=fusion, head=head_from_items(head_list))
    idx = ds.indices("test")
    scores = predict_scores(model, cache.values[idx].astype(float), tc.task)
    labels = ds.labels[idx]
    curve = M.threshold_sweep(
        scores, labels, M.default_grid(int(config["eval"]["grid_points"])))
    _write_json(curve.to_dict(), out / "thresholds.json")
    report.write_curve_csv(curve, out / "thresholds.csv")
    report.plot_threshold_curve(curve, out / "thresholds.png")
    print(f"artifacts in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ehrfuse",
        description="Prompt-rendered multimodal tabular prediction pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, default=2000)
    p.add_argument("--numerical", type=int, default=2)
    p.add_argument("--categorical", type=int, default=1)
    p.add_argument("--binary", type=int, default=2)
    p.add_argument("--freetext", type=int, default=1)
    p.add_argument("--task", choices=["classification", "regression"],
                   default="classification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    for name, func, needs_ckpt in (
        ("embed", cmd_embed, False),
        ("train", cmd_train, False),
        ("eval", cmd_eval, True),
        ("ablate", cmd_ablate, False),
        ("corrupt", cmd_corrupt, False),
        ("thresholds", cmd_thresholds, True),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None,
                       help="run directory (default: runs/<config hash>)")
        if name == "embed":
            p.add_argument("--force", action="store_true")
            p.add_argument("--dump-prompts", default=None,
                           help="also write an NDJSON prompt dump here")
        if needs_ckpt:
            p.add_argument("--checkpoint", required=True)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, unknown = parser.parse_known_args(argv)
    overrides = []
    for item in unknown:
        if item.startswith("--") and "." in item.split("=")[0]:
            overrides.append(item)
        else:
            parser.error(f"unrecognized argument: {item}")
    try:
        return args.func(args, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, EhrFuseError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
