"""Command-line pipeline driver.

One binary, subcommand style. A JSON config file supplies any of the
model/train/features/enhancers sections; individual flags override file
values; every run echoes the effective configuration into the output
directory so it can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .data import load_manifest, merge_nh, synth_generate, two_clips_augment
from .enhancers import KINDS, EnhancerSpec
from .errors import ConfigError, NumericError, PredictorError
from .features import FeatureStore
from .gradsuite import run_suite
from .model import ModelConfig
from .train import (
    TrainConfig,
    TrainedEnsemble,
    curve_to_csv,
    evaluate,
    layer_sweep,
    predict_ensemble,
    sweep_to_csv,
    train_ensemble,
)

OUTPUT_DIR_ENV = "SIPREDICT_OUT"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_IO = 5
EXIT_NUMERIC = 6

_FEATURE_DEFAULTS = {"sfm_seed": 0, "layer_index": 2, "out_dim": 128, "n_layers": 3}
_CONFIG_SECTIONS = ("model", "train", "features", "enhancers")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line, no sys.exit
        raise _UsageError(message)


def _fail(error_class: str, message: str, code: int) -> int:
    line = json.dumps(
        {"error": error_class, "message": " ".join(str(message).split())}, sort_keys=True
    )
    print(line, file=sys.stderr)
    return code


# -- config assembly --------------------------------------------------------


def _load_config_file(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: not valid JSON ({err})") from err
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    # an effective-config.json echoed by an earlier run is accepted as-is, so
    # evaluate/predict can replay a train run's exact setup via --config
    if isinstance(doc.get("config"), dict) and "subcommand" in doc:
        doc = doc["config"]
    unknown = set(doc) - set(_CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown config sections {sorted(unknown)}")
    return doc


def _enhancer_specs(section: dict) -> dict[str, EnhancerSpec]:
    specs = {}
    for name, fields in section.items():
        if not isinstance(fields, dict) or "kind" not in fields:
            raise ConfigError(f"enhancer '{name}' needs an object with a 'kind' field")
        specs[name] = EnhancerSpec(**fields)
    return specs


def effective_config(args) -> dict:
    """File config under flag overrides, validated; returns plain dicts."""
    doc = _load_config_file(args.config) if getattr(args, "config", None) else {}

    features = dict(_FEATURE_DEFAULTS)
    feat_doc = doc.get("features", {})
    unknown = set(feat_doc) - set(_FEATURE_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown feature config keys: {sorted(unknown)}")
    features.update(feat_doc)
    for flag, key in (
        ("sfm_seed", "sfm_seed"),
        ("layer_index", "layer_index"),
        ("out_dim", "out_dim"),
        ("n_layers", "n_layers"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            features[key] = v

    model = ModelConfig().to_dict()
    model.update(doc.get("model", {}))
    for flag, key in (
        ("d_model", "d_model"),
        ("n_heads", "n_heads"),
        ("ff_mult", "ff_mult"),
        ("dropout", "dropout"),
        ("downsample_factor", "downsample_factor"),
        ("blocks_temporal", "n_blocks_temporal"),
        ("blocks_layer", "n_blocks_layer"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            model[key] = v
    # the model's input width follows the extractor unless pinned in the file
    if "sfm_feature_dim" not in doc.get("model", {}):
        model["sfm_feature_dim"] = features["out_dim"]
    model_cfg = ModelConfig.from_dict(model)

    train = TrainConfig().to_dict()
    train.update(doc.get("train", {}))
    for flag, key in (
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("lr", "lr"),
        ("seed", "seed"),
        ("n_folds", "n_folds"),
        ("huber_delta", "huber_delta"),
        ("grad_clip", "grad_clip"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            train[key] = v
    train_cfg = TrainConfig.from_dict(train)

    enhancers = doc.get("enhancers", {})
    names = getattr(args, "enhancers", None)
    if names:
        chosen = {}
        for name in names.split(","):
            name = name.strip()
            if name in enhancers:
                chosen[name] = enhancers[name]
            elif name in KINDS:
                chosen[name] = {"kind": name}
            else:
                raise ConfigError(
                    f"enhancer '{name}' is neither configured nor a built-in kind {KINDS}"
                )
        enhancers = chosen
    elif not enhancers:
        enhancers = {"identity": {"kind": "identity"}}
    _enhancer_specs(enhancers)  # validate early

    return {
        "model": model_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "features": features,
        "enhancers": enhancers,
    }


def _out_dir(args) -> Path:
    out = getattr(args, "out", None) or os.environ.get(OUTPUT_DIR_ENV)
    if not out:
        raise _UsageError(f"an output directory is required (--out or ${OUTPUT_DIR_ENV})")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(out: Path, args, cfg: dict | None, inputs: dict) -> None:
    doc = {
        "subcommand": args.cmd,
        "argv": list(args._argv),
        "config": cfg,
        "inputs": inputs,
        "threads": getattr(args, "threads", 1),
    }
    (out / "effective-config.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _stores(manifest, cfg: dict) -> dict[str, FeatureStore]:
    feats = cfg["features"]
    return {
        name: FeatureStore(
            manifest,
            spec,
            sfm_seed=feats["sfm_seed"],
            layer_index=feats["layer_index"],
            out_dim=feats["out_dim"],
            n_layers=feats["n_layers"],
            enhancer_name=name,
        )
        for name, spec in _enhancer_specs(cfg["enhancers"]).items()
    }


# -- subcommands --------------------------------------------------------------


def _cmd_synth_gen(args) -> int:
    out = _out_dir(args)
    manifest = synth_generate(
        out,
        n_listeners=args.listeners,
        clips_per_listener=args.clips_per_listener,
        seed=args.seed if args.seed is not None else 0,
        duration_s=args.duration,
    )
    _echo_config(out, args, None, {"n_clips": len(manifest)})
    print(f"wrote {len(manifest)} clips to {out}")
    return EXIT_OK


def _cmd_augment(args) -> int:
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    if args.mode == "two-clips":
        result = two_clips_augment(
            manifest,
            per_listener=args.per_listener,
            silence_s=args.silence,
            seed=args.seed if args.seed is not None else 0,
        )
        inputs = {"manifest": str(args.manifest), "mode": "two-clips"}
    else:
        if not args.nh_manifest:
            raise _UsageError("nh-merge needs --nh-manifest")
        nh = load_manifest(args.nh_manifest)
        result = merge_nh(manifest, nh)
        inputs = {"manifest": str(args.manifest), "nh_manifest": str(args.nh_manifest),
                  "mode": "nh-merge"}
    target = out / "manifest.jsonl"
    result.save(target)
    _echo_config(out, args, None, inputs)
    print(f"wrote {len(result)} clips ({len(result) - len(manifest)} new) to {target}")
    return EXIT_OK


def _cmd_train(args) -> int:
    out = _out_dir(args)
    cfg = effective_config(args)
    manifest = load_manifest(args.manifest)
    model_cfg = ModelConfig.from_dict(cfg["model"])
    train_cfg = TrainConfig.from_dict(cfg["train"])
    stores = _stores(manifest, cfg)
    ensemble = train_ensemble(
        manifest,
        _enhancer_specs(cfg["enhancers"]),
        model_cfg,
        train_cfg,
        stores=stores,
        threads=args.threads,
    )
    ensemble.save(out / "ensemble")
    curves = out / "curves"
    curves.mkdir(exist_ok=True)
    for m in ensemble.members:
        (curves / f"{m.enhancer}_fold{m.fold}.csv").write_text(curve_to_csv(m.curve))
    _echo_config(out, args, cfg, {"manifest": str(args.manifest)})
    for m in ensemble.members:
        print(f"{m.enhancer} fold {m.fold}: best epoch {m.best_epoch}, val RMSE {m.val_rmse:.4f}")
    return EXIT_OK


def _cmd_predict(args) -> int:
    out = _out_dir(args)
    ensemble = TrainedEnsemble.load(args.ensemble)
    cfg = effective_config(args)
    manifest = load_manifest(args.manifest)
    stores = _stores(manifest, cfg)
    lines = ["clip_id,prediction"]
    for clip in manifest.clips:
        score = predict_ensemble(ensemble, clip, stores)
        lines.append(f"{clip.clip_id},{score!r}")
    text = "\n".join(lines) + "\n"
    (out / "predictions.csv").write_text(text)
    _echo_config(out, args, cfg, {"manifest": str(args.manifest), "ensemble": str(args.ensemble)})
    print(text, end="")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    out = _out_dir(args)
    ensemble = TrainedEnsemble.load(args.ensemble)
    cfg = effective_config(args)
    manifest = load_manifest(args.manifest)
    stores = _stores(manifest, cfg)
    report = evaluate(ensemble, manifest, stores, model_id=str(args.ensemble),
                      threads=args.threads)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    _echo_config(out, args, cfg, {"manifest": str(args.manifest), "ensemble": str(args.ensemble)})
    ncc_text = "undefined" if report.ncc is None else f"{report.ncc:.4f}"
    rmse_text = "undefined" if report.rmse is None else f"{report.rmse:.4f}"
    print(f"n={report.n} failures={len(report.failures)} rmse={rmse_text} ncc={ncc_text}")
    return EXIT_OK


def _cmd_layer_sweep(args) -> int:
    out = _out_dir(args)
    cfg = effective_config(args)
    manifest = load_manifest(args.manifest)
    rows = layer_sweep(
        manifest,
        ModelConfig.from_dict(cfg["model"]),
        TrainConfig.from_dict(cfg["train"]),
        sweep_epochs=args.sweep_epochs,
    )
    (out / "sweep.csv").write_text(sweep_to_csv(rows))
    _echo_config(out, args, cfg, {"manifest": str(args.manifest)})
    best = next(r for r in rows if r.best)
    for r in rows:
        print(f"layer {r.layer}: val RMSE {r.val_rmse:.4f}{'  <- best' if r.best else ''}")
    print(f"best layer: {best.layer}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    report = run_suite(seed=args.seed if args.seed is not None else 0,
                       cases_per_op=args.cases)
    print("\n".join(report.lines()))
    if args.out:
        out = _out_dir(args)
        _echo_config(out, args, None, {"cases_per_op": args.cases})
        (out / "gradcheck.txt").write_text("\n".join(report.lines()) + "\n")
    if not report.passed:
        return _fail("numeric", f"gradient check failed: max rel err {report.max_rel_err:.3e}",
                     EXIT_NUMERIC)
    return EXIT_OK


# -- wiring -------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser, with_model=True) -> None:
    p.add_argument("--config", help="JSON config file (model/train/features/enhancers sections)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--n-folds", dest="n_folds", type=int)
    p.add_argument("--huber-delta", dest="huber_delta", type=float)
    p.add_argument("--grad-clip", dest="grad_clip", type=float)
    p.add_argument("--enhancers", help="comma-separated enhancer names")
    p.add_argument("--sfm-seed", dest="sfm_seed", type=int)
    p.add_argument("--layer-index", dest="layer_index", type=int)
    p.add_argument("--out-dim", dest="out_dim", type=int)
    p.add_argument("--n-layers", dest="n_layers", type=int)
    if with_model:
        p.add_argument("--d-model", dest="d_model", type=int)
        p.add_argument("--n-heads", dest="n_heads", type=int)
        p.add_argument("--ff-mult", dest="ff_mult", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--downsample-factor", dest="downsample_factor", type=int)
        p.add_argument("--blocks-temporal", dest="blocks_temporal", type=int)
        p.add_argument("--blocks-layer", dest="blocks_layer", type=int)


def build_parser() -> _Parser:
    parser = _Parser(prog="sipredict", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synth-gen", help="generate the seeded synthetic benchmark")
    p.add_argument("--out", help=f"output directory (or ${OUTPUT_DIR_ENV})")
    p.add_argument("--listeners", type=int, default=15)
    p.add_argument("--clips-per-listener", dest="clips_per_listener", type=int, default=20)
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, default=0.8)
    p.set_defaults(func=_cmd_synth_gen)

    p = sub.add_parser("augment", help="expand a manifest (2-clips or NH merge)")
    p.add_argument("--mode", choices=("two-clips", "nh-merge"), required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--nh-manifest", dest="nh_manifest")
    p.add_argument("--per-listener", dest="per_listener", type=int, default=540)
    p.add_argument("--silence", type=float, default=0.5)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("train", help="train a fold/enhancer ensemble")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="score clips with a trained ensemble")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="per-clip report with RMSE/NCC")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("layer-sweep", help="per-encoder-layer validation RMSE")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--sweep-epochs", dest="sweep_epochs", type=int, default=5)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_layer_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference self-check of the autodiff core")
    p.add_argument("--cases", type=int, default=6, help="randomized cases per op")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args._argv = list(argv)
        return args.func(args)
    except _UsageError as err:
        return _fail("usage", str(err), EXIT_USAGE)
    except ConfigError as err:
        return _fail("config", str(err), EXIT_CONFIG)
    except NumericError as err:
        return _fail("numeric", str(err), EXIT_NUMERIC)
    except PredictorError as err:
        return _fail("data", str(err), EXIT_DATA)
    except OSError as err:
        return _fail("io", str(err), EXIT_IO)


def main() -> None:
    sys.exit(run(sys.argv[1:]))
