"""Command-line entry point: ``crt <command> [options]``.

Configuration is layered as defaults < preset < JSON file < explicit flags.
Every command that writes files leaves one ``run_manifest.json`` in its
output directory; ``crt replay`` re-executes a run from that file alone.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import (Dataset, SynthSpec, ecg_like, gen_synthetic, load_dataset, multi_harmonic, normalize,
                   save_dataset, split, stratified_subsample)
from .model import PRESETS, CRTModel, ModelConfig
from .sequencing import CurriculumConfig
from .trainer import (FeatureScaler, TrainConfig, evaluate, finetune, prepare_patches, pretrain,
                      reconstruct_series, run_experiment)

log = logging.getLogger("crt")

MANIFEST_NAME = "run_manifest.json"
MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"seed"}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"curriculum", "loss"}
CURRICULUM_KEYS = {"r_min", "r_max", "n_epoch"}
LOSS_KEYS = {"beta", "idc_enabled"}
DATA_KEYS = {"normalization"}
CONFIG_KEYS = MODEL_KEYS | TRAIN_KEYS | CURRICULUM_KEYS | LOSS_KEYS | DATA_KEYS | {"preset"}

ABLATE_MODES = {"mask": "mask_mode", "no-phase": "no_phase", "time": "time_only", "freq": "freq_only",
                "t2f": "t2f", "f2t": "f2t", "no-cl": "no_cl", "no-idc": "no_idc"}
METRICS = ("roc_auc", "f1_macro", "accuracy", "accuracy_per_class_mean")


class UsageError(Exception):
    """Bad invocation or configuration; exits with status 2."""

    code = "usage"


# ---------------------------------------------------------------------------
# configuration

def default_config() -> dict:
    cfg = {k: v for k, v in asdict(ModelConfig()).items() if k in MODEL_KEYS}
    train = TrainConfig()
    cfg.update({k: getattr(train, k) for k in TRAIN_KEYS})
    cfg.update(asdict(train.curriculum))
    cfg.update(asdict(train.loss))
    cfg.update(normalization="minmax", preset="desk")
    return cfg


def _coerce(key: str, value, reference):
    if reference is None or value is None:
        return value
    if isinstance(reference, bool):
        if isinstance(value, str):
            if value.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise UsageError(f"{key}: expected a boolean, got {value!r}")
            return value.lower() in ("1", "true", "yes")
        return bool(value)
    try:
        return type(reference)(value)
    except (TypeError, ValueError):
        raise UsageError(f"{key}: cannot interpret {value!r} as {type(reference).__name__}") from None


def _check_keys(cfg: dict, origin: str) -> None:
    unknown = sorted(set(cfg) - CONFIG_KEYS)
    if unknown:
        raise UsageError(f"unknown config key(s) in {origin}: {unknown}")


def resolve_config(args: argparse.Namespace) -> dict:
    """Flat config dict; later layers win: defaults, preset, file, flags."""
    base = default_config()
    file_cfg: dict = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError(f"{args.config}: config must be a flat JSON object")
        _check_keys(file_cfg, args.config)
    flags: dict = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        flags[k.strip()] = v.strip()
    for key in ("seed", "epochs_pretrain", "epochs_finetune", "batch_size", "lr", "label_fraction"):
        if getattr(args, key, None) is not None:
            flags[key] = getattr(args, key)
    if getattr(args, "deterministic", False):
        flags["deterministic"] = True
    if getattr(args, "preset", None):
        flags["preset"] = args.preset
    _check_keys(flags, "flags")

    preset = flags.get("preset", file_cfg.get("preset", base["preset"]))
    if preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = dict(base, **PRESETS[preset], preset=preset)
    for layer in (file_cfg, flags):
        for k, v in layer.items():
            cfg[k] = _coerce(k, v, base.get(k))
    return cfg


def build_configs(cfg: dict, ds: Dataset | None = None) -> tuple[ModelConfig, TrainConfig]:
    model_kw = {k: cfg[k] for k in MODEL_KEYS}
    if ds is not None:
        model_kw.update(channels=ds.series.shape[1], time_length=ds.series.shape[2], num_classes=ds.num_classes)
    train_kw = {k: cfg[k] for k in TRAIN_KEYS}
    train_kw["curriculum"] = CurriculumConfig(**{k: cfg[k] for k in CURRICULUM_KEYS})
    train_kw["loss"] = {k: cfg[k] for k in LOSS_KEYS}
    try:
        train = TrainConfig(**train_kw)
        model = ModelConfig(seed=cfg["seed"], **dict(model_kw, ablation=train.ablation))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return model, train


# ---------------------------------------------------------------------------
# run manifest

@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seeds: list
    input_hash: str
    started: str
    finished: str = ""
    outputs: list = field(default_factory=list)
    version: str = __version__

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=2, default=str))
        return path


def content_hash(paths, config: dict) -> str:
    """sha256 over git-style blob digests of the input files plus the resolved config."""
    outer = hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode())
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(x for x in p.rglob("*") if x.is_file() and x.name != MANIFEST_NAME))
        elif p.exists():
            files.append(p)
        else:  # checkpoint stem
            files.extend(q for q in (p.with_suffix(".json"), p.with_suffix(".bin")) if q.exists())
    for f in files:
        data = f.read_bytes()
        blob = hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
        outer.update(f"{f.name}:{blob}\n".encode())
    return outer.hexdigest()


def _stamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


# ---------------------------------------------------------------------------
# helpers

def _load_data(path, cfg: dict) -> Dataset:
    ds = load_dataset(path)
    if ds.split_tags is None:
        ds = split(ds, seed=cfg["seed"])
    if ds.labels is None:
        raise UsageError(f"{path}: dataset has no labels")
    return Dataset(normalize(ds.series, cfg["normalization"]), ds.labels, ds.num_classes, ds.split_tags,
                   ds.meta)


def _checkpoint_path(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".json", ".bin") else p


def _load_model(path) -> tuple[CRTModel, dict, FeatureScaler | None]:
    from .checkpoint import load_checkpoint

    model, manifest = load_checkpoint(_checkpoint_path(path))
    scaler = manifest["meta"].get("scaler")
    return model, manifest, None if scaler is None else FeatureScaler.from_dict(scaler)


def _write_rows(path: Path, rows: list[dict]) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return path


def summarize(rows: list[dict], keys=METRICS) -> list[dict]:
    """Mean and sample standard deviation (n - 1) of each metric over runs."""
    out = []
    for k in keys:
        vals = np.array([r[k] for r in rows], dtype=np.float64)
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        mean = float(vals.mean())
        out.append(dict(metric=k, mean=mean, std=std, n=len(vals), formatted=f"{100 * mean:.2f}±{100 * std:.2f}"))
    return out


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds expects comma-separated integers, got {text!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    return seeds


# ---------------------------------------------------------------------------
# commands; each returns (output paths, input paths, seeds)

def cmd_gen(args, cfg):
    task = args.task.replace("-", "_")
    spec = SynthSpec(n=args.n, L=args.len, d=args.channels, num_classes=args.classes, task=task,
                     noise_sigma=args.noise, seed=cfg["seed"])
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = split(gen_synthetic(spec), seed=cfg["seed"])
    out = save_dataset(ds, args.out)
    return [str(p) for p in sorted(out.iterdir()) if p.name != MANIFEST_NAME], [], [cfg["seed"]]


def cmd_pretrain(args, cfg):
    ds = _load_data(args.data, cfg)
    model_cfg, train_cfg = build_configs(cfg, ds)
    train = ds.subset("train")
    patches, scaler = prepare_patches(train.series, model_cfg.patch_len)
    res = pretrain(patches, CRTModel(model_cfg), train_cfg, args.out, scaler)
    outputs = [str(Path(args.out) / "pretrain_loss.csv"), str(res.checkpoint), str(res.best_checkpoint)]
    return outputs, [args.data], [cfg["seed"]]


def cmd_finetune(args, cfg):
    ds = _load_data(args.data, cfg)
    model_cfg, train_cfg = build_configs(cfg, ds)
    inputs = [args.data]
    if args.checkpoint:
        model, _, scaler = _load_model(args.checkpoint)
        inputs.append(args.checkpoint)
    else:
        model, scaler = CRTModel(model_cfg), None
    train, val = ds.subset("train"), ds.subset("val")
    train_p, scaler = prepare_patches(train.series, model.cfg.patch_len, scaler)
    val_p, _ = prepare_patches(val.series, model.cfg.patch_len, scaler)
    labelled = stratified_subsample(train.labels, train_cfg.label_fraction, train_cfg.seed, model.cfg.num_classes)
    res = finetune(model, train_p[labelled], train.labels[labelled], val_p, val.labels, train_cfg, args.out,
                   meta=dict(scaler=scaler.to_dict()))
    return [str(Path(args.out) / "finetune_metrics.csv"), str(res.checkpoint)], inputs, [cfg["seed"]]


def cmd_eval(args, cfg):
    ds = _load_data(args.data, cfg)
    model, _, scaler = _load_model(args.checkpoint)
    part = ds.subset(args.split)
    patches, _ = prepare_patches(part.series, model.cfg.patch_len, scaler)
    report = evaluate(model, patches, part.labels)
    out = Path(args.out)
    (out / "eval_report.json").write_text(report.to_json())
    _write_rows(out / "eval.csv", [report.flat_row()])
    print(json.dumps(report.flat_row()))
    return [str(out / "eval_report.json"), str(out / "eval.csv")], [args.data, args.checkpoint], [cfg["seed"]]


def _seed_runs(args, cfg, overrides: dict, tag: str) -> list[dict]:
    ds = _load_data(args.data, cfg)
    rows = []
    for seed in _seeds(args.seeds):
        run_cfg = dict(cfg, seed=seed, **overrides)
        model_cfg, train_cfg = build_configs(run_cfg, ds)
        res = run_experiment(ds, model_cfg, train_cfg, Path(args.out) / f"{tag}_seed{seed}")
        row = dict(variant=tag, seed=seed, **res.report.flat_row(), seconds=round(res.seconds, 3))
        log.info("%s seed %d: %s", tag, seed, row)
        rows.append(row)
    return rows


def cmd_sweep(args, cfg):
    rows = _seed_runs(args, cfg, {}, "full")
    out = Path(args.out)
    summary = summarize(rows)
    paths = [_write_rows(out / "sweep_runs.csv", rows), _write_rows(out / "sweep_summary.csv", summary)]
    print(json.dumps({s["metric"]: s["formatted"] for s in summary}))
    return [str(p) for p in paths], [args.data], _seeds(args.seeds)


def cmd_ablate(args, cfg):
    flag = ABLATE_MODES[args.mode]
    rows = _seed_runs(args, cfg, {flag: True}, args.mode)
    variants = [(args.mode, rows)]
    if args.baseline:
        variants.insert(0, ("full", _seed_runs(args, cfg, {}, "full")))
    out = Path(args.out)
    summary = [dict(variant=name, **s) for name, rs in variants for s in summarize(rs)]
    if args.baseline:
        base = {s["metric"]: s["mean"] for s in summary if s["variant"] == "full"}
        for s in summary:
            s["margin_vs_full"] = s["mean"] - base[s["metric"]]
    all_rows = [r for _, rs in variants for r in rs]
    paths = [_write_rows(out / "ablation_runs.csv", all_rows), _write_rows(out / "ablation_summary.csv", summary)]
    print(json.dumps([{k: s[k] for k in ("variant", "metric", "formatted")} for s in summary
                      if s["metric"] == "accuracy"]))
    return [str(p) for p in paths], [args.data], _seeds(args.seeds)


def cmd_demo_phase_magnitude(args, cfg):
    from .spectral import phase_magnitude_demo

    out = Path(args.out)
    if args.input:
        signal = np.loadtxt(args.input, delimiter=",", ndmin=1).astype(np.float64).ravel()
    else:
        signal = ecg_like(args.len)
    phase_only, mag_only, d_phase, d_mag = phase_magnitude_demo(signal)
    L = len(phase_only)
    from .spectral import minmax

    ref = minmax(signal[:L])
    rows = [dict(n=i, original=ref[i], phase_only=phase_only[i], magnitude_only=mag_only[i]) for i in range(L)]
    summary = dict(d_phase=d_phase, d_magnitude=d_mag, phase_closer=d_phase < d_mag)
    if args.random:
        rng = np.random.default_rng(cfg["seed"])
        wins = 0
        for _ in range(args.random):
            _, _, dp, dm = phase_magnitude_demo(multi_harmonic(args.len, rng))
            wins += dp < dm
        summary.update(random_signals=args.random, phase_closer_fraction=wins / args.random)
    paths = [_write_rows(out / "phase_magnitude.csv", rows), out / "phase_magnitude.json"]
    paths[1].write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return [str(p) for p in paths], [args.input] if args.input else [], [cfg["seed"]]


def cmd_demo_reconstruct(args, cfg):
    if not 0 < args.ratio < 1:
        raise UsageError("--ratio must lie in (0, 1)")
    ds = _load_data(args.data, cfg)
    model, _, scaler = _load_model(args.checkpoint)
    test = ds.subset("test")
    if scaler is None:
        _, scaler = prepare_patches(ds.subset("train").series, model.cfg.patch_len)
    picks = np.random.default_rng(cfg["seed"]).choice(len(test), min(args.cases, len(test)), replace=False)
    cases = reconstruct_series(model, test.series[np.sort(picks)], scaler, args.ratio, cfg["seed"])
    out = Path(args.out)
    paths = []
    for k, (idx, case) in enumerate(zip(np.sort(picks), cases)):
        rows = [dict(channel=c, n=i, original=case.original[c, i], dropped_input=case.dropped_input[c, i],
                     reconstructed=case.reconstructed[c, i])
                for c in range(case.original.shape[0]) for i in range(case.original.shape[1])]
        paths.append(str(_write_rows(out / f"reconstruct_case{k}_sample{idx}.csv", rows)))
    return paths, [args.data, args.checkpoint], [cfg["seed"]]


def cmd_gradcheck(args, cfg):
    from .numerics.gradcheck import op_gradient_audit
    from .trainer import end_to_end_gradcheck

    start = time.time()
    worst = op_gradient_audit(trials=args.trials, seed=cfg["seed"])
    rows = [dict(check=op, max_rel_error=err, tolerance=1e-4, passed=err < 1e-4) for op, err in sorted(worst.items())]
    e2e = end_to_end_gradcheck(seed=cfg["seed"])
    rows.append(dict(check="end_to_end_loss", max_rel_error=e2e, tolerance=1e-3, passed=e2e < 1e-3))
    seconds = time.time() - start
    ok = all(r["passed"] for r in rows)
    summary = dict(passed=ok, checks=len(rows), worst_op_error=max(worst.values()), end_to_end_error=e2e,
                   seconds=round(seconds, 3))
    print(json.dumps(summary))
    outputs = []
    if args.out:
        outputs.append(str(_write_rows(Path(args.out) / "gradcheck.csv", rows)))
    if not ok:
        failed = [r["check"] for r in rows if not r["passed"]]
        raise RuntimeError(f"gradient check failed for {failed}")
    return outputs, [], [cfg["seed"]]


# ---------------------------------------------------------------------------
# parser

def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true", help="single-threaded kernels")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset directory written by `crt gen`")
    p.add_argument("--epochs-pretrain", dest="epochs_pretrain", type=int)
    p.add_argument("--epochs-finetune", dest="epochs_finetune", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--label-fraction", dest="label_fraction", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crt", description="Cross-domain reconstruction for time series.")
    parser.add_argument("--version", action="version", version=f"crt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic dataset")
    _common(p)
    p.add_argument("--task", default="cross-domain",
                   choices=["freq-separable", "shape-separable", "cross-domain",
                            "freq_separable", "shape_separable", "cross_domain"])
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--len", type=int, default=128)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pretrain", help="self-supervised pretraining on the train split")
    _common(p)
    _training(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune a classifier on a labelled fraction")
    _common(p)
    _training(p)
    p.add_argument("--checkpoint", help="pretrained checkpoint (omit to train from scratch)")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="pretrain + fine-tune + evaluate over a seed grid")
    _common(p)
    _training(p)
    p.add_argument("--seeds", default="0,1,2")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="run an ablated variant over a seed grid")
    _common(p)
    _training(p)
    p.add_argument("--mode", required=True, choices=sorted(ABLATE_MODES))
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--baseline", action="store_true", help="also run the full model and report margins")
    p.set_defaults(func=cmd_ablate)

    demo = sub.add_parser("demo", help="figure data as CSV").add_subparsers(dest="demo", required=True)
    p = demo.add_parser("phase-magnitude", help="phase-only vs magnitude-only rebuilds")
    _common(p)
    p.add_argument("--input", help="CSV with one numeric column; default is an ECG-like beat train")
    p.add_argument("--len", type=int, default=512)
    p.add_argument("--random", type=int, default=0, help="also score this many random periodic signals")
    p.set_defaults(func=cmd_demo_phase_magnitude)
    p = demo.add_parser("reconstruct", help="original / dropped input / reconstruction triplets")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ratio", type=float, default=0.7)
    p.add_argument("--cases", type=int, default=3)
    p.set_defaults(func=cmd_demo_reconstruct)

    p = sub.add_parser("gradcheck", help="finite-difference audit of every op and the full loss")
    _common(p, out_required=False)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("replay", help="re-run a command from its run manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="write to a different directory")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=None)
    return parser


def _error(exc: BaseException, command: str | None) -> None:
    payload = dict(error=type(exc).__name__, code=getattr(exc, "code", "runtime_error"), message=str(exc),
                   command=command)
    print(json.dumps(payload), file=sys.stderr)


def _replay_argv(args) -> tuple[list[str], dict]:
    manifest = json.loads(Path(args.manifest).read_text())
    argv = list(manifest["argv"])
    if args.out:
        if "--out" in argv:
            argv[argv.index("--out") + 1] = args.out
        else:
            argv += ["--out", args.out]
    return argv, manifest["config"]


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors (2), --help and --version (0)
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    fixed_config = None
    if args.command == "replay":
        try:
            argv, fixed_config = _replay_argv(args)
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            _error(exc, "replay")
            return 2
        args = parser.parse_args(argv)
    command = args.command if args.command != "demo" else f"demo {args.demo}"
    try:
        cfg = fixed_config if fixed_config is not None else resolve_config(args)
        from .numerics import limit_threads

        manifest = None
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
        started = _stamp()
        with limit_threads(cfg["deterministic"]):
            outputs, inputs, seeds = args.func(args, cfg)
        if args.out:
            manifest = RunManifest(command, argv, cfg, seeds, content_hash([p for p in inputs if p], cfg), started,
                                   _stamp(), outputs)
            manifest.write(Path(args.out))
    except UsageError as exc:
        _error(exc, command)
        parser.print_usage(sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure becomes a JSON error
        log.debug("failure", exc_info=True)
        _error(exc, command)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
