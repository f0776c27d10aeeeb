"""``deepmotif`` command line: synth, train, evaluate, dashboard, motifs."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dashboard import Annotation, DashboardError, DashboardSpec, ModelPanel, render_dashboard
from .data import (DataError, LabeledDataset, SyntheticSpec, generate_synthetic, load_dataset,
                   one_hot_encode, write_dataset)
from .interpret import (ClassOptConfig, UnsupportedArchitectureError, class_opt_motif_window,
                        class_optimize, conv_activation_motif, saliency_map,
                        temporal_output_scores)
from .models import (CheckpointError, ConfigError, ModelConfig, SequenceTooShortError,
                     build_model, get_preset, load_checkpoint, predict, save_checkpoint)
from .motif import (MOTIF_WIDTH, MotifError, Pwm, build_pwm, compare_motifs,
                    extract_saliency_motif, extract_temporal_motif, load_bundled_motifs,
                    read_meme_minimal, write_meme_minimal)
from .training import AdamState, NumericError, TrainConfig, evaluate_auc, train

OUT_ENV = "DEEPMOTIF_OUT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
METHODS = ("saliency", "temporal", "class-opt", "conv-activation")
MAX_MOTIF_SEQUENCES = 500

log = logging.getLogger("deepmotif")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def make_run_dir(root, command: str) -> Path:
    """A fresh ``<command>-NNN`` directory under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    n = 1
    while True:
        path = root / f"{command}-{n:03d}"
        try:
            path.mkdir()
            return path
        except FileExistsError:
            n += 1


def _snapshot(run_dir: Path, args, extra=None) -> None:
    doc = {"command": args.command, "seed": args.seed, "version": __version__,
           "args": {k: v for k, v in sorted(vars(args).items()) if k != "func"}}
    doc.update(extra or {})
    _write_json(run_dir / "run.json", doc)


def _data_paths(data: Path):
    """Train/test TSVs and optional manifest for a dataset directory or file."""
    if data.is_dir():
        manifest = data / "manifest.json"
        return data / "train.tsv", data / "test.tsv", manifest if manifest.exists() else None
    return data, data, None


def _planted(manifest):
    if manifest is None:
        return {}, None
    doc = json.loads(manifest.read_text())
    name = doc.get("spec", {}).get("planted_pwm", {}).get("name")
    return doc.get("planted", {}), name


def load_data(args, split: str) -> tuple[LabeledDataset, dict, str | None]:
    """Dataset for ``split`` from ``--data`` or a ``--synthetic-spec``."""
    if bool(args.data) == bool(args.synthetic_spec):
        raise UsageError("give exactly one of --data or --synthetic-spec")
    if args.synthetic_spec:
        spec = SyntheticSpec.from_json(args.synthetic_spec)
        train_set, test_set = generate_synthetic(spec)
        ds = train_set if split == "train" else test_set
        return ds, ds.planted, spec.planted_pwm.name
    train_path, test_path, manifest = _data_paths(Path(args.data))
    path = train_path if split == "train" else test_path
    if not path.exists():
        raise DataError(f"dataset file {path} not found")
    planted, name = _planted(manifest)
    return load_dataset(path, split), planted, name


def model_config(args) -> ModelConfig:
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read model config {args.config}: {exc}") from None
        try:
            config = ModelConfig.from_dict(doc)
        except TypeError as exc:
            raise ConfigError(f"invalid model config {args.config}: {exc}") from None
        config.validate()
        return config
    return get_preset(args.preset)


def _train_config(args) -> TrainConfig:
    kw = {"seed": args.seed}
    if args.epochs is not None:
        kw["max_epochs"] = args.epochs
    if args.batch_size is not None:
        kw["batch_size"] = args.batch_size
    if args.learning_rate is not None:
        kw["learning_rate"] = args.learning_rate
    if args.patience is not None:
        kw["patience"] = args.patience
    return TrainConfig(**kw)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, run_dir: Path) -> int:
    if not args.synthetic_spec:
        raise UsageError("synth needs --synthetic-spec")
    spec = SyntheticSpec.from_json(args.synthetic_spec)
    if args.seed_given:
        spec.seed = args.seed
    train_set, test_set = generate_synthetic(spec)
    write_dataset(train_set, run_dir / "train.tsv")
    write_dataset(test_set, run_dir / "test.tsv")
    planted = {**train_set.planted, **test_set.planted}
    _write_json(run_dir / "manifest.json", {
        "spec": spec.to_dict(), "files": {"train": "train.tsv", "test": "test.tsv"},
        "counts": {"train": len(train_set), "test": len(test_set)}, "planted": planted})
    _snapshot(run_dir, args)
    print(f"train {len(train_set)} test {len(test_set)} -> {run_dir}")
    return EXIT_OK


def cmd_train(args, run_dir: Path) -> int:
    train_set, _, _ = load_data(args, "train")
    cfg = _train_config(args)
    state, start = None, 0
    if args.resume:
        model, tensors, extra = load_checkpoint(args.resume, with_extra=True)
        state = AdamState.from_tensors(tensors, int(extra.get("adam_t", 0)))
        start = int(extra.get("epoch", 0))
        # --epochs counts from the start of the original run
        if args.epochs is not None:
            if args.epochs <= start:
                raise UsageError(f"checkpoint is already at epoch {start}; "
                                 f"--epochs {args.epochs} leaves nothing to train")
            cfg.max_epochs = args.epochs - start
    else:
        model = build_model(model_config(args), args.seed)
    result = train(model, train_set, cfg, state=state, start_epoch=start)
    last = result.history[-1]["epoch"] if result.history else start
    save_checkpoint(model, run_dir / "model.ckpt", extra_tensors=result.state.to_tensors(),
                    extra={"epoch": last, "best_epoch": result.best_epoch,
                           "adam_t": result.state.t})
    _write_json(run_dir / "metrics.json", {"preset": model.config.preset_name,
                                            "best_epoch": result.best_epoch,
                                            "history": result.history})
    _snapshot(run_dir, args, {"train_config": vars(cfg), "model_config": model.config.to_dict()})
    val = [h["val_loss"] for h in result.history if h["val_loss"] is not None]
    best = f"{min(val):.4f}" if val else "n/a"
    print(f"{model.config.preset_name}: {len(result.history)} epochs, best epoch "
          f"{result.best_epoch}, val loss {best} -> {run_dir / 'model.ckpt'}")
    return EXIT_OK


def _checkpoint(args):
    if not args.checkpoints:
        raise UsageError(f"{args.command} needs a checkpoint")
    return load_checkpoint(args.checkpoints[0])


def cmd_evaluate(args, run_dir: Path) -> int:
    if len(args.checkpoints) != 1:
        raise UsageError("evaluate takes exactly one checkpoint")
    model = _checkpoint(args)
    test_set, _, _ = load_data(args, "test")
    report = evaluate_auc(model, test_set)
    doc = report.to_dict([r.id for r in test_set])
    doc["preset"] = model.config.preset_name
    _write_json(run_dir / "report.json", doc)
    _snapshot(run_dir, args)
    print(f"AUC {report.auc:.4f} on {len(test_set)} sequences -> {run_dir / 'report.json'}")
    return EXIT_OK


def _find_record(args):
    test_set, planted, motif_name = load_data(args, "test")
    try:
        return test_set.get(args.sequence_id), planted, motif_name
    except KeyError:
        pass
    if args.data or args.synthetic_spec:
        train_set, planted_tr, _ = load_data(args, "train")
        try:
            return train_set.get(args.sequence_id), {**planted, **planted_tr}, motif_name
        except KeyError:
            pass
    ids = [r.id for r in test_set]
    shown = ", ".join(ids[:20]) + (f", ... ({len(ids)} total)" if len(ids) > 20 else "")
    raise DataError(f"unknown sequence id {args.sequence_id!r}; available: {shown}")


def cmd_dashboard(args, run_dir: Path) -> int:
    if not 1 <= len(args.checkpoints) <= 3:
        raise UsageError("dashboard takes one to three checkpoints")
    if not args.sequence_id:
        raise UsageError("dashboard needs --sequence-id")
    models = [load_checkpoint(p) for p in args.checkpoints]
    record, planted, motif_name = _find_record(args)
    x = one_hot_encode(record.sequence)
    panels = []
    for model in models:
        name = model.config.preset_name
        prob, _ = predict(model, x)
        sal = saliency_map(model, x)
        panel = ModelPanel(name, model.config.architecture, prob, saliency=sal.magnitudes)
        if model.config.architecture != "CNN":
            ts = temporal_output_scores(model, x)
            panel.temporal_forward, panel.temporal_backward = ts.forward, ts.backward
        opt = class_optimize(model, len(record.sequence), ClassOptConfig(seed=args.seed))
        start = class_opt_motif_window(opt)
        panel.optimized = Pwm(opt.display[start:start + MOTIF_WIDTH], name=f"{name} class-opt")
        panels.append(panel)
    annotations = []
    if record.id in planted:
        w = MOTIF_WIDTH
        annotations.append(Annotation(motif_name or "planted motif", int(planted[record.id]), w))
    spec = DashboardSpec(f"DeMo Dashboard: {record.id}", record.id, record.sequence, panels,
                         annotations)
    out = render_dashboard(spec, run_dir / "dashboard.html")
    _snapshot(run_dir, args)
    print(f"dashboard -> {out}")
    return EXIT_OK


def extract_motif(model, method: str, records, seed: int = 0) -> tuple[Pwm, dict]:
    """One PWM from ``records`` (positives) by the given visualization."""
    name = f"{model.config.preset_name} {method}"
    if method == "class-opt":
        length = len(records[0].sequence) if records else 101
        opt = class_optimize(model, length, ClassOptConfig(seed=seed))
        start = class_opt_motif_window(opt)
        return Pwm(opt.display[start:start + MOTIF_WIDTH], name=name), {"start": start}
    windows, spare, fallbacks = [], [], 0
    for r in records:
        x = one_hot_encode(r.sequence)
        if method == "saliency":
            ext = extract_saliency_motif(saliency_map(model, x), r.sequence)
        elif method == "temporal":
            ext = extract_temporal_motif(temporal_output_scores(model, x), r.sequence)
            if ext.fallback:
                fallbacks += 1
                spare.append(ext.sequence)
                continue
        elif method == "conv-activation":
            ext = conv_activation_motif(model, x)
        else:
            raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
        windows.append(ext.sequence)
    # with no 0.5 crossing anywhere, the largest-rise windows are the best there is
    all_fallback = not windows and bool(spare)
    if all_fallback:
        windows = spare
    if not windows:
        raise DataError(f"no {method} windows extracted")
    return build_pwm(windows, name=name), {"sequences": len(records), "windows": len(windows),
                                          "fallbacks": fallbacks, "all_fallback": all_fallback}


def cmd_motifs(args, run_dir: Path) -> int:
    if len(args.checkpoints) != 1:
        raise UsageError("motifs takes exactly one checkpoint")
    if args.method not in METHODS:
        raise UsageError(f"--method must be one of {', '.join(METHODS)}")
    model = _checkpoint(args)
    test_set, _, _ = load_data(args, "test")
    positives = test_set.positives()[:MAX_MOTIF_SEQUENCES]
    if not positives:
        raise DataError("dataset has no positive sequences")
    pwm, info = extract_motif(model, args.method, positives, args.seed)
    write_meme_minimal([pwm], run_dir / "motifs.meme")
    summary = {"method": args.method, "motifs": 1, **info}
    if args.compare_against:
        targets = (load_bundled_motifs() if args.compare_against == "bundled"
                   else read_meme_minimal(args.compare_against))
        rng = np.random.default_rng(args.seed)
        lines = [compare_motifs(pwm, t, rng=rng).to_json() for t in targets]
        (run_dir / "matches.jsonl").write_text("".join(l + "\n" for l in lines))
        summary["matches"] = sum(json.loads(l)["match"] for l in lines)
    _write_json(run_dir / "summary.json", summary)
    _snapshot(run_dir, args)
    print(f"{args.method}: {pwm.consensus()} -> {run_dir / 'motifs.meme'}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "evaluate": cmd_evaluate,
            "dashboard": cmd_dashboard, "motifs": cmd_motifs}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepmotif", description=__doc__)
    p.add_argument("--version", action="version", version=f"deepmotif {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("checkpoints", nargs="*", help="checkpoint file(s)")
    p.add_argument("--data", help="dataset directory (train.tsv/test.tsv) or TSV file")
    p.add_argument("--synthetic-spec", help="synthetic dataset spec (JSON)")
    p.add_argument("--preset", default="Medium CNN", help="preset name, e.g. \"Medium CNN\"")
    p.add_argument("--config", help="model config JSON (overrides --preset)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help=f"output root (default ${OUT_ENV} or ./runs)")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--sequence-id")
    p.add_argument("--method", choices=METHODS, default="saliency")
    p.add_argument("--compare-against", help="MEME file of known motifs, or 'bundled'")
    p.add_argument("--resume", help="checkpoint to continue training from")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    root = args.out or os.environ.get(OUT_ENV) or "runs"
    try:
        if args.threads is not None:
            from threadpoolctl import threadpool_limits
            threadpool_limits(args.threads)
        run_dir = make_run_dir(root, args.command)
        return COMMANDS[args.command](args, run_dir)
    except (UsageError, ConfigError, UnsupportedArchitectureError) as exc:
        print(f"deepmotif: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, MotifError, CheckpointError, SequenceTooShortError, DashboardError,
            OSError, ValueError) as exc:
        print(f"deepmotif: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"deepmotif: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
