"""
Command line: ``python -m eeamc {generate,train,eval,sweep,report} [flags]``.

Flags override config-file keys:

    --seed N          gen.seed, arch.seed and train.seed
    --variant NAME    arch.variant
    --threshold T     gate.threshold
    --thresholds LIST gate.sweep (sweep only)
    --dataset PATH    paths.dataset
    --checkpoint PATH paths.checkpoint
    --out DIR         paths.out

Failures print one ``error code=<n> kind=<kind> message=<text>`` line to
stderr and remove any files the command had started writing.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import config as cfgmod
from .arch import build, load_weights, save_weights
from .errors import ConfigurationError, FormatError
from .inference import infer_set, read_inference_log, write_inference_log
from .metrics import aggregate, emit_confusion_csv, emit_csv, emit_sweep_csv, threshold_sweep
from .signals import generate_dataset, read_dataset, split_dataset, write_dataset
from .train import accuracy, train

log = logging.getLogger("eeamc")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_NO_DATASET = 3
EXIT_NO_CHECKPOINT = 4
EXIT_FORMAT = 5

class CommandError(Exception):
    def __init__(self, code, kind, message):
        super().__init__(message)
        self.code = code
        self.kind = kind

class _Outputs:
    """Tracks files a command creates so they can be removed on failure."""

    def __init__(self):
        self.paths = []

    def add(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(path)
        return path

    def discard(self):
        for p in self.paths:
            if p.exists():
                p.unlink()

def resolve(args) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load_config(args.config) if args.config else cfgmod.ExperimentConfig()
    overrides = []
    if args.seed is not None:
        overrides += [("gen.seed", args.seed), ("arch.seed", args.seed), ("train.seed", args.seed)]
    for flag, key in (("variant", "arch.variant"), ("threshold", "gate.threshold"),
                      ("thresholds", "gate.sweep"), ("dataset", "paths.dataset"),
                      ("checkpoint", "paths.checkpoint"), ("out", "paths.out")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append((key, value))
    for key, value in overrides:
        cfg = cfgmod.set_key(cfg, key, str(value), line=f"--{key}")
    return cfg

def _provenance(cfg):
    return [f"{k} = {v}" for k, v in cfgmod.resolved_items(cfg).items()]

def _load_dataset(cfg):
    path = cfg.paths.dataset
    if not os.path.exists(path):
        raise CommandError(EXIT_NO_DATASET, "missing_dataset", f"dataset not found: {path}")
    return read_dataset(path)

def _load_checkpoint(cfg):
    path = cfg.paths.checkpoint
    if not os.path.exists(path):
        raise CommandError(EXIT_NO_CHECKPOINT, "missing_checkpoint", f"checkpoint not found: {path}")
    return load_weights(path, dropout_seed=cfg.train.seed)

def _test_split(cfg):
    return split_dataset(_load_dataset(cfg), cfg.gen.seed)[2]

def cmd_generate(cfg, out: _Outputs):
    ds = generate_dataset(cfg.gen)
    path = out.add(cfg.paths.dataset)
    write_dataset(ds, path)
    sidecar = out.add(str(path) + ".config")
    sidecar.write_text(cfgmod.dump_config(cfg))
    log.info("wrote %d examples to %s", len(ds), path)

def cmd_train(cfg, out: _Outputs):
    train_set, val_set, test_set = split_dataset(_load_dataset(cfg), cfg.gen.seed)
    g = build(cfg.variant, cfg.arch.to_arch_config(), seed=cfg.arch.seed)
    g, history = train(g, train_set, val_set, cfg.train)
    ckpt = out.add(cfg.paths.checkpoint)
    save_weights(g, ckpt)
    hist_path = out.add(Path(cfg.paths.out) / "history.csv")
    history.to_csv(hist_path, _provenance(cfg))
    last = history.records[-1]
    final = {
        "final.epochs_run": len(history),
        "final.loss1": last.loss1,
        "final.loss2": last.loss2,
        "final.val_acc_exit": last.val_acc_exit,
        "final.val_acc_backbone": last.val_acc_backbone,
        "final.test_acc_backbone": accuracy(g, test_set, "backbone"),
    }
    if g.has_exit:
        final["final.test_acc_exit"] = accuracy(g, test_set, "exit")
    sidecar = out.add(str(ckpt) + ".txt")
    sidecar.write_text(cfgmod.dump_config(cfg) + "".join(f"{k} = {v}\n" for k, v in final.items()))
    log.info("saved %s (%s)", ckpt, final)

def cmd_eval(cfg, out: _Outputs):
    g = _load_checkpoint(cfg)
    test = _test_split(cfg)
    records = infer_set(g, test, cfg.gate.to_gate_config())
    outdir = Path(cfg.paths.out)
    write_inference_log(records, out.add(outdir / "inference_log.csv"), _provenance(cfg))
    report = aggregate(records, cfgmod.resolved_items(cfg))
    emit_csv(report, out.add(outdir / "report.csv"))
    emit_confusion_csv(report, out.add(outdir / "confusion.csv"))
    log.info("accuracy %.4f, exit fraction %.4f over %d samples",
             report.pooled().accuracy, report.pooled().exit_fraction, report.n)

def cmd_sweep(cfg, out: _Outputs):
    g = _load_checkpoint(cfg)
    if not g.has_exit:
        raise CommandError(EXIT_CONFIG, "config", "sweep needs an early-exit checkpoint")
    test = _test_split(cfg)
    sweep = threshold_sweep(g, test, cfg.gate.sweep, cfg.gate.repeats, cfgmod.resolved_items(cfg))
    emit_sweep_csv(sweep, out.add(Path(cfg.paths.out) / "sweep.csv"), cfgmod.resolved_items(cfg))
    for t, rep in sweep:
        log.info("T=%g accuracy %.4f exit fraction %.4f", t, rep.pooled().accuracy, rep.pooled().exit_fraction)

def cmd_report(cfg, out: _Outputs):
    outdir = Path(cfg.paths.out)
    log_path = outdir / "inference_log.csv"
    if not log_path.exists():
        raise CommandError(EXIT_CONFIG, "missing_log", f"inference log not found: {log_path}")
    records = read_inference_log(log_path)
    report = aggregate(records, cfgmod.resolved_items(cfg))
    emit_csv(report, out.add(outdir / "report.csv"))
    emit_confusion_csv(report, out.add(outdir / "confusion.csv"))

COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "report": cmd_report}

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eeamc", description="Early-exit modulation classification experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat section.key = value file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--variant")
        p.add_argument("--threshold", type=float)
        p.add_argument("--dataset")
        p.add_argument("--checkpoint")
        p.add_argument("-q", "--quiet", action="store_true")
        if name == "sweep":
            p.add_argument("--thresholds", help="comma-separated list, default 0.05,0.35,0.6")
    return parser

def _fail(code, kind, message):
    message = " ".join(str(message).split())
    print(f"error code={code} kind={kind} message={message}", file=sys.stderr)
    return code

def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    outputs = _Outputs()
    try:
        cfg = resolve(args)
        COMMANDS[args.command](cfg, outputs)
    except CommandError as e:
        outputs.discard()
        return _fail(e.code, e.kind, e)
    except FormatError as e:
        outputs.discard()
        return _fail(EXIT_FORMAT, "format", e)
    except (ConfigurationError, OSError) as e:
        outputs.discard()
        return _fail(EXIT_CONFIG, "config" if isinstance(e, ConfigurationError) else "io", e)
    except Exception as e:  # noqa: BLE001 - top-level boundary
        outputs.discard()
        return _fail(EXIT_INTERNAL, "internal", f"{type(e).__name__}: {e}")
    return EXIT_OK

if __name__ == "__main__":
    sys.exit(main())
