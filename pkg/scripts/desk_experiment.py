"""Desk-scale run: generate the AWGN set, train the baseline and early-exit
variants, then write per-SNR reports and a threshold sweep for each.

    python scripts/desk_experiment.py --out runs/desk --variants baseline v1
"""

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np

from eeamc.arch import build, load_weights, save_weights
from eeamc.inference import GateConfig, flop_count
from eeamc.metrics import emit_confusion_csv, emit_csv, emit_sweep_csv, evaluate, threshold_sweep
from eeamc.signals import GenConfig, generate_dataset, read_dataset, split_dataset, write_dataset
from eeamc.train import TrainConfig, accuracy, train

log = logging.getLogger("desk")


def bins(report):
    return {f"{lo}..{hi}": report.pooled(lo, hi).accuracy for lo, hi in ((-20, -8), (-6, 6), (8, 20))}


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--samples-per-cell", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variants", nargs="+", default=["baseline", "v0", "v1", "v2", "v3"])
    p.add_argument("--epochs-baseline", type=int, default=30)
    p.add_argument("--epochs-ee", type=int, default=15)
    p.add_argument("--threshold", type=float, default=0.35)
    p.add_argument("--reuse", action="store_true", help="load existing checkpoints instead of training")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / "dataset.amcd"
    gen = GenConfig(samples_per_cell=args.samples_per_cell, seed=args.seed)
    if data_path.exists():
        ds = read_dataset(data_path)
    else:
        t0 = time.perf_counter()
        ds = generate_dataset(gen)
        write_dataset(ds, data_path)
        log.info("generated %d frames in %.1fs", len(ds), time.perf_counter() - t0)
    tr, va, te = split_dataset(ds, args.seed)

    summary = {}
    for name in args.variants:
        ckpt = out / f"{name}.eewt"
        if args.reuse and ckpt.exists():
            g = load_weights(ckpt, args.seed)
        else:
            epochs = args.epochs_baseline if name == "baseline" else args.epochs_ee
            t0 = time.perf_counter()
            g, hist = train(build(name, seed=args.seed), tr, va, TrainConfig(epochs=epochs, seed=args.seed))
            log.info("%s: trained %d epochs in %.0fs", name, epochs, time.perf_counter() - t0)
            save_weights(g, ckpt)
            hist.to_csv(out / f"{name}_history.csv")
        config = {"variant": name, "gate.threshold": args.threshold, "gen.samples_per_cell": args.samples_per_cell,
                  "seed": args.seed}
        _, report = evaluate(g, te, GateConfig(args.threshold), config)
        report.check_conservation(np.bincount(te.labels, minlength=10))
        emit_csv(report, out / f"{name}_report.csv")
        emit_confusion_csv(report, out / f"{name}_confusion.csv")
        entry = {
            "params": g.num_params(),
            "test_acc_backbone": accuracy(g, te),
            "gated_acc": report.pooled().accuracy,
            "acc_bins": bins(report),
            "latency_ns_snr_ge_10": report.pooled(10, 20).mean_latency_ns,
            "full_flops": flop_count(g, "full"),
        }
        if g.has_exit:
            sweep = threshold_sweep(g, te, (0.05, 0.35, 0.6), config=config)
            emit_sweep_csv(sweep, out / f"{name}_sweep.csv", config)
            entry.update({
                "test_acc_exit": accuracy(g, te, "exit"),
                "exit_flops": flop_count(g, "exit"),
                "exit_fraction_snr_ge_10": report.pooled(10, 20).exit_fraction,
                "exit_fraction_snr_le_-10": report.pooled(-20, -10).exit_fraction,
                "sweep_exit_fraction": {t: rep.pooled().exit_fraction for t, rep in sweep},
            })
        summary[name] = entry
        log.info("%s: %s", name, json.dumps(entry))
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
