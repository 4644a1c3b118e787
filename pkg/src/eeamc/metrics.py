"""
Per-SNR aggregation of inference records: accuracy, early-exit fraction, the
four-way exit/correct breakdown, latency and FLOPs, plus threshold sweeps and
their CSV forms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .arch import BranchGraph
from .errors import ConfigurationError
from .inference import GateConfig, infer_set, profile_paths
from .signals import Modulation

REPORT_HEADER = ["snr_db", "n", "accuracy", "exit_fraction", "exit_correct", "exit_incorrect",
                 "full_correct", "full_incorrect", "mean_latency_ns", "median_latency_ns", "mean_flops"]
COUNT_FIELDS = ("n", "exit_correct", "exit_incorrect", "full_correct", "full_incorrect")


@dataclass
class SnrRow:
    snr_db: int
    exit_correct: int = 0
    exit_incorrect: int = 0
    full_correct: int = 0
    full_incorrect: int = 0
    mean_latency_ns: float = 0.0
    median_latency_ns: float = 0.0
    mean_flops: float = 0.0

    @property
    def n(self) -> int:
        return self.exit_correct + self.exit_incorrect + self.full_correct + self.full_incorrect

    @property
    def accuracy(self) -> float:
        return (self.exit_correct + self.full_correct) / self.n if self.n else float("nan")

    @property
    def exit_fraction(self) -> float:
        return (self.exit_correct + self.exit_incorrect) / self.n if self.n else float("nan")

    def csv_cells(self) -> list[str]:
        return [str(self.snr_db), str(self.n), repr(self.accuracy), repr(self.exit_fraction),
                str(self.exit_correct), str(self.exit_incorrect), str(self.full_correct),
                str(self.full_incorrect), f"{self.mean_latency_ns:.1f}", f"{self.median_latency_ns:.1f}",
                f"{self.mean_flops:.1f}"]


@dataclass
class MetricsReport:
    rows: list  # SnrRow, ascending snr_db
    confusion: np.ndarray  # (10, 10) counts, rows = true label
    config: dict = field(default_factory=dict)

    def row(self, snr_db) -> SnrRow:
        for r in self.rows:
            if r.snr_db == snr_db:
                return r
        raise KeyError(snr_db)

    @property
    def n(self) -> int:
        return sum(r.n for r in self.rows)

    def pooled(self, lo=-100, hi=100) -> SnrRow:
        """Counts summed over ``lo <= snr <= hi``; latency/FLOP means are sample-weighted."""
        sel = [r for r in self.rows if lo <= r.snr_db <= hi]
        out = SnrRow(snr_db=lo)
        for f in COUNT_FIELDS[1:]:
            setattr(out, f, sum(getattr(r, f) for r in sel))
        if out.n:
            out.mean_latency_ns = sum(r.mean_latency_ns * r.n for r in sel) / out.n
            out.mean_flops = sum(r.mean_flops * r.n for r in sel) / out.n
        return out

    def check_conservation(self, class_counts=None):
        """Raise AssertionError if any count identity fails.

        ``class_counts`` (true-label histogram of the evaluated samples) adds
        the confusion row-sum check.
        """
        for r in self.rows:
            four = r.exit_correct + r.exit_incorrect + r.full_correct + r.full_incorrect
            if four != r.n or r.n < 1:
                raise AssertionError(f"four-way counts do not sum to n at {r.snr_db} dB")
            if not (0 <= r.accuracy <= 1 and 0 <= r.exit_fraction <= 1):
                raise AssertionError(f"fraction out of range at {r.snr_db} dB")
        if int(self.confusion.sum()) != self.n:
            raise AssertionError("confusion total disagrees with sample count")
        if int(np.trace(self.confusion)) != sum(r.exit_correct + r.full_correct for r in self.rows):
            raise AssertionError("confusion diagonal disagrees with correct counts")
        if class_counts is not None and not np.array_equal(self.confusion.sum(axis=1), class_counts):
            raise AssertionError("confusion row sums differ from per-class sample counts")


def aggregate(records, config: dict | None = None, num_classes: int = len(Modulation)) -> MetricsReport:
    if not records:
        raise ConfigurationError("aggregate needs at least one record")
    by_snr: dict[int, list] = {}
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for r in records:
        by_snr.setdefault(int(r.snr_db), []).append(r)
        confusion[r.true_label, r.pred_label] += 1
    rows = []
    for snr in sorted(by_snr):
        recs = by_snr[snr]
        row = SnrRow(snr)
        for r in recs:
            ok = r.pred_label == r.true_label
            if r.exit_taken:
                row.exit_correct += ok
                row.exit_incorrect += not ok
            else:
                row.full_correct += ok
                row.full_incorrect += not ok
        lat = np.array([r.latency_ns for r in recs], dtype=np.float64)
        row.mean_latency_ns = float(lat.mean())
        row.median_latency_ns = float(np.median(lat))
        row.mean_flops = float(np.mean([r.flops for r in recs]))
        rows.append(row)
    return MetricsReport(rows, confusion, dict(config or {}))


def evaluate(g: BranchGraph, dataset, gate: GateConfig, config: dict | None = None):
    """Gated inference over a dataset; returns (records, report)."""
    records = infer_set(g, dataset, gate)
    return records, aggregate(records, config)


def threshold_sweep(g: BranchGraph, dataset, thresholds=(0.05, 0.35, 0.6), repeats: int = 1,
                    config: dict | None = None):
    """One report per threshold from a single profiling pass.

    Entropies (and both paths' labels and timings) are measured once per
    sample, and each threshold only re-applies the gate, so exit sets are
    nested across thresholds by construction.
    """
    profile = profile_paths(g, dataset, repeats)
    out = []
    for t in thresholds:
        GateConfig(t)  # validates
        cfg = dict(config or {})
        cfg["gate.threshold"] = t
        out.append((t, aggregate(profile.records(t), cfg)))
    return out


def _write_comments(f, config):
    for k, v in config.items():
        f.write(f"# {k} = {v}\n")


def emit_csv(report: MetricsReport, path):
    try:
        with open(path, "w", newline="") as f:
            _write_comments(f, report.config)
            f.write(",".join(REPORT_HEADER) + "\n")
            for r in report.rows:
                f.write(",".join(r.csv_cells()) + "\n")
    except OSError as e:
        raise OSError(f"cannot write report {path}: {e}") from e


def emit_sweep_csv(sweep, path, config: dict | None = None):
    try:
        with open(path, "w", newline="") as f:
            _write_comments(f, config or {})
            f.write(",".join(["threshold"] + REPORT_HEADER) + "\n")
            for t, report in sweep:
                for r in report.rows:
                    f.write(",".join([repr(float(t))] + r.csv_cells()) + "\n")
    except OSError as e:
        raise OSError(f"cannot write sweep {path}: {e}") from e


def emit_confusion_csv(report: MetricsReport, path):
    names = [m.name for m in Modulation][:report.confusion.shape[0]]
    try:
        with open(path, "w", newline="") as f:
            _write_comments(f, report.config)
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["true\\pred"] + names)
            for name, row in zip(names, report.confusion):
                w.writerow([name] + [int(c) for c in row])
    except OSError as e:
        raise OSError(f"cannot write confusion matrix {path}: {e}") from e


def _data_lines(path):
    with open(path, newline="") as f:
        return [line for line in f if not line.startswith("#")]


def _row_from_dict(d) -> SnrRow:
    return SnrRow(int(d["snr_db"]), int(d["exit_correct"]), int(d["exit_incorrect"]), int(d["full_correct"]),
                  int(d["full_incorrect"]), float(d["mean_latency_ns"]), float(d["median_latency_ns"]),
                  float(d["mean_flops"]))


def read_report_csv(path) -> list[SnrRow]:
    reader = csv.DictReader(_data_lines(path))
    if reader.fieldnames != REPORT_HEADER:
        raise ConfigurationError(f"{path}: unexpected report header {reader.fieldnames}")
    rows = []
    for d in reader:
        row = _row_from_dict(d)
        if row.n != int(d["n"]):
            raise ConfigurationError(f"{path}: counts do not sum to n at {row.snr_db} dB")
        rows.append(row)
    return rows


def read_sweep_csv(path) -> dict[float, list[SnrRow]]:
    reader = csv.DictReader(_data_lines(path))
    if reader.fieldnames != ["threshold"] + REPORT_HEADER:
        raise ConfigurationError(f"{path}: unexpected sweep header {reader.fieldnames}")
    out: dict[float, list] = {}
    for d in reader:
        out.setdefault(float(d["threshold"]), []).append(_row_from_dict(d))
    return out


def read_config_comments(path) -> dict:
    out = {}
    with open(path) as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition("=")
            out[key.strip()] = value.strip()
    return out
