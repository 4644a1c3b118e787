"""
Entropy-gated inference: the exit head answers when its base-10 entropy is
strictly below the threshold, otherwise the backbone tail resumes from the
cached branch-point activation.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .arch import BranchGraph, classify
from .errors import ConfigurationError

# cost charged for one entropy evaluation over 10 classes (one op per class)
ENTROPY_FLOPS = 10

LOG_HEADER = ["index", "true_label", "pred_label", "snr_db", "exit_taken", "entropy", "latency_ns", "flops"]


@dataclass(frozen=True)
class GateConfig:
    threshold: float = 0.35
    repeats: int = 1  # >1: report the median latency of that many runs

    def __post_init__(self):
        if not self.threshold >= 0:
            raise ConfigurationError(f"threshold must be >= 0, got {self.threshold}")
        if self.repeats < 1:
            raise ConfigurationError(f"repeats must be >= 1, got {self.repeats}")

    def accepts(self, h: float) -> bool:
        return h < self.threshold


@dataclass
class InferenceRecord:
    index: int
    true_label: int
    pred_label: int
    snr_db: int
    exit_taken: bool
    entropy: float
    latency_ns: int
    flops: int

    @property
    def correct(self) -> bool:
        return self.pred_label == self.true_label


def entropy(p) -> float:
    """Shannon entropy in base 10; terms with p < 1e-12 count as zero."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p >= 1e-12]
    return float(-np.sum(nz * np.log10(nz))) + 0.0  # + 0.0 folds -0.0 into 0.0


def flop_count(g: BranchGraph, path: str) -> int:
    """Deterministic cost proxy for the ``exit`` or ``full`` decision path."""
    f = g.section_flops()
    if not g.has_exit:
        if path != "full":
            raise ConfigurationError("the baseline has only a full path")
        return f["tail"]
    exit_cost = f["common"] + f["exit_head"] + ENTROPY_FLOPS
    if path == "exit":
        return exit_cost
    if path == "full":
        return exit_cost + f["tail"]
    raise ConfigurationError(f"path must be 'exit' or 'full', got {path!r}")


def _gated(g, x, threshold):
    z1 = g.forward_pass1(x)
    h = entropy(z1)
    if h < threshold:
        return int(classify(z1)), True, h
    return int(classify(g.forward_pass2())), False, h


def infer(g: BranchGraph, x, gate: GateConfig = GateConfig(), *, index=0, true_label=-1, snr_db=0) -> InferenceRecord:
    """Classify one (2, 128) frame; latency covers forward passes and the entropy test."""
    x = np.asarray(x)
    times = []
    for _ in range(gate.repeats):
        if g.has_exit:
            t0 = time.perf_counter_ns()
            label, exited, h = _gated(g, x, gate.threshold)
            times.append(time.perf_counter_ns() - t0)
        else:
            t0 = time.perf_counter_ns()
            z = g.forward_backbone(x)
            label = int(classify(z))
            times.append(time.perf_counter_ns() - t0)
            exited, h = False, entropy(z)
    flops = flop_count(g, "exit" if exited else "full")
    return InferenceRecord(index, int(true_label), label, int(snr_db), exited, h,
                           int(np.median(times)), flops)


def infer_set(g: BranchGraph, dataset, gate: GateConfig = GateConfig()) -> list[InferenceRecord]:
    """Per-sample (batch-1) inference over a :class:`~eeamc.signals.Dataset`, in input order."""
    if not len(dataset):
        raise ConfigurationError("infer_set needs a nonempty dataset")
    return [infer(g, dataset.frames[i], gate, index=i, true_label=dataset.labels[i], snr_db=dataset.snrs[i])
            for i in range(len(dataset))]


@dataclass
class PathProfile:
    """Both decision paths measured for every sample, so any threshold can be applied afterwards."""

    entropy: np.ndarray
    exit_label: np.ndarray
    full_label: np.ndarray
    exit_ns: np.ndarray  # forward pass 1 + entropy
    tail_ns: np.ndarray  # forward pass 2 from the cached Q
    true_label: np.ndarray
    snr_db: np.ndarray
    exit_flops: int
    full_flops: int

    def records(self, threshold: float) -> list[InferenceRecord]:
        out = []
        for i in range(len(self.entropy)):
            h = float(self.entropy[i])
            exited = h < threshold
            out.append(InferenceRecord(
                i, int(self.true_label[i]),
                int(self.exit_label[i] if exited else self.full_label[i]),
                int(self.snr_db[i]), exited, h,
                int(self.exit_ns[i] if exited else self.exit_ns[i] + self.tail_ns[i]),
                self.exit_flops if exited else self.full_flops))
        return out


def profile_paths(g: BranchGraph, dataset, repeats: int = 1) -> PathProfile:
    """Run pass 1, the entropy and pass 2 for every sample; entropies are computed once."""
    if not g.has_exit:
        raise ConfigurationError("profiling both paths needs an early-exit graph")
    n = len(dataset)
    ent = np.zeros(n)
    el, fl = np.zeros(n, np.int64), np.zeros(n, np.int64)
    e_ns, t_ns = np.zeros(n, np.int64), np.zeros(n, np.int64)
    for i in range(n):
        x = dataset.frames[i]
        te, tt = [], []
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            z1 = g.forward_pass1(x)
            h = entropy(z1)
            t1 = time.perf_counter_ns()
            z2 = g.forward_pass2()
            t2 = time.perf_counter_ns()
            te.append(t1 - t0)
            tt.append(t2 - t1)
        ent[i], el[i], fl[i] = h, classify(z1), classify(z2)
        e_ns[i], t_ns[i] = np.median(te), np.median(tt)
    return PathProfile(ent, el, fl, e_ns, t_ns, dataset.labels.astype(np.int64),
                       dataset.snrs.astype(np.int64), flop_count(g, "exit"), flop_count(g, "full"))


def write_inference_log(records, path, header_lines=()):
    with open(path, "w", newline="") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for r in records:
            w.writerow([r.index, r.true_label, r.pred_label, r.snr_db, int(r.exit_taken),
                        repr(r.entropy), r.latency_ns, r.flops])


def read_inference_log(path) -> list[InferenceRecord]:
    with open(path, newline="") as f:
        rows = [line for line in f if not line.startswith("#")]
    reader = csv.DictReader(rows)
    if reader.fieldnames != LOG_HEADER:
        raise ConfigurationError(f"{path}: unexpected inference-log header {reader.fieldnames}")
    out = []
    for row in reader:
        out.append(InferenceRecord(
            int(row["index"]), int(row["true_label"]), int(row["pred_label"]), int(row["snr_db"]),
            bool(int(row["exit_taken"])), float(row["entropy"]), int(row["latency_ns"]), int(row["flops"])))
    return out

