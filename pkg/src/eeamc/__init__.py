"""Early-exit 1-D CNNs for automatic modulation classification, in plain numpy."""

from .arch import ArchConfig, BranchGraph, Variant, build, build_baseline, build_ee_variant, classify
from .inference import GateConfig, InferenceRecord, entropy, flop_count, infer, infer_set
from .metrics import MetricsReport, aggregate, threshold_sweep
from .signals import Dataset, GenConfig, Modulation, generate_dataset, read_dataset, split_dataset, write_dataset
from .train import TrainConfig, train, train_baseline

__version__ = "0.1.0"
