"""
Synthetic labelled IQ frames: ten modulation schemes over 21 SNR levels,
an AWGN channel, stratified splits and the little-endian ``AMCD`` file format.
"""

from __future__ import annotations

import enum
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FormatError

FRAME_LEN = 128
SNR_LEVELS = tuple(range(-20, 21, 2))

DATASET_MAGIC = b"AMCD"
DATASET_VERSION = 1
HEADER_SIZE = 16
RECORD_DTYPE = np.dtype([("label", "u1"), ("snr_db", "i1"), ("iq", "<f4", (2 * FRAME_LEN,))])


class Modulation(enum.IntEnum):
    # codes are frozen: the file format stores them
    BPSK = 0
    QPSK = 1
    PSK8 = 2
    QAM16 = 3
    QAM64 = 4
    PAM4 = 5
    CPFSK = 6
    GFSK = 7
    WBFM = 8
    AMDSB = 9


@dataclass(frozen=True)
class GenConfig:
    samples_per_cell: int = 200
    seed: int = 0
    sps: int = 8
    rolloff: float = 0.35
    filter_span: int = 8  # RRC length in symbols
    gfsk_bt: float = 0.35
    fsk_index: float = 0.5
    fm_deviation: float = 0.08  # peak frequency deviation, fraction of sample rate
    am_index: float = 0.5
    cfo: float = 0.0  # static carrier offset, fraction of sample rate
    random_phase: bool = False
    snr_levels: tuple = SNR_LEVELS

    def __post_init__(self):
        if self.samples_per_cell < 1:
            raise ConfigurationError(f"samples_per_cell must be positive, got {self.samples_per_cell}")
        if not 0 < self.rolloff <= 1:
            raise ConfigurationError(f"roll-off must be in (0, 1], got {self.rolloff}")
        if self.sps < 2 or self.filter_span < 1:
            raise ConfigurationError("sps must be >= 2 and filter_span >= 1")
        for snr in self.snr_levels:
            if snr % 2 or not -20 <= snr <= 20:
                raise ConfigurationError(f"SNR tags must be even and within [-20, 20], got {snr}")

    @property
    def guard(self) -> int:
        """Samples discarded on each side of the frame window (filter transient)."""
        return self.sps * self.filter_span

    @property
    def n_examples(self) -> int:
        return self.samples_per_cell * len(Modulation) * len(self.snr_levels)


@dataclass(frozen=True)
class LabeledExample:
    frame: np.ndarray  # (2, 128) float32, row 0 = I, row 1 = Q
    label: int
    snr_db: int


# ---------------------------------------------------------------------------
# Modulators


def rrc_taps(beta: float, sps: int, span: int) -> np.ndarray:
    """Root-raised-cosine impulse response with unit energy."""
    t = np.arange(-span * sps // 2, span * sps // 2 + 1) / sps
    h = np.empty_like(t)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            h[i] = 1 - beta + 4 * beta / np.pi
        elif abs(abs(ti) - 1 / (4 * beta)) < 1e-9:
            h[i] = beta / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
                                        + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta)))
        else:
            num = np.sin(np.pi * ti * (1 - beta)) + 4 * beta * ti * np.cos(np.pi * ti * (1 + beta))
            h[i] = num / (np.pi * ti * (1 - (4 * beta * ti) ** 2))
    return h / np.sqrt(np.sum(h ** 2))


def gaussian_taps(bt: float, sps: int, span: int = 4) -> np.ndarray:
    t = np.arange(-span * sps // 2, span * sps // 2 + 1) / sps
    h = np.exp(-2 * np.pi ** 2 * bt ** 2 * t ** 2 / np.log(2))
    return h / h.sum()


def _square_levels(m: int) -> np.ndarray:
    return np.arange(-(m - 1), m, 2, dtype=np.float64)


def constellation(scheme: Modulation) -> np.ndarray:
    """Unit average power symbol alphabet for the linear schemes, indexed by symbol value."""
    scheme = Modulation(scheme)
    if scheme is Modulation.BPSK:
        pts = np.array([1.0, -1.0], dtype=complex)
    elif scheme is Modulation.QPSK:
        # Gray map: bit pair (b0, b1) -> ((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)
        pts = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
    elif scheme is Modulation.PSK8:
        pts = np.exp(2j * np.pi * np.arange(8) / 8)
    elif scheme in (Modulation.QAM16, Modulation.QAM64):
        m = 4 if scheme is Modulation.QAM16 else 8
        lv = _square_levels(m)
        pts = (lv[:, None] + 1j * lv[None, :]).ravel()
    elif scheme is Modulation.PAM4:
        pts = _square_levels(4).astype(complex)
    else:
        raise ConfigurationError(f"{scheme.name} is not a linear constellation scheme")
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


def map_bits(scheme: Modulation, bits) -> np.ndarray:
    """Map a bit sequence to symbols (MSB-first grouping)."""
    pts = constellation(scheme)
    k = int(np.log2(len(pts)))
    bits = np.asarray(bits, dtype=np.int64).reshape(-1, k)
    idx = bits @ (1 << np.arange(k - 1, -1, -1))
    return pts[idx]


LINEAR = (Modulation.BPSK, Modulation.QPSK, Modulation.PSK8, Modulation.QAM16,
          Modulation.QAM64, Modulation.PAM4)


def _audio_source(rng, n) -> np.ndarray:
    """Three random low-frequency tones, peak-normalized to 1."""
    t = np.arange(n)
    f = rng.uniform(0.002, 0.1, 3)
    a = rng.uniform(0.5, 1.0, 3)
    ph = rng.uniform(0, 2 * np.pi, 3)
    m = (a[:, None] * np.sin(2 * np.pi * f[:, None] * t + ph[:, None])).sum(axis=0)
    return m / np.max(np.abs(m))


def modulate(scheme, rng: np.random.Generator, cfg: GenConfig = GenConfig()) -> np.ndarray:
    """Complex baseband burst of ``FRAME_LEN + 2 * cfg.guard`` samples with unit mean power.

    The burst starts after the pulse-shaping transient; a random sub-symbol
    timing offset is applied.
    """
    scheme = Modulation(scheme)
    sps, guard = cfg.sps, cfg.guard
    n_out = FRAME_LEN + 2 * guard
    n_sym = -(-(n_out + guard) // sps) + 2 * cfg.filter_span
    offset = int(rng.integers(sps))

    if scheme in LINEAR:
        pts = constellation(scheme)
        sym = pts[rng.integers(len(pts), size=n_sym)]
        up = np.zeros(n_sym * sps, dtype=complex)
        up[::sps] = sym
        taps = rrc_taps(cfg.rolloff, sps, cfg.filter_span)
        shaped = np.convolve(up, taps)
        start = len(taps) - 1 + offset
        s = shaped[start:start + n_out]
    elif scheme in (Modulation.CPFSK, Modulation.GFSK):
        a = 2.0 * rng.integers(2, size=n_sym) - 1
        freq = np.repeat(a, sps)
        if scheme is Modulation.GFSK:
            freq = np.convolve(freq, gaussian_taps(cfg.gfsk_bt, sps), mode="same")
        phase = np.cumsum(np.pi * cfg.fsk_index * freq / sps) + rng.uniform(0, 2 * np.pi)
        s = np.exp(1j * phase[guard + offset:guard + offset + n_out])
    else:
        m = _audio_source(rng, n_out)
        if scheme is Modulation.WBFM:
            s = np.exp(1j * 2 * np.pi * cfg.fm_deviation * np.cumsum(m))
        else:
            s = (1 + cfg.am_index * m).astype(complex)
    return s / np.sqrt(np.mean(np.abs(s) ** 2))


def cut_window(signal: np.ndarray, cfg: GenConfig = GenConfig()) -> np.ndarray:
    return signal[cfg.guard:cfg.guard + FRAME_LEN]


def apply_channel(signal, snr_db, rng: np.random.Generator, cfg: GenConfig = GenConfig(),
                  normalize: bool = True) -> np.ndarray:
    """AWGN channel (identity channel response) with optional static CFO and phase.

    Noise power is set from the power of the cut window; the returned
    ``(2, 128)`` float32 frame is rescaled to unit mean power when
    ``normalize`` is true.
    """
    if len(signal) < FRAME_LEN + cfg.guard:
        raise ConfigurationError(f"signal of {len(signal)} samples is shorter than window + guard")
    s = cut_window(np.asarray(signal, dtype=complex), cfg)
    if cfg.cfo or cfg.random_phase:
        phase0 = rng.uniform(0, 2 * np.pi) if cfg.random_phase else 0.0
        s = s * np.exp(1j * (2 * np.pi * cfg.cfo * np.arange(FRAME_LEN) + phase0))
    p_signal = np.mean(np.abs(s) ** 2)
    p_noise = p_signal / 10 ** (snr_db / 10)
    noise = np.sqrt(p_noise / 2) * (rng.standard_normal(FRAME_LEN) + 1j * rng.standard_normal(FRAME_LEN))
    r = s + noise
    if normalize:
        r = r / np.sqrt(np.mean(np.abs(r) ** 2))
    return np.stack([r.real, r.imag]).astype(np.float32)


# ---------------------------------------------------------------------------
# Dataset


def example_rng(seed: int, label: int, snr_db: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, label, snr_db + 20, index]))


def generate_example(cfg: GenConfig, label: int, snr_db: int, index: int) -> np.ndarray:
    rng = example_rng(cfg.seed, label, snr_db, index)
    return apply_channel(modulate(label, rng, cfg), snr_db, rng, cfg)


def cells(cfg: GenConfig):
    """(label, snr_db) cells in canonical dataset order."""
    return [(int(m), snr) for m in Modulation for snr in cfg.snr_levels]


def example_keys(cfg: GenConfig):
    """Yields (label, snr_db, index) for every example without synthesizing it."""
    for label, snr in cells(cfg):
        for i in range(cfg.samples_per_cell):
            yield label, snr, i


class Dataset:
    """Columnar container: ``frames`` (N, 2, 128) float32, ``labels`` uint8, ``snrs`` int8."""

    def __init__(self, frames, labels, snrs):
        self.frames = np.ascontiguousarray(frames, dtype=np.float32).reshape(-1, 2, FRAME_LEN)
        self.labels = np.asarray(labels, dtype=np.uint8)
        self.snrs = np.asarray(snrs, dtype=np.int8)
        if not len(self.frames) == len(self.labels) == len(self.snrs):
            raise ConfigurationError("frames, labels and snrs must have equal length")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> LabeledExample:
        return LabeledExample(self.frames[i], int(self.labels[i]), int(self.snrs[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.frames[idx], self.labels[idx], self.snrs[idx])

    def where_snr(self, lo=-100, hi=100) -> "Dataset":
        return self.subset(np.flatnonzero((self.snrs >= lo) & (self.snrs <= hi)))

    def equals(self, other: "Dataset") -> bool:
        """Bitwise equality of all three columns."""
        return (self.frames.tobytes() == other.frames.tobytes()
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.snrs, other.snrs))

    def cell_counts(self) -> dict:
        keys, counts = np.unique(np.stack([self.labels.astype(int), self.snrs.astype(int)]), axis=1,
                                 return_counts=True)
        return {(int(a), int(b)): int(c) for (a, b), c in zip(keys.T, counts)}

    @classmethod
    def from_examples(cls, examples) -> "Dataset":
        examples = list(examples)
        if not examples:
            return cls(np.zeros((0, 2, FRAME_LEN)), [], [])
        return cls(np.stack([e.frame for e in examples]), [e.label for e in examples],
                   [e.snr_db for e in examples])


def _generate_cells(cfg, cell_list):
    frames = [generate_example(cfg, label, snr, i)
              for label, snr in cell_list for i in range(cfg.samples_per_cell)]
    return np.stack(frames) if frames else np.zeros((0, 2, FRAME_LEN), np.float32)


def worker_count() -> int:
    env = os.environ.get("AMC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"AMC_THREADS must be an integer, got {env!r}") from None
    return 1


def generate_dataset(cfg: GenConfig = GenConfig(), workers: int | None = None) -> Dataset:
    """All ``samples_per_cell`` x 10 x len(snr_levels) examples in canonical order.

    Each example draws from its own generator seeded by (seed, label, snr,
    index), so the output does not depend on ``workers``.
    """
    workers = worker_count() if workers is None else workers
    all_cells = cells(cfg)
    if workers > 1:
        chunks = [all_cells[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_generate_cells, [cfg] * workers, chunks))
        by_cell = {}
        for chunk, part in zip(chunks, parts):
            for j, c in enumerate(chunk):
                by_cell[c] = part[j * cfg.samples_per_cell:(j + 1) * cfg.samples_per_cell]
        frames = np.concatenate([by_cell[c] for c in all_cells])
    else:
        frames = _generate_cells(cfg, all_cells)
    n = cfg.samples_per_cell
    labels = np.repeat([c[0] for c in all_cells], n)
    snrs = np.repeat([c[1] for c in all_cells], n)
    return Dataset(frames, labels, snrs)


def split_sizes(n: int) -> tuple[int, int, int]:
    """(train, val, test) for one cell: floor 10% test, floor 10% of the rest val."""
    n_test = n // 10
    n_val = (n - n_test) // 10
    return n - n_test - n_val, n_val, n_test


def split_dataset(ds: Dataset, seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Stratified per (label, snr) cell; indices inside each split stay in input order."""
    rng = np.random.default_rng(seed)
    key = ds.labels.astype(np.int64) * 256 + (ds.snrs.astype(np.int64) + 128)
    parts = ([], [], [])
    for k in np.unique(key):
        members = np.flatnonzero(key == k)
        if len(members) < 10:
            raise ConfigurationError(
                f"cell (label={k // 256}, snr={k % 256 - 128}) has {len(members)} examples; need >= 10")
        perm = members[rng.permutation(len(members))]
        n_train, n_val, n_test = split_sizes(len(members))
        parts[2].append(perm[:n_test])
        parts[1].append(perm[n_test:n_test + n_val])
        parts[0].append(perm[n_test + n_val:])
    if not len(ds):
        return ds, ds, ds
    return tuple(ds.subset(np.sort(np.concatenate(p))) for p in parts)


def write_dataset(ds: Dataset, path):
    rec = np.empty(len(ds), dtype=RECORD_DTYPE)
    rec["label"] = ds.labels
    rec["snr_db"] = ds.snrs
    rec["iq"] = ds.frames.reshape(len(ds), 2 * FRAME_LEN)
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC + struct.pack("<IQ", DATASET_VERSION, len(ds)))
        f.write(rec.tobytes())


def read_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < HEADER_SIZE:
        raise FormatError(f"file too short for header ({len(buf)} bytes)", len(buf))
    if buf[:4] != DATASET_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {DATASET_MAGIC!r}", 0)
    version, count = struct.unpack_from("<IQ", buf, 4)
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}", 4)
    expected = HEADER_SIZE + count * RECORD_DTYPE.itemsize
    if len(buf) != expected:
        where = min(len(buf), expected)
        raise FormatError(f"expected {expected} bytes for {count} examples, file has {len(buf)}", where)
    rec = np.frombuffer(buf, dtype=RECORD_DTYPE, count=count, offset=HEADER_SIZE)
    labels = rec["label"].copy()
    if count and labels.max() >= len(Modulation):
        bad = int(np.argmax(labels >= len(Modulation)))
        raise FormatError(f"label {labels[bad]} out of range", HEADER_SIZE + bad * RECORD_DTYPE.itemsize)
    return Dataset(rec["iq"].reshape(count, 2, FRAME_LEN), labels, rec["snr_db"].copy())
