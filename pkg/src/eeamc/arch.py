"""
Baseline 1-D CNN backbone and its single-exit variants V0-V3.

A :class:`BranchGraph` splits the backbone at a branch point into ``common``
(input -> branch point) and ``tail`` (branch point -> backbone softmax) and
attaches an ``exit_head`` classifier to the branch point. For the baseline the
common part and exit head are empty and the tail is the whole backbone.
"""

from __future__ import annotations

import copy
import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, FormatError, StateError
from .nn import (KIND_TAGS, BatchNorm1D, Conv1D, Dense, Dropout, Layer,
                 MaxPool1D, ReLU, Softmax)

NUM_CLASSES = 10


class Variant(str, enum.Enum):
    BASELINE = "baseline"
    V0 = "v0"
    V1 = "v1"
    V2 = "v2"
    V3 = "v3"

    @property
    def tag(self) -> int:
        return list(Variant).index(self)

    @property
    def branch_block(self) -> int | None:
        """1-based conv block after which the exit branches off."""
        return BRANCH_BLOCKS.get(self)

    @classmethod
    def parse(cls, name) -> "Variant":
        if isinstance(name, Variant):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ConfigurationError(
                f"unknown variant {name!r}; expected one of {[v.value for v in cls]}") from None


BRANCH_BLOCKS = {Variant.V0: 1, Variant.V1: 2, Variant.V2: 4, Variant.V3: 5}


@dataclass(frozen=True)
class ArchConfig:
    conv_plan: tuple = ((64, 3), (64, 3), (32, 3), (32, 3), (16, 3), (16, 3))
    pool_after: tuple = (False, True, False, True, False, True)
    batchnorm_after: tuple = (False, True, False, True, False, True)
    fc_widths: tuple = (128, 64, 10)
    exit_widths: tuple = (64, 10)
    dropout: float = 0.3
    num_classes: int = NUM_CLASSES
    input_shape: tuple = (2, 128)
    pool_window: int = 2
    bn_momentum: float = 0.1
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        if len(self.conv_plan) != 6:
            raise ConfigurationError(f"exactly 6 conv layers required, got {len(self.conv_plan)}")
        if len(self.pool_after) != 6 or len(self.batchnorm_after) != 6:
            raise ConfigurationError("pool/batchnorm placement needs one flag per conv block")
        if any(c < 1 or k < 1 for c, k in self.conv_plan):
            raise ConfigurationError(f"conv extents must be positive: {self.conv_plan}")
        if len(self.fc_widths) != 3:
            raise ConfigurationError(f"backbone needs 3 FC layers, got {self.fc_widths}")
        for widths in (self.fc_widths, self.exit_widths):
            if not widths or widths[-1] != self.num_classes or min(widths) < 1:
                raise ConfigurationError(f"FC widths {widths} must be positive and end in {self.num_classes}")
        if not 0 <= self.dropout < 1:
            raise ConfigurationError(f"dropout rate must be in [0, 1), got {self.dropout}")


def _conv_block(cfg: ArchConfig, i: int, in_ch: int, rng) -> list[Layer]:
    out_ch, k = cfg.conv_plan[i]
    layers = [Conv1D(in_ch, out_ch, k, stride=1, padding=k // 2, rng=rng), ReLU()]
    if cfg.pool_after[i]:
        layers.append(MaxPool1D(cfg.pool_window, cfg.pool_window))
    if cfg.batchnorm_after[i]:
        layers.append(BatchNorm1D(out_ch, cfg.bn_momentum, cfg.bn_epsilon))
    return layers


def _classifier(cfg: ArchConfig, in_shape, widths, rng, drop_rng) -> list[Layer]:
    """max-pool -> flatten+FC (-> ReLU -> dropout) ... -> FC(num_classes) -> softmax."""
    pool = MaxPool1D(cfg.pool_window, cfg.pool_window)
    layers: list[Layer] = [pool]
    d = int(np.prod(_checked_shape(pool, in_shape)))
    for j, w in enumerate(widths):
        layers.append(Dense(d, w, rng=rng))
        if j < len(widths) - 1:
            layers += [ReLU(), Dropout(cfg.dropout, rng=drop_rng)]
        d = w
    layers.append(Softmax())
    return layers


def _checked_shape(layer, shape):
    try:
        return layer.output_shape(shape)
    except ConfigurationError as e:
        raise ConfigurationError(f"layer {layer!r} cannot accept input {tuple(shape)}: {e}") from None


def propagate_shapes(layers, in_shape) -> list[tuple]:
    """Per-layer output shapes; raises naming the first layer that cannot fit."""
    shapes = []
    shape = tuple(in_shape)
    for layer in layers:
        shape = _checked_shape(layer, shape)
        shapes.append(shape)
    return shapes


def _backbone_blocks(cfg, rng):
    blocks, in_ch = [], cfg.input_shape[0]
    for i in range(6):
        blocks.append(_conv_block(cfg, i, in_ch, rng))
        in_ch = cfg.conv_plan[i][0]
    return blocks


def _assemble(variant: Variant, cfg: ArchConfig, seed: int) -> "BranchGraph":
    ss = np.random.SeedSequence(seed)
    init_ss, drop_ss = ss.spawn(2)
    rng = np.random.default_rng(init_ss)
    drop_rng = np.random.default_rng(drop_ss)
    blocks = _backbone_blocks(cfg, rng)
    b = variant.branch_block or 0
    common = [layer for block in blocks[:b] for layer in block]
    convs = [layer for block in blocks[b:] for layer in block]
    q_shape = propagate_shapes(common, cfg.input_shape)[-1] if common else cfg.input_shape
    conv_out = propagate_shapes(convs, q_shape)[-1]
    tail = convs + _classifier(cfg, conv_out, cfg.fc_widths, rng, drop_rng)
    exit_head = _classifier(cfg, q_shape, cfg.exit_widths, rng, drop_rng) if common else []
    g = BranchGraph(variant, common, exit_head, tail, tuple(cfg.input_shape))
    g.validate()
    return g


def build_baseline(cfg: ArchConfig | None = None, seed: int = 0) -> "BranchGraph":
    return _assemble(Variant.BASELINE, cfg or ArchConfig(), seed)


def build_ee_variant(variant, cfg: ArchConfig | None = None, seed: int = 0) -> "BranchGraph":
    variant = Variant.parse(variant)
    if variant is Variant.BASELINE:
        raise ConfigurationError("build_ee_variant needs one of v0..v3")
    return _assemble(variant, cfg or ArchConfig(), seed)


def build(variant, cfg: ArchConfig | None = None, seed: int = 0) -> "BranchGraph":
    variant = Variant.parse(variant)
    return _assemble(variant, cfg or ArchConfig(), seed)


def run_layers(layers, x, train=False):
    for layer in layers:
        x = layer.forward(x, train)
    return x


def backward_layers(layers, grad):
    for layer in reversed(layers):
        grad = layer.backward(grad)
    return grad


def classify(probs) -> int | np.ndarray:
    """MAP decision; ``np.argmax`` already breaks ties toward the lowest index."""
    return np.argmax(probs, axis=-1)


@dataclass
class BranchGraph:
    variant: Variant
    common: list
    exit_head: list
    tail: list
    input_shape: tuple = (2, 128)
    q_cache: np.ndarray | None = field(default=None, repr=False)
    _q_single: bool = field(default=False, repr=False)

    @property
    def has_exit(self) -> bool:
        return bool(self.exit_head)

    @property
    def backbone(self) -> list:
        return self.common + self.tail

    @property
    def layers(self) -> list:
        return self.common + self.exit_head + self.tail

    def theta1(self) -> list:
        """Layers updated by the exit loss: common part and exit head."""
        return self.common + self.exit_head

    def theta2(self) -> list:
        """Layers updated by the backbone loss: the tail only."""
        return list(self.tail)

    def num_params(self, layers=None) -> int:
        return sum(layer.num_params() for layer in (self.layers if layers is None else layers))

    def validate(self):
        propagate_shapes(self.backbone, self.input_shape)
        if self.exit_head:
            q = propagate_shapes(self.common, self.input_shape)[-1]
            propagate_shapes(self.exit_head, q)

    def q_shape(self) -> tuple:
        return propagate_shapes(self.common, self.input_shape)[-1] if self.common else self.input_shape

    def _batch(self, x):
        x = np.asarray(x)
        if x.shape == self.input_shape:
            return x[None], True
        if x.ndim != 3 or x.shape[1:] != self.input_shape:
            raise ConfigurationError(f"expected input {self.input_shape} or (N, *{self.input_shape}), got {x.shape}")
        return x, False

    def forward_pass1(self, x, train=False):
        """Common layers then exit head; caches the branch-point activation Q."""
        if not self.has_exit:
            raise ConfigurationError(f"{self.variant.value} graph has no exit head")
        xb, single = self._batch(x)
        self.q_cache = run_layers(self.common, xb, train)
        self._q_single = single
        z1 = run_layers(self.exit_head, self.q_cache, train)
        return z1[0] if single else z1

    def forward_pass2(self, train=False):
        """Backbone tail started from the cached Q; common layers are not re-run."""
        if self.q_cache is None:
            raise StateError("forward_pass2 needs a preceding forward_pass1 (empty Q cache)")
        z2 = run_layers(self.tail, self.q_cache, train)
        return z2[0] if self._q_single else z2

    def forward_backbone(self, x, train=False):
        """Monolithic common+tail forward (no caching)."""
        xb, single = self._batch(x)
        z = run_layers(self.backbone, xb, train)
        return z[0] if single else z

    def forward_exit(self, x, train=False):
        if not self.has_exit:
            raise ConfigurationError(f"{self.variant.value} graph has no exit head")
        xb, single = self._batch(x)
        z = run_layers(self.exit_head, run_layers(self.common, xb, train), train)
        return z[0] if single else z

    def layer_flops(self, layers, in_shape=None) -> int:
        shape = self.input_shape if in_shape is None else in_shape
        total = 0
        for layer in layers:
            total += layer.flops(shape)
            shape = layer.output_shape(shape)
        return total

    def section_flops(self) -> dict:
        q = self.q_shape()
        return {
            "common": self.layer_flops(self.common),
            "exit_head": self.layer_flops(self.exit_head, q) if self.exit_head else 0,
            "tail": self.layer_flops(self.tail, q),
        }

    def copy(self) -> "BranchGraph":
        return copy.deepcopy(self)

    def reseed_dropout(self, seed):
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = rng


# ---------------------------------------------------------------------------
# Weight file

WEIGHT_MAGIC = b"EEWT"
WEIGHT_VERSION = 1
_TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}


def _f32_bits(x) -> int:
    return struct.unpack("<I", struct.pack("<f", x))[0]


def _bits_f32(u) -> float:
    return struct.unpack("<f", struct.pack("<I", u))[0]


def _layer_extents(layer) -> list[int]:
    if isinstance(layer, Dropout):
        return [_f32_bits(layer.rate)]
    if isinstance(layer, BatchNorm1D):
        return [layer.channels, _f32_bits(layer.momentum), _f32_bits(layer.epsilon)]
    return list(layer.extents())


_N_EXTENTS = {"Conv1D": 5, "ReLU": 0, "MaxPool1D": 2, "BatchNorm1D": 3, "Dense": 2, "Dropout": 1, "Softmax": 0}


def _layer_tensors(layer) -> list[np.ndarray]:
    return list(layer.params.values()) + list(layer.buffers.values())


def save_weights(g: BranchGraph, path):
    """Little-endian weight file; parameters and batch-norm running stats as float32."""
    out = bytearray()
    out += WEIGHT_MAGIC
    out += struct.pack("<IB", WEIGHT_VERSION, g.variant.tag)
    out += struct.pack("<II", *g.input_shape)
    out += struct.pack("<III", len(g.common), len(g.exit_head), len(g.tail))
    for layer in g.layers:
        ext = _layer_extents(layer)
        out += struct.pack("<B", KIND_TAGS[layer.kind])
        out += struct.pack(f"<{len(ext)}I", *ext)
        for t in _layer_tensors(layer):
            out += np.ascontiguousarray(t, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise FormatError("truncated weight file", self.pos)
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def array(self, shape):
        n = int(np.prod(shape))
        if self.pos + 4 * n > len(self.buf):
            raise FormatError("truncated weight file", self.pos)
        a = np.frombuffer(self.buf, dtype="<f4", count=n, offset=self.pos).astype(np.float32).reshape(shape)
        self.pos += 4 * n
        return a


def _read_layer(r: _Reader, drop_rng) -> Layer:
    at = r.pos
    (tag,) = r.take("<B")
    kind = _TAG_KINDS.get(tag)
    if kind is None:
        raise FormatError(f"unknown layer kind tag {tag}", at)
    ext = r.take(f"<{_N_EXTENTS[kind]}I")
    if kind == "Conv1D":
        layer = Conv1D(*ext, rng=np.random.default_rng(0))
    elif kind == "ReLU":
        layer = ReLU()
    elif kind == "MaxPool1D":
        layer = MaxPool1D(*ext)
    elif kind == "BatchNorm1D":
        layer = BatchNorm1D(ext[0], _bits_f32(ext[1]), _bits_f32(ext[2]))
    elif kind == "Dense":
        layer = Dense(*ext, rng=np.random.default_rng(0))
    elif kind == "Dropout":
        layer = Dropout(_bits_f32(ext[0]), rng=drop_rng)
    else:
        layer = Softmax()
    for store in (layer.params, layer.buffers):
        for name, t in store.items():
            store[name] = r.array(t.shape)
    return layer


def load_weights(path, dropout_seed: int = 0) -> BranchGraph:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != WEIGHT_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {WEIGHT_MAGIC!r}", 0)
    r = _Reader(buf)
    r.pos = 4
    version, vtag = r.take("<IB")
    if version != WEIGHT_VERSION:
        raise FormatError(f"unsupported weight file version {version}", 4)
    if vtag >= len(Variant):
        raise FormatError(f"unknown variant tag {vtag}", 8)
    input_shape = r.take("<II")
    counts = r.take("<III")
    drop_rng = np.random.default_rng(dropout_seed)
    sections = [[_read_layer(r, drop_rng) for _ in range(n)] for n in counts]
    if r.pos != len(buf):
        raise FormatError("trailing bytes after last layer", r.pos)
    g = BranchGraph(list(Variant)[vtag], *sections, input_shape=tuple(input_shape))
    g.validate()
    return g
