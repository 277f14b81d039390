"""Condition-gated encoder-decoder for field evolution, plus weight storage.

Architecture (default config): a 1x128x128 field runs through four encoder
stages of [Conv-BN-ReLU x2, maxpool] with channels 32/64/128/256, giving a
256x8x8 bottleneck. A two-layer MLP (2 -> 128 -> 256) expands the normalized
condition pair; after bottleneck dropout the two streams are merged, by
default multiplying each bottleneck map by one sigmoid gate per channel.
The decoder mirrors the encoder with nearest-neighbor upsampling and skip
concatenations from each stage's pre-pool activation, ending in a 1x1
convolution and sigmoid. Two flattening-based merge variants are kept for
comparison runs: `flatten_concat` (flatten + concat + one FC back to map
shape) and `flatten_add` (MLP widened to the flattened size, elementwise add).

Weight naming (also the fixed iteration/serialization order):

    enc{s}.conv{i}.{w,b}              s = 1..stages, i = 1..2
    enc{s}.bn{i}.{gamma,beta,running_mean,running_var}
    mlp.fc1.{w,b}, mlp.fc2.{w,b}
    merge.fc.{w,b}                    flatten_concat only
    dec{k}.conv{i}.{w,b}, dec{k}.bn{i}.{...}   k = 1..stages
    head.{w,b}

Names ending in running_mean/running_var are batch-norm statistics, not
learnable parameters.
"""

import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .layers import (
    BatchNormState,
    batchnorm,
    batchnorm_grad,
    conv2d,
    conv2d_grad,
    dropout,
    dropout_grad,
    fully_connected,
    fully_connected_grad,
    gate_merge,
    gate_merge_grad,
    maxpool2,
    maxpool2_grad,
    relu,
    relu_grad,
    sigmoid,
    sigmoid_grad,
    upsample2,
    upsample2_grad,
)
from .seeding import substream
from .tensor import DEFAULT_DTYPE, concat_channels

MERGE_STRATEGIES = ("gating", "flatten_concat", "flatten_add")
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
DROPOUT_RATE = 0.5

MAGIC = b"YNW1"


class WeightsFormatError(Exception):
    """Weights file does not follow the expected binary layout."""


class BadMagicError(WeightsFormatError):
    pass


class TruncatedPayloadError(WeightsFormatError):
    pass


class DuplicateNameError(WeightsFormatError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 32
    stages: int = 4
    mlp_hidden: int = 128
    merge_strategy: str = "gating"
    input_size: int = 128
    scale: float = 1.0
    dropout_rate: float = DROPOUT_RATE

    def channels(self) -> list[int]:
        c0 = int(round(self.base_channels * self.scale))
        return [c0 * 2 ** i for i in range(self.stages)]

    def gate_size(self) -> int:
        return self.channels()[-1]

    def bottleneck_hw(self) -> int:
        return self.input_size // 2 ** self.stages

    def validate(self) -> None:
        if self.merge_strategy not in MERGE_STRATEGIES:
            raise ValueError(f"unknown merge strategy {self.merge_strategy!r}")
        if int(round(self.base_channels * self.scale)) < 1:
            raise ValueError("scaled base_channels must be at least 1")
        if self.input_size % 2 ** self.stages:
            raise ValueError(
                f"input_size {self.input_size} not divisible by 2^{self.stages}"
            )
        if self.stages < 1 or self.mlp_hidden < 1:
            raise ValueError("stages and mlp_hidden must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0,1)")


class ModelWeights:
    """Ordered name -> float32 array store; order is the scheme in the module docstring."""

    def __init__(self):
        self._arrays: dict[str, np.ndarray] = {}

    def add(self, name: str, arr: np.ndarray) -> None:
        if name in self._arrays:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        self._arrays[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, arr: np.ndarray) -> None:
        if name not in self._arrays:
            raise KeyError(f"unknown tensor name {name!r}")
        self._arrays[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def learnable_names(self) -> list[str]:
        return [n for n in self._arrays if not n.endswith(("running_mean", "running_var"))]

    def copy(self) -> "ModelWeights":
        out = ModelWeights()
        for name, arr in self._arrays.items():
            out.add(name, arr.copy())
        return out

    def astype(self, dtype) -> "ModelWeights":
        out = ModelWeights()
        for name, arr in self._arrays.items():
            out.add(name, arr.astype(dtype))
        return out


def count_parameters(weights: ModelWeights) -> int:
    """Number of learnable scalars (running statistics excluded)."""
    return sum(weights[n].size for n in weights.learnable_names())


@dataclass
class Architecture:
    """Topology recovered from a weight set; save/load needs no sidecar config."""
    stages: int
    enc_channels: list[int] = dc_field(default_factory=list)
    strategy: str = "gating"


def architecture_of(weights: ModelWeights) -> Architecture:
    enc = []
    s = 1
    while f"enc{s}.conv1.w" in weights:
        enc.append(weights[f"enc{s}.conv2.w"].shape[0])
        s += 1
    if not enc:
        raise ValueError("weight set has no encoder stages")
    if "merge.fc.w" in weights:
        strategy = "flatten_concat"
    elif weights["mlp.fc2.w"].shape[0] == enc[-1]:
        strategy = "gating"
    else:
        strategy = "flatten_add"
    return Architecture(stages=len(enc), enc_channels=enc, strategy=strategy)


# ---------------------------------------------------------------------------
# construction

def _he_conv(rng, cout, cin, k):
    std = np.sqrt(2.0 / (cin * k * k))
    return (rng.normal(0.0, std, (cout, cin, k, k))).astype(DEFAULT_DTYPE)


def _he_fc(rng, nout, nin):
    std = np.sqrt(2.0 / nin)
    return (rng.normal(0.0, std, (nout, nin))).astype(DEFAULT_DTYPE)


def _add_conv_block(w: ModelWeights, prefix: str, idx: int, cin: int, cout: int, rng) -> None:
    w.add(f"{prefix}.conv{idx}.w", _he_conv(rng, cout, cin, 3))
    w.add(f"{prefix}.conv{idx}.b", np.zeros(cout, dtype=DEFAULT_DTYPE))
    w.add(f"{prefix}.bn{idx}.gamma", np.ones(cout, dtype=DEFAULT_DTYPE))
    w.add(f"{prefix}.bn{idx}.beta", np.zeros(cout, dtype=DEFAULT_DTYPE))
    w.add(f"{prefix}.bn{idx}.running_mean", np.zeros(cout, dtype=DEFAULT_DTYPE))
    w.add(f"{prefix}.bn{idx}.running_var", np.ones(cout, dtype=DEFAULT_DTYPE))


def decoder_channels(config: ModelConfig) -> list[int]:
    ch = config.channels()
    return ch[::-1][1:] + [ch[0]]


def build(config: ModelConfig, seed: int) -> ModelWeights:
    """Initialize all weights from the run seed (He init, zero biases)."""
    config.validate()
    rng = substream(seed, "init")
    w = ModelWeights()
    ch = config.channels()

    cin = 1
    for s, c in enumerate(ch, 1):
        _add_conv_block(w, f"enc{s}", 1, cin, c, rng)
        _add_conv_block(w, f"enc{s}", 2, c, c, rng)
        cin = c

    cb = ch[-1]
    hw = config.bottleneck_hw()
    flat = cb * hw * hw
    mlp_out = flat if config.merge_strategy == "flatten_add" else cb
    w.add("mlp.fc1.w", _he_fc(rng, config.mlp_hidden, 2))
    w.add("mlp.fc1.b", np.zeros(config.mlp_hidden, dtype=DEFAULT_DTYPE))
    w.add("mlp.fc2.w", _he_fc(rng, mlp_out, config.mlp_hidden))
    w.add("mlp.fc2.b", np.zeros(mlp_out, dtype=DEFAULT_DTYPE))
    if config.merge_strategy == "flatten_concat":
        w.add("merge.fc.w", _he_fc(rng, flat, flat + cb))
        w.add("merge.fc.b", np.zeros(flat, dtype=DEFAULT_DTYPE))

    din = cb
    for k, dout in enumerate(decoder_channels(config), 1):
        skip_c = ch[config.stages - k]
        _add_conv_block(w, f"dec{k}", 1, din + skip_c, dout, rng)
        _add_conv_block(w, f"dec{k}", 2, dout, dout, rng)
        din = dout

    w.add("head.w", _he_conv(rng, 1, din, 1))
    w.add("head.b", np.zeros(1, dtype=DEFAULT_DTYPE))
    return w


# ---------------------------------------------------------------------------
# forward / backward

def _bn_state(weights: ModelWeights, prefix: str) -> BatchNormState:
    return BatchNormState(
        gamma=weights[f"{prefix}.gamma"],
        beta=weights[f"{prefix}.beta"],
        running_mean=weights[f"{prefix}.running_mean"],
        running_var=weights[f"{prefix}.running_var"],
        momentum=BN_MOMENTUM,
        eps=BN_EPS,
    )


def _cbr_forward(weights, prefix, idx, h, mode, caches):
    y, c = conv2d(h, weights[f"{prefix}.conv{idx}.w"], weights[f"{prefix}.conv{idx}.b"])
    caches[f"{prefix}.conv{idx}"] = c
    y4, c = batchnorm(y[None], _bn_state(weights, f"{prefix}.bn{idx}"), mode)
    caches[f"{prefix}.bn{idx}"] = c
    y, c = relu(y4[0])
    caches[f"{prefix}.relu{idx}"] = c
    return y


def _cbr_backward(caches, prefix, idx, dy, grads):
    dy = relu_grad(caches[f"{prefix}.relu{idx}"], dy)
    dx4, dgamma, dbeta = batchnorm_grad(caches[f"{prefix}.bn{idx}"], dy[None])
    grads[f"{prefix}.bn{idx}.gamma"] = dgamma
    grads[f"{prefix}.bn{idx}.beta"] = dbeta
    dx, dw, db = conv2d_grad(caches[f"{prefix}.conv{idx}"], dx4[0])
    grads[f"{prefix}.conv{idx}.w"] = dw
    grads[f"{prefix}.conv{idx}.b"] = db
    return dx


def forward(weights: ModelWeights, field: np.ndarray, cond_norm, mode: str,
            rng: np.random.Generator | None = None,
            dropout_rate: float = DROPOUT_RATE):
    """Map (initial field, normalized condition pair) to the evolved field.

    `field` is [H,W] with values in [0,1] (128x128 in the data pipeline;
    any size divisible by 2^stages is accepted). Train mode needs `rng`
    for the dropout mask and updates batch-norm running statistics in
    place; infer mode is deterministic. Returns (prediction, caches); the
    caches feed `backward` and expose the bottleneck for inspection.
    """
    arch = architecture_of(weights)
    dtype = weights["enc1.conv1.w"].dtype
    cond = np.asarray(cond_norm, dtype=dtype)
    if cond.shape != (2,) or cond.min() < 0.0 or cond.max() > 1.0:
        raise ValueError(f"condition values must be two numbers in [0,1], got {cond_norm}")
    x = np.asarray(field, dtype=dtype)
    if x.ndim != 2:
        raise ValueError(f"field must be 2-D, got shape {x.shape}")
    if x.shape[0] % 2 ** arch.stages or x.shape[1] % 2 ** arch.stages:
        raise ValueError(f"field dims {x.shape} not divisible by 2^{arch.stages}")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("field values must lie in [0,1]")
    if mode == "train" and rng is None:
        raise ValueError("train mode needs an rng for the dropout mask")
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")

    caches: dict = {"arch": (arch.stages, arch.strategy), "mode": mode}
    h = x[None]
    skips = []
    for s in range(1, arch.stages + 1):
        h = _cbr_forward(weights, f"enc{s}", 1, h, mode, caches)
        h = _cbr_forward(weights, f"enc{s}", 2, h, mode, caches)
        skips.append(h)
        h, c = maxpool2(h)
        caches[f"pool{s}"] = c
    caches["bottleneck"] = h

    h, c = dropout(h, dropout_rate, mode, rng)
    caches["drop"] = c
    bshape = h.shape

    v, c = fully_connected(cond, weights["mlp.fc1.w"], weights["mlp.fc1.b"])
    caches["mlp.fc1"] = c
    v, c = relu(v)
    caches["mlp.relu"] = c
    v, c = fully_connected(v, weights["mlp.fc2.w"], weights["mlp.fc2.b"])
    caches["mlp.fc2"] = c
    m, c = sigmoid(v)
    caches["mlp.sigmoid"] = c

    if arch.strategy == "gating":
        merged, c = gate_merge(h, m)
        caches["merge"] = c
    elif arch.strategy == "flatten_concat":
        vcat = np.concatenate([h.reshape(-1), m])
        z, c = fully_connected(vcat, weights["merge.fc.w"], weights["merge.fc.b"])
        caches["merge.fc"] = c
        caches["merge.split"] = h.size
        merged = z.reshape(bshape)
    else:  # flatten_add
        merged = (h.reshape(-1) + m).reshape(bshape)
    caches["merged"] = merged
    caches["bottleneck_shape"] = bshape

    h = merged
    for k in range(1, arch.stages + 1):
        h = upsample2(h)
        skip = skips[arch.stages - k]
        caches[f"dec{k}.split"] = skip.shape[0]
        h = concat_channels(skip, h)
        h = _cbr_forward(weights, f"dec{k}", 1, h, mode, caches)
        h = _cbr_forward(weights, f"dec{k}", 2, h, mode, caches)

    logits, c = conv2d(h, weights["head.w"], weights["head.b"])
    caches["head"] = c
    p, c = sigmoid(logits)
    caches["out.sigmoid"] = c
    caches["prediction"] = p[0]
    return p[0], caches


def bce_loss(pred: np.ndarray, target: np.ndarray):
    """Mean binary cross entropy and its gradient with respect to pred."""
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} vs target {target.shape}")
    eps = 1e-7
    p = np.clip(pred, eps, 1.0 - eps)
    t = np.asarray(target, dtype=p.dtype)
    loss = float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log1p(-p))))
    dpred = (p - t) / (p * (1.0 - p)) / p.size
    return loss, dpred


def backward(weights: ModelWeights, caches: dict, target: np.ndarray):
    """Cross-entropy loss and gradients for every learnable tensor."""
    arch = architecture_of(weights)
    if caches.get("arch") != (arch.stages, arch.strategy):
        raise ValueError("caches do not belong to this weight set")
    pred = caches["prediction"]
    loss, dpred = bce_loss(pred, target)

    grads: dict[str, np.ndarray] = {}
    dz = sigmoid_grad(caches["out.sigmoid"], dpred[None])
    dh, dw, db = conv2d_grad(caches["head"], dz)
    grads["head.w"] = dw
    grads["head.b"] = db

    dskips = {}
    for k in range(arch.stages, 0, -1):
        dh = _cbr_backward(caches, f"dec{k}", 2, dh, grads)
        dh = _cbr_backward(caches, f"dec{k}", 1, dh, grads)
        c1 = caches[f"dec{k}.split"]
        dskips[arch.stages - k + 1] = dh[:c1]
        dh = upsample2_grad(dh[c1:])

    if arch.strategy == "gating":
        d_fm, d_gate = gate_merge_grad(caches["merge"], dh)
        dv = sigmoid_grad(caches["mlp.sigmoid"], d_gate)
    elif arch.strategy == "flatten_concat":
        dvcat, dw, db = fully_connected_grad(caches["merge.fc"], dh.reshape(-1))
        grads["merge.fc.w"] = dw
        grads["merge.fc.b"] = db
        split = caches["merge.split"]
        d_fm = dvcat[:split].reshape(caches["bottleneck_shape"])
        dv = sigmoid_grad(caches["mlp.sigmoid"], dvcat[split:])
    else:  # flatten_add
        d_fm = dh
        dv = sigmoid_grad(caches["mlp.sigmoid"], dh.reshape(-1))

    dhid, dw, db = fully_connected_grad(caches["mlp.fc2"], dv)
    grads["mlp.fc2.w"] = dw
    grads["mlp.fc2.b"] = db
    dhid = relu_grad(caches["mlp.relu"], dhid)
    _, dw, db = fully_connected_grad(caches["mlp.fc1"], dhid)
    grads["mlp.fc1.w"] = dw
    grads["mlp.fc1.b"] = db

    dh = dropout_grad(caches["drop"], d_fm)
    for s in range(arch.stages, 0, -1):
        dh = maxpool2_grad(caches[f"pool{s}"], dh)
        dh = dh + dskips[s]
        dh = _cbr_backward(caches, f"enc{s}", 2, dh, grads)
        dh = _cbr_backward(caches, f"enc{s}", 1, dh, grads)
    return loss, grads


# ---------------------------------------------------------------------------
# serialization ("YNW1": magic, u32 count, then per tensor
#   u32 name length, name bytes, u32 rank, rank x u32 dims, f32 payload;
#   all integers and floats little-endian)

def save(weights: ModelWeights, path) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(weights)))
        for name, arr in weights.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load(path) -> ModelWeights:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: bad magic, not a weights file")
    pos = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedPayloadError(f"{path}: truncated payload")
        out = data[pos:pos + n]
        pos += n
        return out

    (count,) = struct.unpack("<I", take(4))
    weights = ModelWeights()
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        if not 1 <= rank <= 4:
            raise WeightsFormatError(f"{path}: tensor {name!r} has rank {rank}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        if any(d < 1 for d in dims):
            raise WeightsFormatError(f"{path}: tensor {name!r} has empty dims {dims}")
        n = int(np.prod(dims))
        payload = take(4 * n)
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        weights.add(name, arr)
    if pos != len(data):
        raise WeightsFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return weights
