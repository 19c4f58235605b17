"""Temporal convolutional sequence model, trained from scratch.

Dilated valid (padding-free) 1D convolutions arranged in residual blocks map
a (3K, T) pose feature sequence to 4 output channels: forward and backward
timing indicators for two event types.  Every layer here carries an explicit
backward pass so analytic gradients can be checked against finite
differences, and training (Huber loss + Adam) is plain numpy and bitwise
deterministic for a fixed seed.

The public entry points take (batch, channels, time) arrays; internally
activations are kept channels-first, (channels, batch, time), so each
convolution runs as one large matrix product.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import PoseventsError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class SequenceTooShortError(PoseventsError):
    """Input has fewer time steps than the receptive field requires."""


def default_dilations(blocks: int) -> tuple[int, ...]:
    return tuple(2 ** b for b in range(blocks))


def receptive_field(blocks: int = 3, kernel: int = 3,
                    dilations: tuple[int, ...] | None = None) -> int:
    """Number of input steps one output depends on (two convs per block)."""
    if dilations is None:
        dilations = default_dilations(blocks)
    return 1 + sum(2 * d * (kernel - 1) for d in dilations)


@dataclass(frozen=True)
class TcnConfig:
    in_channels: int
    hidden: int = 180
    blocks: int = 3
    kernel: int = 3
    outputs: int = 4

    @property
    def dilations(self) -> tuple[int, ...]:
        return default_dilations(self.blocks)

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.blocks, self.kernel, self.dilations)


@dataclass(eq=False)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


@dataclass(eq=False)
class BlockParams:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    bn1: BatchNormParams
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    bn2: BatchNormParams
    proj_w: np.ndarray | None = None  # width-1 residual projection (first block)
    proj_b: np.ndarray | None = None


@dataclass(eq=False)
class TcnParams:
    """All tensors of the network plus the encoding constants it was trained with."""

    config: TcnConfig
    blocks: list[BlockParams]
    head_w: np.ndarray
    head_b: np.ndarray
    meta: dict = field(default_factory=dict)

    def named_tensors(self, trainable_only: bool = True) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, bp in enumerate(self.blocks, start=1):
            prefix = f"block{i}"
            out[f"{prefix}.conv1.weight"] = bp.conv1_w
            out[f"{prefix}.conv1.bias"] = bp.conv1_b
            out[f"{prefix}.bn1.gamma"] = bp.bn1.gamma
            out[f"{prefix}.bn1.beta"] = bp.bn1.beta
            out[f"{prefix}.conv2.weight"] = bp.conv2_w
            out[f"{prefix}.conv2.bias"] = bp.conv2_b
            out[f"{prefix}.bn2.gamma"] = bp.bn2.gamma
            out[f"{prefix}.bn2.beta"] = bp.bn2.beta
            if bp.proj_w is not None:
                out[f"{prefix}.proj.weight"] = bp.proj_w
                out[f"{prefix}.proj.bias"] = bp.proj_b
            if not trainable_only:
                out[f"{prefix}.bn1.running_mean"] = bp.bn1.running_mean
                out[f"{prefix}.bn1.running_var"] = bp.bn1.running_var
                out[f"{prefix}.bn2.running_mean"] = bp.bn2.running_mean
                out[f"{prefix}.bn2.running_var"] = bp.bn2.running_var
        out["head.weight"] = self.head_w
        out["head.bias"] = self.head_b
        return out

    @property
    def dtype(self):
        return self.head_w.dtype


def init_params(config: TcnConfig, rng: np.random.Generator,
                dtype=np.float32, meta: dict | None = None) -> TcnParams:
    """He-initialized convolution weights, identity batch-norm."""

    def conv_init(c_out, c_in, k):
        std = math.sqrt(2.0 / (c_in * k))
        return rng.normal(0.0, std, size=(c_out, c_in, k)).astype(dtype)

    def bn_init(c):
        return BatchNormParams(
            gamma=np.ones(c, dtype=dtype),
            beta=np.zeros(c, dtype=dtype),
            running_mean=np.zeros(c, dtype=dtype),
            running_var=np.ones(c, dtype=dtype),
        )

    n, k = config.hidden, config.kernel
    blocks = []
    for b in range(config.blocks):
        c_in = config.in_channels if b == 0 else n
        bp = BlockParams(
            conv1_w=conv_init(n, c_in, k),
            conv1_b=np.zeros(n, dtype=dtype),
            bn1=bn_init(n),
            conv2_w=conv_init(n, n, k),
            conv2_b=np.zeros(n, dtype=dtype),
            bn2=bn_init(n),
        )
        if c_in != n:
            bp.proj_w = conv_init(n, c_in, 1)
            bp.proj_b = np.zeros(n, dtype=dtype)
        blocks.append(bp)
    head_w = rng.normal(0.0, 0.01, size=(config.outputs, n, 1)).astype(dtype)
    head_b = np.zeros(config.outputs, dtype=dtype)
    return TcnParams(config=config, blocks=blocks, head_w=head_w, head_b=head_b,
                     meta=dict(meta or {}))


# ---------------------------------------------------------------------------
# Layer primitives with explicit backward passes


# Activations flow through the network as (channels, batch, time) so every
# convolution is a single large matrix product.


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, dilation: int):
    c_in, n, t = x.shape
    c_out, c_in2, k = w.shape
    if c_in2 != c_in:
        raise ValueError(f"kernel expects {c_in2} input channels, input has {c_in}")
    t_out = t - dilation * (k - 1)
    if t_out <= 0:
        raise SequenceTooShortError(
            f"input length {t} too short for kernel {k} at dilation {dilation}; "
            f"needs at least {dilation * (k - 1) + 1}")
    if k == 1:
        x2 = x.reshape(c_in, n * t_out)
    else:
        cols = np.empty((c_in, k, n, t_out), dtype=x.dtype)
        for i in range(k):
            cols[:, i] = x[:, :, i * dilation: i * dilation + t_out]
        x2 = cols.reshape(c_in * k, n * t_out)
    y = (w.reshape(c_out, c_in * k) @ x2).reshape(c_out, n, t_out)
    if b is not None:
        y += b[:, None, None]
    cache = (x2, w, x.shape, dilation)
    return y, cache


def _conv_backward(gy: np.ndarray, cache, need_gx: bool = True):
    x2, w, x_shape, dilation = cache
    c_in, n, t = x_shape
    c_out, _, k = w.shape
    t_out = gy.shape[2]
    gy2 = gy.reshape(c_out, n * t_out)
    gw = (gy2 @ x2.T).reshape(w.shape)
    gb = gy2.sum(axis=1)
    if not need_gx:
        return None, gw, gb
    g2 = (w.reshape(c_out, c_in * k).T @ gy2).reshape(c_in, k, n, t_out)
    gx = np.zeros(x_shape, dtype=gy.dtype)
    for i in range(k):
        gx[:, :, i * dilation: i * dilation + t_out] += g2[:, i]
    return gx, gw, gb


def conv1d_valid(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None,
                 dilation: int = 1) -> np.ndarray:
    """Valid (padding-free) dilated cross-correlation along the time axis.

    ``x`` is (C_in, T) or (N, C_in, T); the output is shorter by
    dilation * (kernel_width - 1) steps.
    """
    x = np.asarray(x, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    squeeze = x.ndim == 2
    xc = x[:, None, :] if squeeze else np.ascontiguousarray(x.transpose(1, 0, 2))
    y, _ = _conv_forward(xc, kernel, bias, dilation)
    return y[:, 0, :] if squeeze else np.ascontiguousarray(y.transpose(1, 0, 2))


def _bn_forward(x: np.ndarray, bn: BatchNormParams, train: bool, update_stats: bool):
    if train:
        mean = x.mean(axis=(1, 2))
        xhat = x - mean[:, None, None]
        var = np.einsum("cnt,cnt->c", xhat, xhat) / (x.shape[1] * x.shape[2])
        if update_stats:
            # Running stats track the biased batch statistics so a freeze of
            # running stats on one full batch reproduces train-mode output.
            bn.running_mean *= 1.0 - BN_MOMENTUM
            bn.running_mean += (BN_MOMENTUM * mean).astype(bn.running_mean.dtype)
            bn.running_var *= 1.0 - BN_MOMENTUM
            bn.running_var += (BN_MOMENTUM * var).astype(bn.running_var.dtype)
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat *= inv[:, None, None]
    else:
        mean = bn.running_mean
        var = bn.running_var
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean[:, None, None]) * inv[:, None, None]
    y = bn.gamma[:, None, None] * xhat
    y += bn.beta[:, None, None]
    cache = (xhat, inv, bn.gamma, train)
    return y, cache


def _bn_backward(gy: np.ndarray, cache):
    xhat, inv, gamma, train = cache
    ggamma = (gy * xhat).sum(axis=(1, 2))
    gbeta = gy.sum(axis=(1, 2))
    gxhat = gy * gamma[:, None, None]
    if not train:
        return gxhat * inv[:, None, None], ggamma, gbeta
    m = gy.shape[1] * gy.shape[2]
    sum_g = gxhat.sum(axis=(1, 2))[:, None, None]
    sum_gx = (gxhat * xhat).sum(axis=(1, 2))[:, None, None]
    gx = (inv[:, None, None] / m) * (m * gxhat - sum_g - xhat * sum_gx)
    return gx, ggamma, gbeta


def _relu_forward(x):
    mask = x > 0
    return x * mask, mask


def _dropout_forward(x, p: float, rng: np.random.Generator):
    rand_dtype = np.float32 if x.dtype == np.float32 else np.float64
    keep = (rng.random(x.shape, dtype=rand_dtype) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep, keep


# ---------------------------------------------------------------------------
# Network forward / backward


def _forward(params: TcnParams, x: np.ndarray, train: bool, dropout: float,
             rng: np.random.Generator | None, update_stats: bool):
    """Core forward pass over (channels, batch, time) activations."""
    cfg = params.config
    use_dropout = train and dropout > 0.0
    if use_dropout and rng is None:
        raise ValueError("training-mode dropout needs an rng")
    caches = []
    h = x
    for bi, bp in enumerate(params.blocks):
        d = cfg.dilations[bi]
        y, c_conv1 = _conv_forward(h, bp.conv1_w, bp.conv1_b, d)
        y, c_bn1 = _bn_forward(y, bp.bn1, train, update_stats)
        y, c_relu1 = _relu_forward(y)
        c_drop1 = None
        if use_dropout:
            y, c_drop1 = _dropout_forward(y, dropout, rng)
        y, c_conv2 = _conv_forward(y, bp.conv2_w, bp.conv2_b, d)
        y, c_bn2 = _bn_forward(y, bp.bn2, train, update_stats)
        y, c_relu2 = _relu_forward(y)
        c_drop2 = None
        if use_dropout:
            y, c_drop2 = _dropout_forward(y, dropout, rng)
        # Residual: center-slice the block input to the branch output length.
        t_out = y.shape[2]
        off = d * (cfg.kernel - 1)
        res = h[:, :, off: off + t_out]
        c_proj = None
        if bp.proj_w is not None:
            res, c_proj = _conv_forward(res, bp.proj_w, bp.proj_b, 1)
        h = y + res
        caches.append({
            "conv1": c_conv1, "bn1": c_bn1, "relu1": c_relu1, "drop1": c_drop1,
            "conv2": c_conv2, "bn2": c_bn2, "relu2": c_relu2, "drop2": c_drop2,
            "proj": c_proj, "off": off, "t_out": t_out,
        })
    y, c_head = _conv_forward(h, params.head_w, params.head_b, 1)
    caches.append(c_head)
    return y, caches


def forward(params: TcnParams, x: np.ndarray, train: bool = False,
            dropout: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Run the network; input (C, T) or (N, C, T), output 4 x (T - s + 1).

    Eval mode uses running batch-norm statistics and no dropout; train mode
    uses batch statistics and Bernoulli dropout drawn from ``rng``.
    """
    x = np.asarray(x, dtype=params.dtype)
    squeeze = x.ndim == 2
    xc = x[:, None, :] if squeeze else np.ascontiguousarray(x.transpose(1, 0, 2))
    y, _ = _forward(params, xc, train=train, dropout=dropout, rng=rng, update_stats=train)
    return y[:, 0, :] if squeeze else np.ascontiguousarray(y.transpose(1, 0, 2))


def _backward(params: TcnParams, g: np.ndarray, caches) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    g, grads["head.weight"], grads["head.bias"] = _conv_backward(g, caches[-1])
    for bi in range(len(params.blocks) - 1, -1, -1):
        bp = params.blocks[bi]
        cache = caches[bi]
        prefix = f"block{bi + 1}"
        first = bi == 0  # no gradient w.r.t. the network input is needed
        g_res = g
        if cache["proj"] is not None:
            g_res, grads[f"{prefix}.proj.weight"], grads[f"{prefix}.proj.bias"] = \
                _conv_backward(g_res, cache["proj"], need_gx=not first)
        gb = g
        if cache["drop2"] is not None:
            gb = gb * cache["drop2"]
        gb = gb * cache["relu2"]
        gb, grads[f"{prefix}.bn2.gamma"], grads[f"{prefix}.bn2.beta"] = \
            _bn_backward(gb, cache["bn2"])
        gb, grads[f"{prefix}.conv2.weight"], grads[f"{prefix}.conv2.bias"] = \
            _conv_backward(gb, cache["conv2"])
        if cache["drop1"] is not None:
            gb = gb * cache["drop1"]
        gb = gb * cache["relu1"]
        gb, grads[f"{prefix}.bn1.gamma"], grads[f"{prefix}.bn1.beta"] = \
            _bn_backward(gb, cache["bn1"])
        gb, grads[f"{prefix}.conv1.weight"], grads[f"{prefix}.conv1.bias"] = \
            _conv_backward(gb, cache["conv1"], need_gx=not first)
        if not first:
            gb[:, :, cache["off"]: cache["off"] + cache["t_out"]] += g_res
        g = gb
    return grads


def huber(residual: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(residual)
    return np.where(a <= delta, 0.5 * residual * residual, delta * (a - 0.5 * delta))


def huber_grad(residual: np.ndarray, delta: float) -> np.ndarray:
    return np.where(np.abs(residual) <= delta, residual, delta * np.sign(residual))


def loss_and_grads(params: TcnParams, inputs: np.ndarray, targets: np.ndarray,
                   delta: float = 1.0, dropout: float = 0.0,
                   rng: np.random.Generator | None = None,
                   update_stats: bool = True) -> tuple[float, dict[str, np.ndarray]]:
    """Mean Huber loss over a crop batch and gradients for every tensor.

    ``inputs`` is (N, C, s) so the network emits exactly one output column;
    ``targets`` is (N, outputs).
    """
    inputs = np.ascontiguousarray(np.asarray(inputs, dtype=params.dtype).transpose(1, 0, 2))
    targets = np.asarray(targets, dtype=params.dtype)
    y, caches = _forward(params, inputs, train=True, dropout=dropout, rng=rng,
                         update_stats=update_stats)
    if y.shape[2] != 1:
        raise ValueError(f"crop batches must produce one output column, got {y.shape[2]}")
    pred = y[:, :, 0].T  # back to (batch, outputs)
    residual = pred - targets
    loss = float(huber(residual, delta).mean())
    g = (huber_grad(residual, delta) / residual.size).astype(params.dtype)
    grads = _backward(params, g.T[:, :, None], caches)
    return loss, grads


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    batch_size: int = 512
    dropout: float = 0.1
    learning_rate: float = 1e-2
    lr_decay: float = 0.3
    lr_decay_after: int = 10  # epochs at base rate before the single decay
    epochs: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    huber_delta: float = 1.0

    def __post_init__(self):
        if min(self.batch_size, self.learning_rate, self.epochs, self.huber_delta) <= 0:
            raise ValueError("train config values must be positive")


class Adam:
    """Per-tensor Adam with bias correction; iterates tensors in sorted name order."""

    def __init__(self, tensors: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in tensors.items()}

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name in sorted(tensors):
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += ((1.0 - self.beta1) * g).astype(m.dtype)
            v *= self.beta2
            v += ((1.0 - self.beta2) * g * g).astype(v.dtype)
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            tensors[name] -= update.astype(tensors[name].dtype)


def batch_arrays(crops, dtype) -> tuple[np.ndarray, np.ndarray]:
    """Stack TrainingCrop objects into (N, C, s) inputs and (N, outputs) targets."""
    x = np.stack([c.input for c in crops]).astype(dtype)
    x = np.ascontiguousarray(x.transpose(0, 2, 1))
    y = np.stack([c.target for c in crops]).astype(dtype)
    return x, y


def train(dataset, cfg: TrainConfig | None = None, net: TcnConfig | None = None,
          rng: np.random.Generator | None = None, dtype=np.float32,
          log_fn=None) -> tuple[TcnParams, list[dict]]:
    """Train a network on a crop dataset; returns (params, per-epoch loss log).

    One epoch is ceil(num_crops / batch_size) sampled batches.  The learning
    rate is multiplied once by ``lr_decay`` after ``lr_decay_after`` epochs.
    Deterministic for a fixed rng seed.
    """
    cfg = cfg or TrainConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    meta = dataset.meta
    in_channels = 3 * meta["K"]
    if net is None:
        net = TcnConfig(in_channels=in_channels, outputs=2 * len(meta["event_types"]))
    if net.receptive_field != meta["s"]:
        raise ValueError(
            f"network receptive field {net.receptive_field} != dataset crop length {meta['s']}")
    params = init_params(net, rng, dtype=dtype, meta=meta)

    n_crops = dataset.num_crops
    batch_size = cfg.batch_size
    if n_crops < batch_size:
        warnings.warn(
            f"dataset has {n_crops} crops < batch size {batch_size}; using one full batch")
        batch_size = max(1, n_crops)
    steps = math.ceil(n_crops / batch_size)

    tensors = params.named_tensors(trainable_only=True)
    adam = Adam(tensors, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.learning_rate * (cfg.lr_decay if epoch > cfg.lr_decay_after else 1.0)
        total = 0.0
        for _ in range(steps):
            crops = dataset.sample(batch_size, rng)
            x, y = batch_arrays(crops, params.dtype)
            loss, grads = loss_and_grads(params, x, y, delta=cfg.huber_delta,
                                         dropout=cfg.dropout, rng=rng)
            adam.step(tensors, grads, lr)
            total += loss
        history.append({"epoch": epoch, "lr": lr, "loss": total / steps})
        if log_fn is not None:
            log_fn(history[-1])
    return params, history


# ---------------------------------------------------------------------------
# Model file


def save_model(path, params: TcnParams) -> None:
    """Write a model file: text manifest plus shape-annotated float32 tensors."""
    cfg = params.config
    tensors = params.named_tensors(trainable_only=False)
    obj = {
        "format": "posevents-tcn",
        "version": 1,
        "arch": {
            "in_channels": cfg.in_channels,
            "hidden": cfg.hidden,
            "blocks": cfg.blocks,
            "kernel": cfg.kernel,
            "outputs": cfg.outputs,
            "dilations": list(cfg.dilations),
        },
        "encoding": params.meta,
        "bn_running_stats": True,
        "tensors": {
            name: {"shape": list(t.shape), "data": np.asarray(t, np.float32).tolist()}
            for name, t in sorted(tensors.items())
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, separators=(",", ":"))
        fh.write("\n")


def load_model(path) -> TcnParams:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format") != "posevents-tcn":
        raise PoseventsError(f"{path}: not a model file")
    arch = obj["arch"]
    cfg = TcnConfig(in_channels=arch["in_channels"], hidden=arch["hidden"],
                    blocks=arch["blocks"], kernel=arch["kernel"], outputs=arch["outputs"])
    raw = {}
    for name, spec in obj["tensors"].items():
        t = np.asarray(spec["data"], dtype=np.float32).reshape(spec["shape"])
        raw[name] = t
    blocks = []
    for i in range(1, cfg.blocks + 1):
        p = f"block{i}"
        bp = BlockParams(
            conv1_w=raw[f"{p}.conv1.weight"], conv1_b=raw[f"{p}.conv1.bias"],
            bn1=BatchNormParams(raw[f"{p}.bn1.gamma"], raw[f"{p}.bn1.beta"],
                                raw[f"{p}.bn1.running_mean"], raw[f"{p}.bn1.running_var"]),
            conv2_w=raw[f"{p}.conv2.weight"], conv2_b=raw[f"{p}.conv2.bias"],
            bn2=BatchNormParams(raw[f"{p}.bn2.gamma"], raw[f"{p}.bn2.beta"],
                                raw[f"{p}.bn2.running_mean"], raw[f"{p}.bn2.running_var"]),
            proj_w=raw.get(f"{p}.proj.weight"),
            proj_b=raw.get(f"{p}.proj.bias"),
        )
        blocks.append(bp)
    return TcnParams(config=cfg, blocks=blocks, head_w=raw["head.weight"],
                     head_b=raw["head.bias"], meta=dict(obj.get("encoding", {})))
