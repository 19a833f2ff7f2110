"""Classifier container: layer stack, tapped forward pass, trainer, file IO.

The tapped forward pass records the tensor fed *into* every Relu layer.
Those pre-activation tensors are the signal the detectors reduce to
per-image extreme values, so taps must be exactly the Relu inputs and
recording them must not change the computation.

The trainer is plain seeded SGD with cross-entropy, no momentum. The
classifier is a fixture for the detection pipeline, not a contribution in
itself, so the trainer stays minimal but fully deterministic: the same
seed produces bit-identical weights.

Network file format (magic "XNET", version 1):

    bytes 0..3  magic b"XNET"
    byte  4     version 0x01
    uint32 LE   manifest byte length
    ...         UTF-8 manifest, one ``key=value`` per line, describing
                input shape, class count, and each layer's kind and
                hyperparameters
    uint32 LE   blob count
    per blob    uint32 LE name length, UTF-8 name ("layer3.weight"),
                then the XTEN encoding of the tensor

Save/load round trips are bit-exact for the float32 parameters.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor_ops as ops
from .errors import (
    ContractError,
    DimensionError,
    FormatError,
    TrainingDivergedError,
)
from .rng import Stream, derive_seed
from .xten import decode_tensor, encode_tensor

logger = logging.getLogger(__name__)

NETWORK_MAGIC = b"XNET"
NETWORK_VERSION = 1


class LayerKind(str, Enum):
    CONV2D = "conv2d"
    RELU = "relu"
    MAXPOOL2D = "maxpool2d"
    FLATTEN = "flatten"
    DENSE = "dense"
    SOFTMAX = "softmax"


@dataclass
class LayerSpec:
    """One layer of the stack; weight/bias present only for conv2d and dense."""

    kind: LayerKind
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    window: int = 2


@dataclass
class Network:
    """A validated feed-forward stack ending in softmax over num_classes."""

    layers: list[LayerSpec]
    input_shape: tuple[int, int, int]
    num_classes: int

    def __post_init__(self):
        shape = tuple(self.input_shape)
        if len(shape) != 3:
            raise DimensionError(f"input shape must be (C,H,W), got {shape}")
        for i, layer in enumerate(self.layers):
            shape = _infer_output_shape(i, layer, shape)
        if shape != (self.num_classes,):
            raise DimensionError(
                f"stack produces shape {shape}, expected ({self.num_classes},)"
            )
        if not self.layers or self.layers[-1].kind is not LayerKind.SOFTMAX:
            raise ContractError("network must end in softmax")

    @property
    def activation_indices(self) -> list[int]:
        """Positions of the Relu layers, in forward order."""
        return [i for i, l in enumerate(self.layers) if l.kind is LayerKind.RELU]

    @property
    def num_activation_layers(self) -> int:
        return len(self.activation_indices)


def _infer_output_shape(index: int, layer: LayerSpec, shape: tuple) -> tuple:
    kind = layer.kind
    if kind in (LayerKind.CONV2D, LayerKind.DENSE) and (
        layer.weight is None or layer.bias is None
    ):
        raise ContractError(f"layer {index}: {kind.value} is missing parameters")
    if kind is LayerKind.CONV2D:
        if len(shape) != 3:
            raise DimensionError(f"layer {index}: conv2d needs (C,H,W), got {shape}")
        f, c, kh, kw = layer.weight.shape
        if c != shape[0]:
            raise DimensionError(
                f"layer {index}: conv2d expects {c} channels, gets {shape[0]}"
            )
        ho = ops._out_extent(shape[1], kh, layer.stride, layer.padding, "height")
        wo = ops._out_extent(shape[2], kw, layer.stride, layer.padding, "width")
        return (f, ho, wo)
    if kind is LayerKind.MAXPOOL2D:
        if len(shape) != 3:
            raise DimensionError(f"layer {index}: maxpool needs (C,H,W), got {shape}")
        if shape[1] < layer.window or shape[2] < layer.window:
            raise DimensionError(
                f"layer {index}: pool window {layer.window} exceeds {shape[1:]}"
            )
        ho = (shape[1] - layer.window) // layer.stride + 1
        wo = (shape[2] - layer.window) // layer.stride + 1
        return (shape[0], ho, wo)
    if kind is LayerKind.FLATTEN:
        return (int(np.prod(shape)),)
    if kind is LayerKind.DENSE:
        if len(shape) != 1:
            raise DimensionError(f"layer {index}: dense needs a flat input, got {shape}")
        d, k = layer.weight.shape
        if d != shape[0]:
            raise DimensionError(
                f"layer {index}: dense expects width {d}, gets {shape[0]}"
            )
        return (k,)
    if kind in (LayerKind.RELU, LayerKind.SOFTMAX):
        return shape
    raise ContractError(f"layer {index}: unknown kind {kind}")


def _apply_layer(layer: LayerSpec, x: np.ndarray) -> np.ndarray:
    kind = layer.kind
    if kind is LayerKind.CONV2D:
        return ops.conv2d(x, layer.weight, layer.bias, layer.stride, layer.padding)
    if kind is LayerKind.RELU:
        return ops.relu(x)
    if kind is LayerKind.MAXPOOL2D:
        return ops.maxpool2d(x, layer.window, layer.stride)
    if kind is LayerKind.FLATTEN:
        return ops.flatten(x)
    if kind is LayerKind.DENSE:
        return ops.dense(x, layer.weight, layer.bias)
    if kind is LayerKind.SOFTMAX:
        return ops.softmax(x)
    raise ContractError(f"unknown layer kind {kind}")


@dataclass
class ForwardResult:
    """Predictions, probabilities, logits, and the per-Relu tap tensors."""

    predictions: np.ndarray  # (N,) int64, argmax ties -> lowest class id
    probabilities: np.ndarray  # (N, K) float32
    logits: np.ndarray  # (N, K) float32
    taps: list  # r entries, one per Relu input; see forward_with_taps


def forward_with_taps(
    net: Network,
    batch: np.ndarray,
    tap_map: Callable[[np.ndarray], object] | None = None,
) -> ForwardResult:
    """Run the network, recording the input of every Relu layer.

    Without ``tap_map`` each taps entry is the raw (N, ...) tensor. With
    it, each entry is ``tap_map(tensor)``, applied as soon as the layer
    runs; reducing a tap there reads it while it is still cache-resident
    instead of after later layers have evicted it.
    """
    batch = np.asarray(batch, dtype=np.float32)
    if batch.ndim != 4 or batch.shape[1:] != net.input_shape:
        raise DimensionError(
            f"batch shape {batch.shape} does not match input shape "
            f"(N,{','.join(map(str, net.input_shape))})"
        )
    taps: list = []
    x = batch
    logits = None
    for layer in net.layers:
        if layer.kind is LayerKind.RELU:
            taps.append(x if tap_map is None else tap_map(x))
        if layer.kind is LayerKind.SOFTMAX:
            logits = x
        x = _apply_layer(layer, x)
    predictions = np.argmax(x, axis=1).astype(np.int64)
    return ForwardResult(predictions, x, logits, taps)


# ---------------------------------------------------------------------------
# reference CNN and trainer


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 0.1
    batch_size: int = 64
    seed: int = 0


def build_reference_cnn(
    input_shape: tuple[int, int, int], num_classes: int, seed: int
) -> Network:
    """conv(8,3x3)-relu-pool(2)-conv(16,3x3)-relu-pool(2)-flatten-
    dense(64)-relu-dense(K)-softmax.

    Convolutions use stride 1 and padding 1 so spatial extent is preserved;
    H and W must therefore be divisible by 4. Weights are drawn
    uniform(-s, s) with s = sqrt(1/fan_in) from the init stream in layer
    order; biases start at zero.
    """
    c, h, w = input_shape
    if h % 4 or w % 4:
        raise ContractError(
            f"reference CNN needs H,W divisible by 4, got {h}x{w}"
        )
    if num_classes < 2:
        raise ContractError(f"need at least 2 classes, got {num_classes}")
    stream = Stream(derive_seed(seed, "weight-init"))

    def conv_spec(c_in: int, c_out: int) -> LayerSpec:
        fan_in = c_in * 9
        s = math.sqrt(1.0 / fan_in)
        weight = stream.uniform(c_out * fan_in, -s, s).astype(np.float32)
        return LayerSpec(
            LayerKind.CONV2D,
            weight=weight.reshape(c_out, c_in, 3, 3),
            bias=np.zeros(c_out, np.float32),
            stride=1,
            padding=1,
        )

    def dense_spec(d_in: int, d_out: int) -> LayerSpec:
        s = math.sqrt(1.0 / d_in)
        weight = stream.uniform(d_in * d_out, -s, s).astype(np.float32)
        return LayerSpec(
            LayerKind.DENSE,
            weight=weight.reshape(d_in, d_out),
            bias=np.zeros(d_out, np.float32),
        )

    flat = 16 * (h // 4) * (w // 4)
    layers = [
        conv_spec(c, 8),
        LayerSpec(LayerKind.RELU),
        LayerSpec(LayerKind.MAXPOOL2D, window=2, stride=2),
        conv_spec(8, 16),
        LayerSpec(LayerKind.RELU),
        LayerSpec(LayerKind.MAXPOOL2D, window=2, stride=2),
        LayerSpec(LayerKind.FLATTEN),
        dense_spec(flat, 64),
        LayerSpec(LayerKind.RELU),
        dense_spec(64, num_classes),
        LayerSpec(LayerKind.SOFTMAX),
    ]
    return Network(layers, (c, h, w), num_classes)


def _batch_loss_and_grad(
    net: Network, xb: np.ndarray, yb: np.ndarray
) -> tuple[float, list]:
    """Forward through the logits, cross-entropy, and per-layer gradients."""
    inputs = []
    x = xb
    for layer in net.layers[:-1]:  # stop before the softmax
        inputs.append(x)
        x = _apply_layer(layer, x)
    logits = x.astype(np.float64)
    n = logits.shape[0]
    # mean cross-entropy via logsumexp; never produces NaN on finite logits
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    loss = float(np.mean(lse - logits[np.arange(n), yb]))
    probs = np.exp(logits - lse[:, None])
    grad = probs
    grad[np.arange(n), yb] -= 1.0
    grad = (grad / n).astype(np.float32)

    updates = []
    for layer, x_in in zip(reversed(net.layers[:-1]), reversed(inputs)):
        kind = layer.kind
        if kind is LayerKind.DENSE:
            grad, gw, gb = ops.dense_backward(x_in, layer.weight, grad)
            updates.append((layer, gw, gb))
        elif kind is LayerKind.RELU:
            grad = ops.relu_backward(x_in, grad)
        elif kind is LayerKind.FLATTEN:
            grad = grad.reshape(x_in.shape)
        elif kind is LayerKind.MAXPOOL2D:
            grad = ops.maxpool2d_backward(x_in, layer.window, grad)
        elif kind is LayerKind.CONV2D:
            grad, gw, gb = ops.conv2d_backward(
                x_in, layer.weight, grad, layer.padding
            )
            updates.append((layer, gw, gb))
        else:
            raise ContractError(f"no backward pass for layer kind {kind}")
    return loss, updates


def train_reference_cnn(
    images: np.ndarray, labels: np.ndarray, config: TrainConfig
) -> Network:
    """Train the reference CNN with plain SGD and cross-entropy.

    ``epochs == 0`` returns the seeded initialization unchanged. A
    non-finite epoch loss raises TrainingDivergedError naming the epoch.
    """
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels)
    if images.ndim != 4:
        raise ContractError(f"images must be (N,C,H,W), got {images.shape}")
    if labels.shape != (images.shape[0],):
        raise ContractError(
            f"labels shape {labels.shape} does not match {images.shape[0]} images"
        )
    if images.size and (images.min() < 0.0 or images.max() > 1.0):
        raise ContractError("pixel values must lie in [0, 1]")
    if labels.size == 0 or labels.min() < 0:
        raise ContractError("labels must be non-negative class ids")
    labels = labels.astype(np.int64)
    num_classes = int(labels.max()) + 1
    if num_classes < 2:
        raise ContractError("training data must contain at least 2 classes")

    net = build_reference_cnn(images.shape[1:], num_classes, config.seed)
    if config.epochs == 0:
        return net
    if config.batch_size < 1 or config.learning_rate <= 0:
        raise ContractError("batch size must be >= 1 and learning rate > 0")

    shuffle = Stream(derive_seed(config.seed, "epoch-shuffle"))
    n = images.shape[0]
    lr = np.float32(config.learning_rate)
    for epoch in range(config.epochs):
        order = shuffle.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, updates = _batch_loss_and_grad(net, images[idx], labels[idx])
            epoch_loss += loss * len(idx)
            for layer, gw, gb in updates:
                layer.weight -= lr * gw
                layer.bias -= lr * gb
        epoch_loss /= n
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(
                f"loss became non-finite in epoch {epoch}", epoch=epoch
            )
        logger.info("epoch %d mean loss %.6f", epoch, epoch_loss)
    accuracy = evaluate_accuracy(net, images, labels)
    logger.info("final training accuracy %.4f", accuracy)
    return net


def evaluate_accuracy(
    net: Network, images: np.ndarray, labels: np.ndarray, batch_size: int = 256
) -> float:
    """Fraction of images whose argmax prediction matches the label."""
    correct = 0
    for start in range(0, images.shape[0], batch_size):
        batch = images[start : start + batch_size]
        result = forward_with_taps(net, batch)
        correct += int(
            (result.predictions == labels[start : start + batch_size]).sum()
        )
    return correct / images.shape[0]


# ---------------------------------------------------------------------------
# persistence


def _manifest_lines(net: Network) -> list[str]:
    lines = [
        "format=xnet",
        f"version={NETWORK_VERSION}",
        "input_shape=" + ",".join(map(str, net.input_shape)),
        f"num_classes={net.num_classes}",
        f"num_layers={len(net.layers)}",
    ]
    for i, layer in enumerate(net.layers):
        lines.append(f"layer{i}.kind={layer.kind.value}")
        if layer.kind is LayerKind.CONV2D:
            lines.append(f"layer{i}.stride={layer.stride}")
            lines.append(f"layer{i}.padding={layer.padding}")
        elif layer.kind is LayerKind.MAXPOOL2D:
            lines.append(f"layer{i}.window={layer.window}")
            lines.append(f"layer{i}.stride={layer.stride}")
    return lines


def save_network(net: Network, path: str | Path) -> None:
    """Write the network as an XNET container file."""
    manifest = "\n".join(_manifest_lines(net)).encode("utf-8")
    blobs: list[tuple[str, np.ndarray]] = []
    for i, layer in enumerate(net.layers):
        if layer.weight is not None:
            blobs.append((f"layer{i}.weight", layer.weight))
            blobs.append((f"layer{i}.bias", layer.bias))
    out = bytearray()
    out += NETWORK_MAGIC
    out.append(NETWORK_VERSION)
    out += struct.pack("<I", len(manifest))
    out += manifest
    out += struct.pack("<I", len(blobs))
    for name, tensor in blobs:
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw))
        out += raw
        out += encode_tensor(tensor)
    Path(path).write_bytes(bytes(out))


def _parse_manifest(text: str, offset: int) -> dict[str, str]:
    entries: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"manifest line without '=': {line!r}", offset=offset)
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def load_network(path: str | Path) -> Network:
    """Read an XNET container. Truncated or inconsistent files raise
    FormatError; no partially constructed network is ever returned."""
    buf = Path(path).read_bytes()
    if len(buf) < 9:
        raise FormatError("truncated XNET header", offset=len(buf))
    if buf[:4] != NETWORK_MAGIC:
        raise FormatError("bad XNET magic", offset=0)
    if buf[4] != NETWORK_VERSION:
        raise FormatError(f"unsupported XNET version {buf[4]}", offset=4)
    (manifest_len,) = struct.unpack_from("<I", buf, 5)
    pos = 9
    if len(buf) < pos + manifest_len:
        raise FormatError("truncated XNET manifest", offset=len(buf))
    try:
        manifest = buf[pos : pos + manifest_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"manifest is not UTF-8: {exc}", offset=pos) from None
    entries = _parse_manifest(manifest, pos)
    pos += manifest_len
    if len(buf) < pos + 4:
        raise FormatError("truncated XNET blob count", offset=len(buf))
    (blob_count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(blob_count):
        if len(buf) < pos + 4:
            raise FormatError("truncated XNET blob name length", offset=len(buf))
        (name_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if len(buf) < pos + name_len:
            raise FormatError("truncated XNET blob name", offset=len(buf))
        name = buf[pos : pos + name_len].decode("utf-8")
        pos += name_len
        tensors[name], pos = decode_tensor(buf, pos)
    if pos != len(buf):
        raise FormatError("trailing bytes after XNET blobs", offset=pos)

    def require(key: str) -> str:
        if key not in entries:
            raise FormatError(f"manifest missing key {key!r}", offset=9)
        return entries[key]

    try:
        input_shape = tuple(int(v) for v in require("input_shape").split(","))
        num_classes = int(require("num_classes"))
        num_layers = int(require("num_layers"))
    except ValueError as exc:
        raise FormatError(f"bad manifest value: {exc}", offset=9) from None

    layers: list[LayerSpec] = []
    for i in range(num_layers):
        kind_value = require(f"layer{i}.kind")
        try:
            kind = LayerKind(kind_value)
        except ValueError:
            raise FormatError(
                f"unknown layer kind {kind_value!r} at layer {i}", offset=9
            ) from None
        spec = LayerSpec(kind)
        if kind is LayerKind.CONV2D:
            spec.stride = int(require(f"layer{i}.stride"))
            spec.padding = int(require(f"layer{i}.padding"))
        elif kind is LayerKind.MAXPOOL2D:
            spec.window = int(require(f"layer{i}.window"))
            spec.stride = int(require(f"layer{i}.stride"))
        if kind in (LayerKind.CONV2D, LayerKind.DENSE):
            for part in ("weight", "bias"):
                key = f"layer{i}.{part}"
                if key not in tensors:
                    raise FormatError(f"missing blob {key!r}", offset=len(buf))
            spec.weight = tensors[f"layer{i}.weight"]
            spec.bias = tensors[f"layer{i}.bias"]
        layers.append(spec)
    try:
        return Network(layers, input_shape, num_classes)
    except (DimensionError, ContractError) as exc:
        raise FormatError(f"inconsistent network file: {exc}", offset=9) from None


def networks_equal(a: Network, b: Network) -> bool:
    """Bit-exact structural and parameter equality."""
    if (
        a.input_shape != b.input_shape
        or a.num_classes != b.num_classes
        or len(a.layers) != len(b.layers)
    ):
        return False
    for la, lb in zip(a.layers, b.layers):
        if (
            la.kind != lb.kind
            or la.stride != lb.stride
            or la.padding != lb.padding
            or la.window != lb.window
        ):
            return False
        for ta, tb in ((la.weight, lb.weight), (la.bias, lb.bias)):
            if (ta is None) != (tb is None):
                return False
            if ta is not None and (
                ta.shape != tb.shape
                or ta.tobytes() != tb.tobytes()
            ):
                return False
    return True
