"""Stride-1, dilation-free convolutional networks in 1D and 2D.

A layer computes ``x_l = sigma(h_l * x_{l-1} + b_l)`` with a true
(flipped-kernel) convolution whose centre tap sits at index ``(K-1)//2``.
Filters are stored in float32 by default; all arithmetic runs in float64.
"""
from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import (
    CheckpointFormatError,
    CheckpointTruncatedError,
    InputTooSmallError,
    InvalidConfigError,
    ShapeError,
)
from .signal_core import GridSignal

NONLINEARITIES = ("relu", "leaky_relu", "tanh", "identity")
PADDING_MODES = ("zero_same", "circular_same", "valid")
LEAKY_SLOPE = 0.01
SCHEMA_VERSION = 1
MAGIC = "WCNN"


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if name == "tanh":
        return np.tanh(z)
    return z


def activate_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return np.ones_like(z)


@dataclass(frozen=True, eq=False)
class ConvLayer:
    filters: np.ndarray
    bias: np.ndarray | None = None
    nonlinearity: str = "identity"

    def __post_init__(self):
        f = np.array(self.filters)
        if f.dtype not in (np.float32, np.float64):
            f = f.astype(np.float32)
        if f.ndim not in (3, 4):
            raise ShapeError(f"filters must be [out, in, K] or [out, in, K, K], got {f.shape}")
        k = f.shape[2]
        if f.ndim == 4 and f.shape[3] != k:
            raise ShapeError("2D filters must be square")
        if k % 2 == 0:
            raise InvalidConfigError(f"filter width must be odd, got {k}")
        if not np.all(np.isfinite(f)):
            raise InvalidConfigError("filter taps must be finite")
        if self.nonlinearity not in NONLINEARITIES:
            raise InvalidConfigError(f"unknown nonlinearity {self.nonlinearity!r}")
        f.setflags(write=False)
        object.__setattr__(self, "filters", f)
        if self.bias is not None:
            b = np.array(self.bias, dtype=f.dtype).reshape(-1)
            if b.shape != (f.shape[0],):
                raise ShapeError(f"bias must have {f.shape[0]} entries, got {b.shape}")
            if not np.all(np.isfinite(b)):
                raise InvalidConfigError("bias must be finite")
            b.setflags(write=False)
            object.__setattr__(self, "bias", b)

    @property
    def in_channels(self) -> int:
        return self.filters.shape[1]

    @property
    def out_channels(self) -> int:
        return self.filters.shape[0]

    @property
    def width(self) -> int:
        return self.filters.shape[2]

    @property
    def dims(self) -> int:
        return self.filters.ndim - 2


@dataclass(frozen=True, eq=False)
class CNNModel:
    layers: tuple[ConvLayer, ...]
    padding_mode: str = "zero_same"
    dims: int = 1

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise InvalidConfigError("model needs at least one layer")
        if self.padding_mode not in PADDING_MODES:
            raise InvalidConfigError(f"unknown padding mode {self.padding_mode!r}")
        if self.dims not in (1, 2):
            raise InvalidConfigError(f"dims must be 1 or 2, got {self.dims}")
        k = layers[0].width
        for idx, layer in enumerate(layers):
            if layer.dims != self.dims:
                raise ShapeError(f"layer {idx} is {layer.dims}D in a {self.dims}D model")
            if layer.width != k:
                raise InvalidConfigError("all layers must share one filter width")
            if idx and layer.in_channels != layers[idx - 1].out_channels:
                raise ShapeError(
                    f"layer {idx} expects {layer.in_channels} channels, "
                    f"previous layer gives {layers[idx - 1].out_channels}"
                )

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def filter_width(self) -> int:
        return self.layers[0].width

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels

    @property
    def border(self) -> int:
        """Samples per side touched by padding: ceil(L * (K - 1) / 2)."""
        return math.ceil(self.num_layers * (self.filter_width - 1) / 2)

    def channel_sizes(self) -> list[int]:
        return [self.in_channels] + [layer.out_channels for layer in self.layers]

    def with_params(self, params: Sequence[tuple[np.ndarray, np.ndarray | None]]) -> "CNNModel":
        layers = tuple(
            ConvLayer(w, b, layer.nonlinearity) for layer, (w, b) in zip(self.layers, params)
        )
        return CNNModel(layers, self.padding_mode, self.dims)

    def params(self) -> list[tuple[np.ndarray, np.ndarray | None]]:
        return [(layer.filters, layer.bias) for layer in self.layers]

    def astype(self, dtype) -> "CNNModel":
        return self.with_params(
            [(w.astype(dtype), None if b is None else b.astype(dtype)) for w, b in self.params()]
        )


@dataclass
class Gradients:
    filters: list[np.ndarray]
    bias: list[np.ndarray | None] = field(default_factory=list)


def init_model(
    channels: Sequence[int],
    filter_width: int = 5,
    dims: int = 1,
    hidden: str = "leaky_relu",
    last: str = "identity",
    padding_mode: str = "zero_same",
    bias: bool = False,
    seed=0,
    dtype=np.float32,
    gain: float = 1.0,
) -> CNNModel:
    """Random model with fan-in scaled normal taps."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    n = len(channels) - 1
    for idx in range(n):
        cin, cout = channels[idx], channels[idx + 1]
        shape = (cout, cin) + (filter_width,) * dims
        fan_in = cin * filter_width**dims
        scale = gain * (math.sqrt(2.0 / fan_in) if hidden in ("relu", "leaky_relu") else math.sqrt(1.0 / fan_in))
        w = (rng.standard_normal(shape) * scale).astype(dtype)
        b = np.zeros(cout, dtype=dtype) if bias else None
        layers.append(ConvLayer(w, b, hidden if idx < n - 1 else last))
    return CNNModel(tuple(layers), padding_mode, dims)


def default_mid_model(seed=0) -> CNNModel:
    return init_model((1, 16, 32, 16, 1), 5, dims=2, hidden="leaky_relu", last="identity",
                      padding_mode="zero_same", seed=seed)


# ------------------------------------------------------------------ kernels


def _pad(x: np.ndarray, c: int, mode: str, dims: int) -> np.ndarray:
    if mode == "valid" or c == 0:
        return x
    widths = ((0, 0), (0, 0)) + ((c, c),) * dims
    return np.pad(x, widths, mode="wrap" if mode == "circular_same" else "constant")


def _unpad(dxpad: np.ndarray, c: int, mode: str, dims: int) -> np.ndarray:
    if mode == "valid" or c == 0:
        return dxpad
    dx = dxpad
    for axis in range(2, 2 + dims):
        n = dx.shape[axis] - 2 * c
        core = np.take(dx, np.arange(c, c + n), axis=axis)
        if mode == "circular_same":
            core = core.copy()
            lead = [slice(None)] * dx.ndim
            idx_lo = [slice(None)] * dx.ndim
            idx_hi = [slice(None)] * dx.ndim
            lead[axis] = slice(0, c)
            idx_hi[axis] = slice(n - c, n)
            core[tuple(idx_hi)] += dx[tuple(lead)]
            lead[axis] = slice(c + n, c + n + c)
            idx_lo[axis] = slice(0, c)
            core[tuple(idx_lo)] += dx[tuple(lead)]
        dx = core
    return dx


def _flip(w: np.ndarray, dims: int) -> np.ndarray:
    return np.ascontiguousarray(w[(Ellipsis,) + (slice(None, None, -1),) * dims], dtype=np.float64)


def _corr(xpad, wf, dims):
    return kernels.corr1d_forward(xpad, wf) if dims == 1 else kernels.corr2d_forward(xpad, wf)


def forward_batch(model: CNNModel, x: np.ndarray, keep: bool = False):
    """Run a batch ``[B, C, *spatial]``; with ``keep`` also return the tape."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 + model.dims:
        raise ShapeError(f"expected a [batch, channels, ...] array of rank {2 + model.dims}")
    if x.shape[1] != model.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, model expects {model.in_channels}")
    k = model.filter_width
    c = (k - 1) // 2
    if model.padding_mode == "valid" and min(x.shape[2:]) <= model.num_layers * (k - 1):
        raise InputTooSmallError(
            f"valid padding needs width > {model.num_layers * (k - 1)}, got {min(x.shape[2:])}"
        )
    tape = []
    for layer in model.layers:
        xpad = _pad(x, c, model.padding_mode, model.dims)
        z = _corr(xpad, _flip(layer.filters, model.dims), model.dims)
        if layer.bias is not None:
            z += layer.bias.astype(np.float64).reshape((1, -1) + (1,) * model.dims)
        if keep:
            tape.append((xpad, z))
        x = activate(layer.nonlinearity, z)
    return (x, tape) if keep else x


def backward_batch(model: CNNModel, tape, upstream: np.ndarray) -> Gradients:
    """Gradients of ``sum(upstream * output)`` given a tape from :func:`forward_batch`."""
    k = model.filter_width
    c = (k - 1) // 2
    g = np.ascontiguousarray(upstream, dtype=np.float64)
    gw: list = [None] * model.num_layers
    gb: list = [None] * model.num_layers
    for idx in range(model.num_layers - 1, -1, -1):
        layer = model.layers[idx]
        xpad, z = tape[idx]
        if g.shape != z.shape:
            raise ShapeError(f"upstream shape {g.shape} != layer output shape {z.shape}")
        gz = np.ascontiguousarray(g * activate_grad(layer.nonlinearity, z))
        if model.dims == 1:
            dwf = kernels.corr1d_grad_weight(xpad, gz, k)
        else:
            dwf = kernels.corr2d_grad_weight(xpad, gz, k)
        gw[idx] = dwf[(Ellipsis,) + (slice(None, None, -1),) * model.dims].copy()
        if layer.bias is not None:
            gb[idx] = gz.sum(axis=(0,) + tuple(range(2, 2 + model.dims)))
        if idx:
            wf = _flip(layer.filters, model.dims)
            if model.dims == 1:
                dxpad = kernels.corr1d_grad_input(gz, wf, xpad.shape[2])
            else:
                dxpad = kernels.corr2d_grad_input(gz, wf, xpad.shape[2], xpad.shape[3])
            g = _unpad(dxpad, c, model.padding_mode, model.dims)
    return Gradients(gw, gb)


def output_origin(model: CNNModel, sig: GridSignal) -> float:
    if model.padding_mode != "valid":
        return sig.origin
    return sig.origin + model.num_layers * (model.filter_width - 1) / 2 * sig.resolution


def _as_batch(model: CNNModel, sig: GridSignal) -> np.ndarray:
    if sig.ndim != model.dims:
        raise ShapeError(f"{sig.ndim}D signal given to a {model.dims}D model")
    if sig.channels != model.in_channels:
        raise ShapeError(f"signal has {sig.channels} channels, model expects {model.in_channels}")
    return sig.channel_array()[None]


def forward(model: CNNModel, sig: GridSignal) -> GridSignal:
    y = forward_batch(model, _as_batch(model, sig))[0]
    ch = model.out_channels
    return GridSignal(y[0] if ch == 1 else y, sig.resolution, output_origin(model, sig), ch)


def backward(model: CNNModel, sig: GridSignal, upstream: GridSignal) -> Gradients:
    out, tape = forward_batch(model, _as_batch(model, sig), keep=True)
    up = upstream.channel_array()[None]
    if up.shape != out.shape:
        raise ShapeError(f"upstream shape {up.shape[1:]} != output shape {out.shape[1:]}")
    return backward_batch(model, tape, up)


def l1_product(model: CNNModel) -> float:
    """Product over layers of the tap-absolute-sum of each layer's filters."""
    h = 1.0
    for layer in model.layers:
        h *= float(np.sum(np.abs(layer.filters, dtype=np.float64)))
    return h


def shift_signal(sig: GridSignal, offset) -> GridSignal:
    offsets = (offset,) * sig.ndim if np.isscalar(offset) else tuple(offset)
    axes = tuple(range(sig.values.ndim - sig.ndim, sig.values.ndim))
    return sig.with_values(np.roll(sig.values, offsets, axis=axes))


# --------------------------------------------------------------- checkpoint


def _header(model: CNNModel) -> str:
    lines = [
        f"{MAGIC} {SCHEMA_VERSION}",
        f"dims {model.dims}",
        f"layers {model.num_layers}",
        f"kernel {model.filter_width}",
        f"padding {model.padding_mode}",
        "channels " + " ".join(str(c) for c in model.channel_sizes()),
        "nonlinearity " + " ".join(layer.nonlinearity for layer in model.layers),
        "bias " + " ".join("1" if layer.bias is not None else "0" for layer in model.layers),
        "end",
    ]
    return "\n".join(lines) + "\n"


def checkpoint_bytes(model: CNNModel) -> bytes:
    chunks = [_header(model).encode("ascii")]
    for layer in model.layers:
        chunks.append(np.ascontiguousarray(layer.filters, dtype="<f4").tobytes())
        if layer.bias is not None:
            chunks.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    return b"".join(chunks)


def save_checkpoint(model: CNNModel, path) -> None:
    """Write the textual header followed by little-endian float32 payload.

    Header lines, in order: ``WCNN <version>``, ``dims``, ``layers``,
    ``kernel``, ``padding``, ``channels`` (L+1 sizes), ``nonlinearity``
    (L names), ``bias`` (L flags), ``end``. The payload holds each layer's
    filters row-major, then its bias if flagged, in layer order.
    """
    data = checkpoint_bytes(model)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _parse_header(data: bytes):
    fields = {}
    offset = 0
    order = ["dims", "layers", "kernel", "padding", "channels", "nonlinearity", "bias"]
    expected = [MAGIC] + order + ["end"]
    for key in expected:
        nl = data.find(b"\n", offset)
        if nl < 0:
            raise CheckpointFormatError("unterminated header line", offset)
        try:
            line = data[offset:nl].decode("ascii")
        except UnicodeDecodeError:
            raise CheckpointFormatError("non-ascii header", offset) from None
        tokens = line.split()
        if not tokens or tokens[0] != key:
            raise CheckpointFormatError(f"expected header key {key!r}", offset)
        if key == MAGIC:
            if len(tokens) != 2 or tokens[1] != str(SCHEMA_VERSION):
                raise CheckpointFormatError(
                    f"unsupported schema version {' '.join(tokens[1:])!r}", offset + len(MAGIC) + 1
                )
        elif key != "end":
            fields[key] = (tokens[1:], offset)
        offset = nl + 1
        if key == "end":
            break
    return fields, offset


def _int_field(fields, key, count=None):
    tokens, off = fields[key]
    try:
        vals = [int(t) for t in tokens]
    except ValueError:
        raise CheckpointFormatError(f"non-integer value in {key!r}", off) from None
    if count is not None and len(vals) != count:
        raise CheckpointFormatError(f"{key!r} needs {count} values, got {len(vals)}", off)
    return vals


def model_from_bytes(data: bytes) -> CNNModel:
    fields, offset = _parse_header(data)
    (dims,) = _int_field(fields, "dims", 1)
    (nlayers,) = _int_field(fields, "layers", 1)
    (k,) = _int_field(fields, "kernel", 1)
    if dims not in (1, 2) or nlayers < 1 or k < 1 or k % 2 == 0:
        raise CheckpointFormatError("invalid dims/layers/kernel", fields["dims"][1])
    chans = _int_field(fields, "channels", nlayers + 1)
    flags = _int_field(fields, "bias", nlayers)
    nonlin, noff = fields["nonlinearity"]
    if len(nonlin) != nlayers or any(n not in NONLINEARITIES for n in nonlin):
        raise CheckpointFormatError("bad nonlinearity list", noff)
    ptoks, poff = fields["padding"]
    padding = ptoks[0] if len(ptoks) == 1 else None
    if padding not in PADDING_MODES:
        raise CheckpointFormatError(f"unknown padding mode {padding!r}", poff)
    layers = []
    for idx in range(nlayers):
        shape = (chans[idx + 1], chans[idx]) + (k,) * dims
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(data):
            raise CheckpointTruncatedError(f"payload truncated in layer {idx} filters", len(data))
        w = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset = end
        b = None
        if flags[idx]:
            end = offset + 4 * chans[idx + 1]
            if end > len(data):
                raise CheckpointTruncatedError(f"payload truncated in layer {idx} bias", len(data))
            b = np.frombuffer(data, dtype="<f4", count=chans[idx + 1], offset=offset)
            offset = end
        layers.append(ConvLayer(w.astype(np.float32), None if b is None else b.astype(np.float32), nonlin[idx]))
    if offset != len(data):
        raise CheckpointFormatError("trailing bytes after payload", offset)
    return CNNModel(tuple(layers), padding, dims)


def load_checkpoint(path) -> CNNModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
