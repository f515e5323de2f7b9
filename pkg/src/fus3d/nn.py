"""Neural building blocks on top of the tensor engine.

Parameters, module containers, the layers the motion network needs
(conv, linear, LSTM cell), weight initialization with explicit seeds,
and the binary checkpoint format.
"""

from __future__ import annotations

import struct
from typing import Iterable

import numpy as np

from .tensor import Tensor, concat, matmul, mul, sigmoid, tanh, conv2d, add

__all__ = [
    "Parameter",
    "Module",
    "Linear",
    "Conv2d",
    "LSTMCell",
    "lstm_cell",
    "kaiming_uniform",
    "orthogonal",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"CKPT"
CHECKPOINT_VERSION = 1


class Parameter:
    """A named, trainable tensor."""

    def __init__(self, data, name: str = ""):
        self.tensor = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self.name = name

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        self.tensor.data = np.asarray(value, dtype=np.float64)

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name or '?'}, shape={self.tensor.shape})"


class Module:
    """Container tracking parameters and submodules in definition order."""

    def named_parameters(self, prefix: str = "") -> list:
        out = []
        for key, value in vars(self).items():
            path = f"{prefix}{key}" if prefix else key
            if isinstance(value, Parameter):
                value.name = path
                out.append((path, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(prefix=path + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(prefix=f"{path}.{i}."))
                    elif isinstance(item, Parameter):
                        item.name = f"{path}.{i}"
                        out.append((item.name, item))
        names = [n for n, _ in out]
        if len(names) != len(set(names)):
            raise ValueError("duplicate parameter names in module tree")
        return out

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_arrays(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays: dict) -> None:
        for name, p in self.named_parameters():
            if name not in arrays:
                raise KeyError(f"checkpoint is missing parameter {name!r}")
            value = arrays[name]
            if value.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: checkpoint {value.shape}, "
                    f"model {p.data.shape}"
                )
            p.data = value.copy()


# -- initializers --------------------------------------------------------------

def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def orthogonal(rng: np.random.Generator, shape) -> np.ndarray:
    """(Semi-)orthogonal matrix via QR of a Gaussian draw."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return q[:rows, :cols].copy()


# -- layers ---------------------------------------------------------------------

class Linear(Module):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(
            kaiming_uniform(rng, (out_features, in_features), in_features)
        )
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight.tensor.transpose(1, 0))
        if self.bias is not None:
            y = add(y, self.bias.tensor)
        return y


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 bias: bool = True):
        fan_in = in_channels * kernel * kernel
        self.weight = Parameter(
            kaiming_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in)
        )
        self.bias = Parameter(np.zeros(out_channels)) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        b = self.bias.tensor if self.bias is not None else None
        return conv2d(x, self.weight.tensor, b, stride=self.stride,
                      padding=self.padding)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor,
              w_ih: Tensor, w_hh: Tensor, bias: Tensor | None = None):
    """One LSTM step. Gate order along the 4H axis: input, forget, cell, output.

    x is (batch, in), h and c are (batch, hidden); returns (h', c').
    """
    hidden = h.shape[-1]
    gates = add(matmul(x, w_ih.transpose(1, 0)), matmul(h, w_hh.transpose(1, 0)))
    if bias is not None:
        gates = add(gates, bias)
    gi = sigmoid(gates[:, 0 * hidden : 1 * hidden])
    gf = sigmoid(gates[:, 1 * hidden : 2 * hidden])
    gc = tanh(gates[:, 2 * hidden : 3 * hidden])
    go = sigmoid(gates[:, 3 * hidden : 4 * hidden])
    c_next = add(mul(gf, c), mul(gi, gc))
    h_next = mul(go, tanh(c_next))
    return h_next, c_next


class LSTMCell(Module):
    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.w_ih = Parameter(
            kaiming_uniform(rng, (4 * hidden_size, input_size), input_size)
        )
        self.w_hh = Parameter(orthogonal(rng, (4 * hidden_size, hidden_size)))
        self.bias = Parameter(np.zeros(4 * hidden_size))
        self.hidden_size = hidden_size

    def __call__(self, x: Tensor, h: Tensor, c: Tensor):
        return lstm_cell(x, h, c, self.w_ih.tensor, self.w_hh.tensor,
                         self.bias.tensor)

    def initial_state(self, batch: int):
        return (Tensor(np.zeros((batch, self.hidden_size))),
                Tensor(np.zeros((batch, self.hidden_size))))


# -- checkpoints -------------------------------------------------------------------
#
# Layout: magic "CKPT", u32 version, u32 config length, UTF-8 "key=value"
# lines, u32 record count, then per record: u32 name length, UTF-8 name,
# u32 rank, u32 extents, little-endian f64 payload.

def save_checkpoint(path, arrays: dict, config: dict | None = None) -> None:
    config = config or {}
    config_text = "".join(f"{k}={config[k]}\n" for k in sorted(config))
    config_bytes = config_text.encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<I", CHECKPOINT_VERSION))
        handle.write(struct.pack("<I", len(config_bytes)))
        handle.write(config_bytes)
        handle.write(struct.pack("<I", len(arrays)))
        for name in arrays:
            payload = np.asarray(arrays[name], dtype="<f8")
            if payload.ndim and not payload.flags.c_contiguous:
                payload = np.ascontiguousarray(payload)
            encoded = name.encode("utf-8")
            handle.write(struct.pack("<I", len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack("<I", payload.ndim))
            for extent in payload.shape:
                handle.write(struct.pack("<I", extent))
            handle.write(payload.tobytes())


def load_checkpoint(path):
    """Read a checkpoint, returning (arrays, config)."""
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    offset = 4

    def read_u32() -> int:
        nonlocal offset
        (value,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        return value

    version = read_u32()
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    config_len = read_u32()
    config_text = blob[offset : offset + config_len].decode("utf-8")
    offset += config_len
    config = {}
    for line in config_text.splitlines():
        if line:
            key, _, value = line.partition("=")
            config[key] = value
    arrays = {}
    for _ in range(read_u32()):
        name_len = read_u32()
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        rank = read_u32()
        shape = tuple(read_u32() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        payload = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        arrays[name] = payload.reshape(shape).astype(np.float64)
    return arrays, config
