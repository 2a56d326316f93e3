"""Layer modules: parameter containers over the functional ops.

A Module owns parameters (Tensors with requires_grad), buffers (plain
ndarrays such as batch-norm running stats), and submodules, all registered
automatically on attribute assignment.  named_parameters() walks the tree in
insertion order, so parameter ordering is deterministic and stable, which the
checkpoint format relies on.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import ShapeMismatch
from .tensor import Tensor


class Module:
    """Base class; subclasses assign layers/params as attributes and
    implement forward(x) -> Tensor."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, mod in self._modules.items():
            out.update(mod.named_parameters(prefix + name + "."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, b in self._buffers.items():
            out[prefix + name] = b
        for name, mod in self._modules.items():
            out.update(mod.named_buffers(prefix + name + "."))
        return out

    def modules(self):
        yield self
        for mod in self._modules.values():
            yield from mod.modules()

    def train(self):
        for mod in self.modules():
            object.__setattr__(mod, "training", True)
        return self

    def eval(self):
        for mod in self.modules():
            object.__setattr__(mod, "training", False)
        return self

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.zero_grad()

    def param_count(self) -> int:
        return sum(p.data.size for p in self.named_parameters().values())

    def astype(self, dtype):
        """Cast all parameters and buffers in place (e.g. float32 training)."""
        for p in self.named_parameters().values():
            p.data = p.data.astype(dtype)
        for mod in self.modules():
            for name, buf in list(mod._buffers.items()):
                mod.register_buffer(name, buf.astype(dtype))
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def _kernel_pair(k) -> tuple[int, int]:
    if isinstance(k, (tuple, list)):
        return int(k[0]), int(k[1])
    return int(k), int(k)


class Conv2d(Module):
    """2-D convolution (cross-correlation), weight [out, in, kh, kw]."""

    def __init__(self, in_ch: int, out_ch: int, k, rng: np.random.Generator,
                 stride: int = 1, padding=0, bias: bool = True):
        super().__init__()
        kh, kw = _kernel_pair(k)
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, (kh, kw)
        self.stride, self.padding = stride, padding
        fan_in = in_ch * kh * kw
        self.w = Tensor(he_normal(rng, (out_ch, in_ch, kh, kw), fan_in), requires_grad=True)
        self.has_bias = bias
        self.b = Tensor(np.zeros(out_ch), requires_grad=True) if bias else Tensor(np.zeros(out_ch))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class TConv2d(Module):
    """Transposed convolution, weight [in, out, kh, kw]."""

    def __init__(self, in_ch: int, out_ch: int, k, rng: np.random.Generator,
                 stride: int = 1, padding=0, bias: bool = True):
        super().__init__()
        kh, kw = _kernel_pair(k)
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, (kh, kw)
        self.stride, self.padding = stride, padding
        fan_in = in_ch * kh * kw
        self.w = Tensor(he_normal(rng, (in_ch, out_ch, kh, kw), fan_in), requires_grad=True)
        self.has_bias = bias
        self.b = Tensor(np.zeros(out_ch), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.transpose_conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    """Per-channel batch norm with running statistics."""

    def __init__(self, ch: int, eps: float = 1e-5, momentum: float = 0.9):
        super().__init__()
        self.ch, self.eps, self.momentum = ch, eps, momentum
        self.gamma = Tensor(np.ones(ch), requires_grad=True)
        self.beta = Tensor(np.zeros(ch), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(ch))
        self.register_buffer("running_var", np.ones(ch))

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class Dense(Module):
    """Fully connected layer on [N, D] inputs."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.w = Tensor(he_normal(rng, (d_in, d_out), d_in), requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.w, self.b)


class Dropout(Module):
    """Inverted dropout; active only in training mode.

    Owns its RNG so runs are reproducible; reseed() restores a known stream
    (gradient checks reseed before every forward so the mask is frozen).
    """

    def __init__(self, rate: float, seed: int = 0):
        super().__init__()
        self.rate = float(rate)
        self._seed = seed
        self.rng = np.random.default_rng(seed)

    def reseed(self, seed: int | None = None):
        self._seed = self._seed if seed is None else seed
        self.rng = np.random.default_rng(self._seed)

    def forward(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.rate, training=self.training, rng=self.rng)


_ACTIVATIONS = {
    "relu": ops.relu,
    "leaky_relu": ops.leaky_relu,
    "sigmoid": ops.sigmoid,
    "silu": ops.silu,
    "gelu": ops.gelu,
    "none": None,
}


def activation(name: str):
    if name not in _ACTIVATIONS:
        raise ShapeMismatch(f"unknown activation {name!r}")
    return _ACTIVATIONS[name]


class ConvBNAct(Module):
    """conv -> batch norm -> activation, the standard block unit."""

    def __init__(self, in_ch: int, out_ch: int, k, rng: np.random.Generator,
                 stride: int = 1, padding=0, act: str = "relu"):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, k, rng, stride=stride, padding=padding)
        self.bn = BatchNorm2d(out_ch)
        self.act_name = act
        self._act = activation(act)

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn(self.conv(x))
        return self._act(y) if self._act is not None else y
