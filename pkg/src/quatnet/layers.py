"""Quaternion and real-valued layers.

Quaternion activations travel as real tensors in split layout: along the
feature (or channel) axis the first quarter holds the r components, then
x, y and z. A quaternion weight ``W = Wr + Wx i + Wy j + Wz k`` of shape
``[out, in]`` acts as the real block matrix::

    [[Wr, -Wx, -Wy, -Wz],
     [Wx,  Wr, -Wz,  Wy],
     [Wy,  Wz,  Wr, -Wx],
     [Wz, -Wy,  Wx,  Wr]]

which is the Hamilton product ``W ⊗ input`` applied entry by entry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .errors import InvalidFan, InvalidRate, KernelLargerThanInput, ShapeMismatch
from .tensor import QuaternionTensor, Tensor, from_op, qt_pack, qt_to_real, real_to_qt

# (component index, sign) for each block of the structured matrix
_BLOCKS = (
    ((0, 1), (1, -1), (2, -1), (3, -1)),
    ((1, 1), (0, 1), (3, -1), (2, 1)),
    ((2, 1), (3, 1), (0, 1), (1, -1)),
    ((3, 1), (2, -1), (1, 1), (0, 1)),
)


def hamilton_weight(r: Tensor, x: Tensor, y: Tensor, z: Tensor) -> Tensor:
    """Expand quaternion weight components ``[out, in, ...]`` to ``[4 out, 4 in, ...]``."""
    comps = (r, x, y, z)
    data = [c.data for c in comps]
    out = np.concatenate(
        [np.concatenate([s * data[c] for c, s in row], axis=1) for row in _BLOCKS], axis=0
    )
    o, i = r.shape[0], r.shape[1]

    def backward(g):
        grads = [np.zeros_like(d) for d in data]
        for a, row in enumerate(_BLOCKS):
            for b, (c, s) in enumerate(row):
                block = g[a * o:(a + 1) * o, b * i:(b + 1) * i]
                if s > 0:
                    grads[c] += block
                else:
                    grads[c] -= block
        return tuple(grads)

    return from_op(out, comps, backward, "hamilton_weight")


# ---------------------------------------------------------------- initialization


@dataclass(frozen=True)
class InitSpec:
    fan_in: int
    fan_out: int
    seed: int = 0
    scheme: str = "quaternion-glorot"


def _check_fans(fan_in, fan_out):
    if fan_in <= 0 or fan_out <= 0:
        raise InvalidFan(f"fan_in and fan_out must be positive, got {fan_in}, {fan_out}")


def quaternion_init(spec: InitSpec, shape, rng=None) -> QuaternionTensor:
    """Polar-form quaternion weights.

    ``|w|`` is Rayleigh with scale ``1/sqrt(2 (fan_in + fan_out))``, the
    phase is uniform on ``[-pi, pi]`` and the imaginary axis is a uniform
    random unit 3-vector.
    """
    _check_fans(spec.fan_in, spec.fan_out)
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    shape = tuple(shape)
    sigma = 1.0 / math.sqrt(2.0 * (spec.fan_in + spec.fan_out))
    modulus = rng.rayleigh(scale=sigma, size=shape)
    phase = rng.uniform(-np.pi, np.pi, size=shape)
    axis = rng.normal(size=(3,) + shape)
    axis /= np.sqrt(np.sum(axis * axis, axis=0))
    s = modulus * np.sin(phase)
    return qt_pack(modulus * np.cos(phase), s * axis[0], s * axis[1], s * axis[2])


def real_init(fan_in, fan_out, shape, rng) -> np.ndarray:
    """Glorot-normal weights for the real-valued baselines."""
    _check_fans(fan_in, fan_out)
    return rng.normal(scale=math.sqrt(2.0 / (fan_in + fan_out)), size=tuple(shape))


# ---------------------------------------------------------------- modules


class Module:
    training = True

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, list):
                for k, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{k}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, list):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def num_parameters(self):
        return sum(p.size for p in self.parameters())


def _param(data, name):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class QDense(Module):
    """Fully connected quaternion layer, ``in_q`` to ``out_q`` quaternions."""

    def __init__(self, in_q, out_q, bias=True, rng=None, seed=0):
        rng = np.random.default_rng(seed) if rng is None else rng
        self.in_q, self.out_q = in_q, out_q
        w = quaternion_init(InitSpec(in_q, out_q, seed), (out_q, in_q), rng)
        self.w_r, self.w_x, self.w_y, self.w_z = (_param(c.data, n) for c, n in zip(w.components(), "rxyz"))
        self.bias = _param(np.zeros(4 * out_q), "bias") if bias else None

    @property
    def weight(self) -> QuaternionTensor:
        return QuaternionTensor(self.w_r, self.w_x, self.w_y, self.w_z)

    def structured_weight(self):
        return hamilton_weight(self.w_r, self.w_x, self.w_y, self.w_z)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != 4 * self.in_q:
            raise ShapeMismatch(f"expected {4 * self.in_q} real inputs, got {x.shape[-1]}")
        return T.linear(x, self.structured_weight(), self.bias)

    @staticmethod
    def count(in_q, out_q, bias=True):
        return 4 * in_q * out_q + (4 * out_q if bias else 0)


class Dense(Module):
    def __init__(self, in_features, out_features, bias=True, rng=None, seed=0):
        rng = np.random.default_rng(seed) if rng is None else rng
        self.in_features, self.out_features = in_features, out_features
        self.weight = _param(real_init(in_features, out_features, (out_features, in_features), rng), "weight")
        self.bias = _param(np.zeros(out_features), "bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeMismatch(f"expected {self.in_features} inputs, got {x.shape[-1]}")
        return T.linear(x, self.weight, self.bias)

    @staticmethod
    def count(in_features, out_features, bias=True):
        return in_features * out_features + (out_features if bias else 0)


def qdense_forward(layer: QDense, qt: QuaternionTensor) -> QuaternionTensor:
    return real_to_qt(layer(qt_to_real(qt)))


# ---------------------------------------------------------------- convolution


def same_padding(kernel):
    return tuple(((k - 1) // 2, k // 2) for k in kernel)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, padding) -> Tensor:
    """Cross-correlation of ``x [B, C, H, W]`` with ``weight [O, C, kh, kw]``."""
    (pt, pb), (pl, pr) = padding
    kh, kw = weight.shape[2:]
    if x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, kernel expects {weight.shape[1]}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise KernelLargerThanInput(f"padded input {xp.shape[2:]} smaller than kernel {(kh, kw)}")
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    ho, wo = out.shape[2:]

    def backward(g):
        gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + ho, j:j + wo] += np.tensordot(weight.data[:, :, i, j], g, axes=([0], [1])).transpose(1, 0, 2, 3)
        gx = gxp[:, :, pt:pt + x.shape[2], pl:pl + x.shape[3]]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return from_op(np.ascontiguousarray(out), parents, backward, "conv2d")


class QConv2d(Module):
    """2-D quaternion convolution over ``in_q`` quaternion feature maps."""

    def __init__(self, in_q, out_q, kernel=(3, 5), padding="same", bias=True, rng=None, seed=0):
        rng = np.random.default_rng(seed) if rng is None else rng
        self.in_q, self.out_q, self.kernel = in_q, out_q, tuple(kernel)
        self.padding = same_padding(self.kernel) if padding == "same" else tuple(tuple(p) for p in padding)
        area = self.kernel[0] * self.kernel[1]
        w = quaternion_init(InitSpec(in_q * area, out_q * area, seed), (out_q, in_q) + self.kernel, rng)
        self.w_r, self.w_x, self.w_y, self.w_z = (_param(c.data, n) for c, n in zip(w.components(), "rxyz"))
        self.bias = _param(np.zeros(4 * out_q), "bias") if bias else None

    @property
    def weight(self) -> QuaternionTensor:
        return QuaternionTensor(self.w_r, self.w_x, self.w_y, self.w_z)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != 4 * self.in_q:
            raise ShapeMismatch(f"expected {4 * self.in_q} real maps, got {x.shape[1]}")
        kernel = hamilton_weight(self.w_r, self.w_x, self.w_y, self.w_z)
        return conv2d(x, kernel, self.bias, self.padding)

    @staticmethod
    def count(in_q, out_q, kernel=(3, 5), bias=True):
        return 4 * in_q * out_q * kernel[0] * kernel[1] + (4 * out_q if bias else 0)


class Conv2d(Module):
    def __init__(self, in_maps, out_maps, kernel=(3, 5), padding="same", bias=True, rng=None, seed=0):
        rng = np.random.default_rng(seed) if rng is None else rng
        self.in_maps, self.out_maps, self.kernel = in_maps, out_maps, tuple(kernel)
        self.padding = same_padding(self.kernel) if padding == "same" else tuple(tuple(p) for p in padding)
        area = self.kernel[0] * self.kernel[1]
        self.weight = _param(real_init(in_maps * area, out_maps * area, (out_maps, in_maps) + self.kernel, rng), "weight")
        self.bias = _param(np.zeros(out_maps), "bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.padding)

    @staticmethod
    def count(in_maps, out_maps, kernel=(3, 5), bias=True):
        return in_maps * out_maps * kernel[0] * kernel[1] + (out_maps if bias else 0)


def qconv2d_forward(layer: QConv2d, qt: QuaternionTensor) -> QuaternionTensor:
    """Pre-activation output for ``qt`` of shape ``[batch, in_q, H, W]``."""
    return real_to_qt(layer(qt_to_real(qt, axis=1)), axis=1)


# ---------------------------------------------------------------- activations


class PReLU(Module):
    def __init__(self, init=0.25):
        self.slope = _param(np.array([init]), "slope")

    def __call__(self, x):
        return T.prelu(x, self.slope)


ACTIVATIONS = {
    "tanh": T.tanh,
    "sigmoid": T.sigmoid,
    "relu": T.relu,
    "identity": T.identity,
    "linear": T.identity,
}


def activation(name):
    if name == "prelu":
        return PReLU()
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


def split_activation(qt: QuaternionTensor, f) -> QuaternionTensor:
    """Apply a real activation to each component block independently."""
    f = ACTIVATIONS[f] if isinstance(f, str) else f
    return qt_pack(*(f(c) for c in qt.components()))


# ---------------------------------------------------------------- recurrence


class QRNNCell(Module):
    """Vanilla quaternion recurrence with an optional output projection.

    ``h_t = act(W_hh ⊗ h_{t-1} + W_hx ⊗ x_t + b)`` and, when ``out_q`` is
    set, ``y_t = out_act(W_yh ⊗ h_t + b_y)``.
    """

    def __init__(self, in_q, hidden_q, out_q=None, activation="tanh", output_activation="identity",
                 rng=None, seed=0):
        rng = np.random.default_rng(seed) if rng is None else rng
        self.in_q, self.hidden_q, self.out_q = in_q, hidden_q, out_q
        self.act = ACTIVATIONS[activation]
        self.out_act = ACTIVATIONS[output_activation]
        self.input_map = QDense(in_q, hidden_q, bias=True, rng=rng)
        self.recurrent_map = QDense(hidden_q, hidden_q, bias=False, rng=rng)
        self.output_map = QDense(hidden_q, out_q, bias=True, rng=rng) if out_q else None

    def step(self, h_prev: Tensor, x_t: Tensor) -> Tensor:
        return self.act(self.input_map(x_t) + self.recurrent_map(h_prev))

    def output(self, h_t: Tensor) -> Tensor:
        if self.output_map is None:
            return h_t
        return self.out_act(self.output_map(h_t))

    def run(self, x: Tensor, h0=None) -> Tensor:
        """Unroll over ``x [B, T, 4 in_q]`` and return hidden states ``[B, T, 4 H]``."""
        batch, steps = x.shape[0], x.shape[1]
        drive = self.input_map(x)
        w_hh = self.recurrent_map.structured_weight()
        h = T.Tensor(np.zeros((batch, 4 * self.hidden_q))) if h0 is None else h0
        states = []
        for t in range(steps):
            h = self.act(drive[:, t, :] + T.linear(h, w_hh))
            states.append(h)
        return T.stack(states, axis=1)

    @staticmethod
    def count(in_q, hidden_q, out_q=None):
        n = QDense.count(in_q, hidden_q) + QDense.count(hidden_q, hidden_q, bias=False)
        return n + (QDense.count(hidden_q, out_q) if out_q else 0)


class RNNCell(Module):
    def __init__(self, in_features, hidden, out_features=None, activation="tanh",
                 output_activation="identity", rng=None, seed=0):
        rng = np.random.default_rng(seed) if rng is None else rng
        self.in_features, self.hidden, self.out_features = in_features, hidden, out_features
        self.act = ACTIVATIONS[activation]
        self.out_act = ACTIVATIONS[output_activation]
        self.input_map = Dense(in_features, hidden, bias=True, rng=rng)
        self.recurrent_map = Dense(hidden, hidden, bias=False, rng=rng)
        self.output_map = Dense(hidden, out_features, rng=rng) if out_features else None

    def step(self, h_prev, x_t):
        return self.act(self.input_map(x_t) + self.recurrent_map(h_prev))

    def output(self, h_t):
        if self.output_map is None:
            return h_t
        return self.out_act(self.output_map(h_t))

    def run(self, x: Tensor, h0=None) -> Tensor:
        batch, steps = x.shape[0], x.shape[1]
        drive = self.input_map(x)
        h = T.Tensor(np.zeros((batch, self.hidden))) if h0 is None else h0
        states = []
        for t in range(steps):
            h = self.act(drive[:, t, :] + T.linear(h, self.recurrent_map.weight))
            states.append(h)
        return T.stack(states, axis=1)

    @staticmethod
    def count(in_features, hidden, out_features=None):
        n = Dense.count(in_features, hidden) + Dense.count(hidden, hidden, bias=False)
        return n + (Dense.count(hidden, out_features) if out_features else 0)


def qrnn_step(cell: QRNNCell, h_prev: QuaternionTensor, x_t: QuaternionTensor) -> QuaternionTensor:
    return real_to_qt(cell.step(qt_to_real(h_prev), qt_to_real(x_t)))


def qrnn_output(cell: QRNNCell, h_t: QuaternionTensor) -> QuaternionTensor:
    return real_to_qt(cell.output(qt_to_real(h_t)))


# ---------------------------------------------------------------- pooling


def pool_freq(x: Tensor, window: int, quaternion: bool) -> Tensor:
    """Max-pool ``x [B, C, F, T]`` along the frequency axis.

    In quaternion mode the channels are split r|x|y|z and each window keeps
    the whole quaternion with the largest norm. A trailing partial window
    is pooled as-is.
    """
    if window == 1:
        return x
    b, c, f, t = x.shape
    groups = 4 if quaternion else 1
    out_f = -(-f // window)
    pad = out_f * window - f
    src = x.data.reshape(b, groups, c // groups, f, t)
    score = np.sqrt(np.sum(src * src, axis=1)) if quaternion else src[:, 0]
    score = np.pad(score, ((0, 0), (0, 0), (0, pad), (0, 0)), constant_values=-np.inf)
    pick = np.argmax(score.reshape(b, score.shape[1], out_f, window, t), axis=3)
    rows = np.arange(out_f)[None, None, :, None] * window + pick
    rows = np.broadcast_to(rows[:, None], (b, groups) + rows.shape[1:])
    out = np.take_along_axis(src, rows, axis=3).reshape(b, c, out_f, t)

    def backward(g):
        gx = np.zeros(src.shape)
        np.put_along_axis(gx, rows, g.reshape(rows.shape), axis=3)
        return (gx.reshape(x.shape),)

    return from_op(out, (x,), backward, "pool_freq")


def maxpool_freq(qt: QuaternionTensor, window: int) -> QuaternionTensor:
    """Entity-preserving frequency pooling of ``qt [batch, maps, F, T]``."""
    return real_to_qt(pool_freq(qt_to_real(qt, axis=1), window, quaternion=True), axis=1)


# ---------------------------------------------------------------- dropout


def dropout(x: Tensor, rate: float, training: bool, rng, axis: int = -1, quaternion: bool = True) -> Tensor:
    """Inverted dropout; in quaternion mode whole quaternions along ``axis`` are kept or dropped."""
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    axis = axis % x.ndim
    shape = list(x.shape)
    if quaternion:
        shape[axis] //= 4
    keep = (rng.random(shape) >= rate) / (1.0 - rate)
    if quaternion:
        keep = np.concatenate([keep] * 4, axis=axis)
    return T.mul(x, keep)


# ---------------------------------------------------------------- output head


class SoftmaxHead(Module):
    """Real dense layer followed by a softmax over ``classes``."""

    def __init__(self, in_features, classes, rng=None, seed=0):
        if classes < 2:
            raise ValueError("softmax head needs at least two classes")
        self.dense = Dense(in_features, classes, rng=rng, seed=seed)

    def logits(self, x):
        if isinstance(x, QuaternionTensor):
            x = qt_to_real(x)
        return self.dense(x)

    def log_probs(self, x):
        return T.log_softmax(self.logits(x))

    def __call__(self, x):
        return T.softmax(self.logits(x))

    @staticmethod
    def count(in_features, classes):
        return Dense.count(in_features, classes)


def real_softmax_head(x, head: SoftmaxHead) -> Tensor:
    return head(x)


def param_count(model: Module) -> dict:
    """Real-parameter counts per named parameter plus ``"total"``."""
    counts = {name: p.size for name, p in model.named_parameters()}
    counts["total"] = sum(counts.values())
    return counts
