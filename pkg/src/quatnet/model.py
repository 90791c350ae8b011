"""Model configuration and assembly of the CNN/QCNN and RNN/QRNN stacks.

All widths in a config are real-equivalent: a quaternion layer of width
1024 holds 256 quaternion units. Inputs are ``[batch, frames, 4 * bands]``
in split layout, so real and quaternion models see the same 4F values.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import InvalidConfig, ShapeMismatch
from .layers import (
    Conv2d, Dense, Module, PReLU, QConv2d, QDense, QRNNCell, RNNCell, SoftmaxHead, activation, dropout,
    pool_freq,
)

KINDS = ("cnn", "qcnn", "rnn", "qrnn")
HEADS = ("ctc", "framewise")


@dataclass
class TrainSchedule:
    epochs: int = 25
    batch_size: int = 8
    learning_rate: float = 8e-4
    halving_factor: float = 0.5
    patience: int = 1
    rho: float = 0.99
    epsilon: float = 1e-8
    schedule_metric: str = "dev_loss"


@dataclass
class ModelConfig:
    kind: str = "qrnn"
    head: str = "framewise"
    classes: int = 62
    input_bands: int = 40
    normalize_features: bool = False
    activation: str = ""
    first_conv_maps: int = 32
    conv_maps: list = field(default_factory=lambda: [32, 32, 64, 64, 128, 128, 256, 256, 256, 256])
    kernel: list = field(default_factory=lambda: [3, 5])
    pool_window: int = 2
    dense: list = field(default_factory=lambda: [1024, 1024, 256])
    recurrent_layers: int = 4
    hidden: int = 1024
    dropout: float = 0.2
    l2: float = 1e-5
    seed: int = 0
    train: TrainSchedule = field(default_factory=TrainSchedule)

    @property
    def quaternion(self):
        return self.kind in ("qcnn", "qrnn")

    @property
    def recurrent(self):
        return self.kind in ("rnn", "qrnn")

    @property
    def act(self):
        return self.activation or ("tanh" if self.recurrent else "prelu")

    @property
    def outputs(self):
        return self.classes + 1 if self.head == "ctc" else self.classes

    def widths(self):
        if self.recurrent:
            return [self.hidden] * self.recurrent_layers
        return [self.first_conv_maps, *self.conv_maps, *self.dense]

    def validate(self):
        def bad(reason):
            raise InvalidConfig(reason)

        if self.kind not in KINDS:
            bad(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.head not in HEADS:
            bad(f"head must be one of {HEADS}, got {self.head!r}")
        if self.outputs < 2:
            bad(f"need at least 2 output classes, got {self.outputs}")
        if self.input_bands < 1:
            bad("input_bands must be positive")
        for w in self.widths():
            if not isinstance(w, int) or w <= 0:
                bad(f"layer widths must be positive integers, got {w!r}")
            if self.quaternion and w % 4:
                bad(f"quaternion layer width {w} is not divisible by 4")
        if not self.recurrent:
            if len(self.kernel) != 2 or min(self.kernel) < 1:
                bad(f"kernel must be two positive extents, got {self.kernel}")
            if self.pool_window < 1:
                bad("pool_window must be >= 1")
        elif self.recurrent_layers < 1:
            bad("recurrent_layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            bad(f"dropout must be in [0, 1), got {self.dropout}")
        if self.l2 < 0:
            bad("l2 must be non-negative")
        if self.act not in ("tanh", "sigmoid", "relu", "prelu", "identity"):
            bad(f"unknown activation {self.act!r}")
        s = self.train
        if s.epochs < 0 or s.batch_size < 1 or s.learning_rate <= 0 or not 0 < s.halving_factor <= 1:
            bad("train schedule needs epochs >= 0, batch_size >= 1, learning_rate > 0, 0 < halving_factor <= 1")
        if s.patience < 1:
            bad("patience must be >= 1")
        if s.schedule_metric not in ("dev_loss", "dev_per"):
            bad(f"schedule_metric must be dev_loss or dev_per, got {s.schedule_metric!r}")
        return self

    # ------------------------------------------------------------ serialization

    def to_dict(self):
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        """Canonical text form: sorted keys, two-space indent, trailing newline."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        train = data.pop("train", {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        tknown = {f.name for f in dataclasses.fields(TrainSchedule)}
        if set(train) - tknown:
            raise InvalidConfig(f"unknown train keys: {sorted(set(train) - tknown)}")
        try:
            return cls(**data, train=TrainSchedule(**train)).validate()
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None

    @classmethod
    def loads(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"config is not valid JSON: {exc}") from None

    @classmethod
    def load(cls, path):
        return cls.loads(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.dumps())


# ---------------------------------------------------------------- presets


def _full_cnn(kind, maps=256):
    progression = [min(m, maps) for m in (32, 32, 64, 64, 128, 128, 256, 256, 256, 256)]
    return ModelConfig(kind=kind, head="ctc", classes=61, conv_maps=progression,
                       train=TrainSchedule(epochs=100))


def _full_rnn(kind, hidden=1024):
    return ModelConfig(kind=kind, head="framewise", classes=HMM_STATES, hidden=hidden,
                       train=TrainSchedule(epochs=25))


# output layer size standing in for the HMM-state inventory of the recurrent experiments
HMM_STATES = 1936


def _toy_conv(kind):
    # a 24-utterance dev set is noisy enough that halving after every stall starves the run
    return ModelConfig(
        kind=kind, head="ctc", classes=3, input_bands=8, first_conv_maps=8, conv_maps=[16, 16],
        kernel=[3, 5], pool_window=2, dense=[64], dropout=0.2, l2=1e-5, seed=7,
        train=TrainSchedule(epochs=50, batch_size=2, learning_rate=4e-3, patience=3),
    )


def _toy_rnn(kind):
    return ModelConfig(
        kind=kind, head="framewise", classes=4, input_bands=8, recurrent_layers=2, hidden=32,
        dropout=0.2, l2=1e-5, seed=7, train=TrainSchedule(epochs=25, batch_size=4, learning_rate=4e-3),
    )


PRESETS = {
    "cnn-256": lambda: _full_cnn("cnn"),
    "qcnn-256": lambda: _full_cnn("qcnn"),
    "rnn-1024": lambda: _full_rnn("rnn"),
    "qrnn-1024": lambda: _full_rnn("qrnn"),
    "rnn-2048": lambda: _full_rnn("rnn", 2048),
    "qrnn-2048": lambda: _full_rnn("qrnn", 2048),
    "toy-cnn": lambda: _toy_conv("cnn"),
    "toy-qcnn": lambda: _toy_conv("qcnn"),
    "toy-rnn": lambda: _toy_rnn("rnn"),
    "toy-qrnn": lambda: _toy_rnn("qrnn"),
}


def preset(name) -> ModelConfig:
    try:
        return PRESETS[name]().validate()
    except KeyError:
        raise InvalidConfig(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------- models


def _conv_plan(cfg: ModelConfig):
    """(name, kind, in, out) for each layer, widths in layer units (quaternions or reals)."""
    div = 4 if cfg.quaternion else 1
    kh, kw = cfg.kernel
    plan = []
    maps = [cfg.first_conv_maps, *cfg.conv_maps]
    prev = 4 // div
    for i, m in enumerate(maps):
        plan.append((f"conv{i}", "conv", prev, m // div))
        prev = m // div
    bands = -(-cfg.input_bands // cfg.pool_window)
    prev = prev * bands
    for i, d in enumerate(cfg.dense):
        plan.append((f"dense{i}", "dense", prev, d // div))
        prev = d // div
    plan.append(("head", "head", prev * div, cfg.outputs))
    return plan


def _recurrent_plan(cfg: ModelConfig):
    div = 4 if cfg.quaternion else 1
    plan = []
    prev = 4 * cfg.input_bands // div
    for i in range(cfg.recurrent_layers):
        plan.append((f"rnn{i}", "rnn", prev, cfg.hidden // div))
        prev = cfg.hidden // div
    plan.append(("head", "head", prev * div, cfg.outputs))
    return plan


def param_table(cfg: ModelConfig):
    """Real-parameter count per layer, computed without building the model."""
    cfg.validate()
    q = cfg.quaternion
    prelu = 1 if cfg.act == "prelu" else 0
    rows = []
    if cfg.recurrent:
        for name, kind, n_in, n_out in _recurrent_plan(cfg):
            if kind == "head":
                rows.append((name, SoftmaxHead.count(n_in, n_out)))
            else:
                rows.append((name, QRNNCell.count(n_in, n_out) if q else RNNCell.count(n_in, n_out)))
    else:
        for name, kind, n_in, n_out in _conv_plan(cfg):
            if kind == "conv":
                n = QConv2d.count(n_in, n_out, cfg.kernel) if q else Conv2d.count(n_in, n_out, cfg.kernel)
                rows.append((name, n + prelu))
            elif kind == "dense":
                rows.append((name, (QDense.count(n_in, n_out) if q else Dense.count(n_in, n_out)) + prelu))
            else:
                rows.append((name, SoftmaxHead.count(n_in, n_out)))
    return rows


def weight_table(cfg: ModelConfig):
    """Weight-matrix parameters per layer (no biases, no activation slopes)."""
    cfg.validate()
    q = 4 if cfg.quaternion else 1
    rows = []
    if cfg.recurrent:
        for name, kind, n_in, n_out in _recurrent_plan(cfg):
            rows.append((name, n_in * n_out if kind == "head" else q * (n_in * n_out + n_out * n_out)))
    else:
        area = cfg.kernel[0] * cfg.kernel[1]
        for name, kind, n_in, n_out in _conv_plan(cfg):
            if kind == "conv":
                rows.append((name, q * n_in * n_out * area))
            elif kind == "dense":
                rows.append((name, q * n_in * n_out))
            else:
                rows.append((name, n_in * n_out))
    return rows


class ConvNet(Module):
    """Conv + frequency pooling + conv stack + dense stack + softmax head."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        q = cfg.quaternion
        self.convs, self.conv_acts, self.denses, self.dense_acts = [], [], [], []
        for name, kind, n_in, n_out in _conv_plan(cfg):
            if kind == "conv":
                layer = QConv2d(n_in, n_out, cfg.kernel, rng=rng) if q else Conv2d(n_in, n_out, cfg.kernel, rng=rng)
                self.convs.append(layer)
                self.conv_acts.append(activation(cfg.act))
            elif kind == "dense":
                self.denses.append(QDense(n_in, n_out, rng=rng) if q else Dense(n_in, n_out, rng=rng))
                self.dense_acts.append(activation(cfg.act))
            else:
                self.head = SoftmaxHead(n_in, n_out, rng=rng)

    def __call__(self, x: T.Tensor, rng=None) -> T.Tensor:
        cfg = self.cfg
        batch, frames, width = x.shape
        if width != 4 * cfg.input_bands:
            raise ShapeMismatch(f"expected {4 * cfg.input_bands} features per frame, got {width}")
        q = cfg.quaternion
        h = x.reshape(batch, frames, 4, cfg.input_bands).transpose(0, 2, 3, 1)
        for i, (conv, act) in enumerate(zip(self.convs, self.conv_acts)):
            h = act(conv(h))
            if i == 0:
                h = pool_freq(h, cfg.pool_window, quaternion=q)
            h = dropout(h, cfg.dropout, self.training, rng, axis=1, quaternion=q)
        _, maps, bands, _ = h.shape
        groups = 4 if q else 1
        h = h.reshape(batch, groups, maps // groups, bands, frames).transpose(0, 4, 1, 2, 3)
        h = h.reshape(batch, frames, maps * bands)
        for dense, act in zip(self.denses, self.dense_acts):
            h = dropout(act(dense(h)), cfg.dropout, self.training, rng, quaternion=q)
        return self.head.logits(h)


class RecurrentNet(Module):
    """Stacked vanilla (quaternion) recurrences and a softmax head."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        self.cells = []
        for name, kind, n_in, n_out in _recurrent_plan(cfg):
            if kind == "rnn":
                cell = QRNNCell(n_in, n_out, activation=cfg.act, rng=rng) if cfg.quaternion else \
                    RNNCell(n_in, n_out, activation=cfg.act, rng=rng)
                self.cells.append(cell)
            else:
                self.head = SoftmaxHead(n_in, n_out, rng=rng)

    def __call__(self, x: T.Tensor, rng=None) -> T.Tensor:
        cfg = self.cfg
        if x.shape[-1] != 4 * cfg.input_bands:
            raise ShapeMismatch(f"expected {4 * cfg.input_bands} features per frame, got {x.shape[-1]}")
        h = x
        for cell in self.cells:
            h = dropout(cell.run(h), cfg.dropout, self.training, rng, quaternion=cfg.quaternion)
        return self.head.logits(h)


def build_model(cfg: ModelConfig) -> Module:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    return RecurrentNet(cfg, rng) if cfg.recurrent else ConvNet(cfg, rng)


def decays(name: str) -> bool:
    """Whether L2 applies to a parameter: weights only, not biases or slopes."""
    return not (name.endswith("bias") or name.endswith("slope"))
