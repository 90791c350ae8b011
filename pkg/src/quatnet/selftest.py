"""Fast in-process oracle checks behind ``quatnet selftest``."""
from __future__ import annotations

import numpy as np

from . import algebra as A
from . import tensor as T
from .ctc import ctc_loss, ctc_loss_bruteforce, ctc_loss_tensor
from .layers import QDense, QRNNCell


def _algebra(rng):
    worst = 0.0
    for _ in range(200):
        q1, q2 = rng.uniform(-10, 10, 4), rng.uniform(-10, 10, 4)
        worst = max(worst, np.max(np.abs(A.to_matrix(q1) @ q2 - np.array(A.hamilton(q1, q2)))))
    ok = worst < 1e-12 and A.hamilton((0, 1, 0, 0), (0, 0, 1, 0)) == (0, 0, 0, 1)
    return ok, f"max homomorphism deviation {worst:.2e}"


def _gradients(rng):
    layer = QDense(2, 3, seed=int(rng.integers(1 << 31)))
    x = T.Tensor(rng.normal(size=(2, 8)), requires_grad=True)
    dense = T.grad_check(lambda: T.total(T.tanh(layer(x))), [x] + layer.parameters())
    cell = QRNNCell(1, 2, seed=int(rng.integers(1 << 31)))
    seq = T.Tensor(rng.normal(size=(1, 3, 4)))
    rnn = T.grad_check(lambda: T.total(T.tanh(cell.run(seq))), cell.parameters())
    z = T.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    ctc = T.grad_check(lambda: ctc_loss_tensor(z, [0, 1]), [z])
    worst = max(dense, rnn, ctc)
    return worst < 1e-4, f"max relative gradient error {worst:.2e}"


def _ctc(rng):
    worst = 0.0
    for _ in range(30):
        frames, classes = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        post = rng.dirichlet(np.ones(classes + 1), size=frames)
        target = list(rng.integers(0, classes, size=int(rng.integers(1, min(3, frames) + 1))))
        try:
            fast = ctc_loss(post, target)[0]
        except Exception:
            continue
        worst = max(worst, abs(fast - ctc_loss_bruteforce(post, target)))
    return worst < 1e-10, f"max deviation from enumeration {worst:.2e}"


def _params(rng):
    n = QDense.count(256, 256, bias=False)
    return n == 262144 and 1024 * 1024 / n == 4.0, f"256q dense weights {n}"


CHECKS = {"algebra": _algebra, "gradients": _gradients, "ctc": _ctc, "parameters": _params}


def run(seed=0):
    rng = np.random.default_rng(seed)
    return [(name, *check(rng)) for name, check in CHECKS.items()]
