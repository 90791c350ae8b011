"""Connectionist temporal classification.

Posterior matrices are ``[frames, classes + 1]`` with the blank in the
last column, so label ids stay dense in ``0 .. classes - 1``.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import ImpossibleTarget, TooLarge
from .tensor import Tensor, from_op

ENUMERATION_LIMIT = 10**7


def collapse(path, blank):
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for s in path:
        s = int(s)
        if s != prev and s != blank:
            out.append(s)
        prev = s
    return out


def min_frames(target) -> int:
    """Shortest alignment length: one frame per label plus a blank between repeats."""
    return len(target) + sum(1 for a, b in zip(target, target[1:]) if a == b)


def _check_fits(frames, target):
    need = min_frames(target)
    if need > frames:
        raise ImpossibleTarget(f"target of length {len(target)} needs {need} frames, only {frames} available")


def _log_forward_backward(log_probs, target, blank):
    frames = log_probs.shape[0]
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    s = ext.size
    emit = log_probs[:, ext]
    # a label may be reached by skipping the preceding blank unless it repeats the label two back
    skip = np.zeros(s, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    alpha = np.full((frames, s), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if s > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, frames):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]

    beta = np.full((frames, s), -np.inf)
    beta[-1, -1] = emit[-1, -1]
    if s > 1:
        beta[-1, -2] = emit[-1, -2]
    for t in range(frames - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + emit[t]

    log_total = np.logaddexp(alpha[-1, -1], alpha[-1, -2]) if s > 1 else alpha[-1, -1]
    return ext, alpha, beta, log_total


def ctc_loss_log(log_probs, target, blank=None):
    """Loss and gradient with respect to pre-softmax logits from log posteriors."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    frames, width = log_probs.shape
    blank = width - 1 if blank is None else blank
    target = [int(t) for t in target]
    _check_fits(frames, target)
    ext, alpha, beta, log_total = _log_forward_backward(log_probs, target, blank)
    if not np.isfinite(log_total):
        raise ImpossibleTarget("no alignment has non-zero probability")
    # alpha * beta double-counts the emission at t
    emit = log_probs[:, ext]
    with np.errstate(invalid="ignore"):
        occupancy = np.where(np.isneginf(emit), -np.inf, alpha + beta - emit - log_total)
    gamma = np.zeros_like(log_probs)
    for k, sym in enumerate(ext):
        gamma[:, sym] += np.exp(occupancy[:, k])
    grad = np.exp(log_probs) - gamma
    return -log_total, grad


def ctc_loss(posteriors, target, blank=None):
    """``-log P(target | posteriors)`` and its gradient w.r.t. the logits."""
    with np.errstate(divide="ignore"):
        return ctc_loss_log(np.log(np.asarray(posteriors, dtype=np.float64)), target, blank)


def ctc_loss_bruteforce(posteriors, target, blank=None):
    """Exact loss by summing over every alignment path."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    frames, width = posteriors.shape
    blank = width - 1 if blank is None else blank
    if width ** frames > ENUMERATION_LIMIT:
        raise TooLarge(f"{width}^{frames} paths exceed the enumeration limit")
    target = [int(t) for t in target]
    total = 0.0
    for path in itertools.product(range(width), repeat=frames):
        if collapse(path, blank) == target:
            total += math.prod(posteriors[t, s] for t, s in enumerate(path))
    if total == 0.0:
        raise ImpossibleTarget("no path collapses to the target")
    return -math.log(total)


def best_path_decode(posteriors, blank=None):
    posteriors = np.asarray(posteriors)
    blank = posteriors.shape[1] - 1 if blank is None else blank
    # np.argmax returns the first maximum, i.e. the lowest class id on ties
    return collapse(np.argmax(posteriors, axis=1), blank)


def ctc_loss_tensor(logits: Tensor, target, frames=None) -> Tensor:
    """Differentiable CTC loss for one utterance's ``[T, classes + 1]`` logits.

    Only the first ``frames`` rows take part; the rest receive zero gradient.
    """
    frames = logits.shape[0] if frames is None else frames
    z = logits.data[:frames]
    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss, grad = ctc_loss_log(log_probs, target)

    def backward(g):
        full = np.zeros_like(logits.data)
        full[:frames] = g * grad
        return (full,)

    return from_op(np.array(loss), (logits,), backward, "ctc_loss")
