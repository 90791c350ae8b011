"""Scalar quaternion algebra.

A quaternion is stored as ``(r, x, y, z)`` for ``r + x i + y j + z k``.
The matrix form acts on column vectors ``[r, x, y, z]^T`` so that
``to_matrix(q1) @ vec(q2)`` equals ``hamilton(q1, q2)``.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import ZeroNormError

ZERO_NORM_THRESHOLD = 1e-300


class Quaternion(NamedTuple):
    r: float
    x: float
    y: float
    z: float

    def __array__(self, dtype=None, copy=None):
        return np.array(tuple(self), dtype=dtype or np.float64)


def hamilton(q1, q2) -> Quaternion:
    """Hamilton product ``q1 ⊗ q2`` (non-commutative)."""
    r1, x1, y1, z1 = q1
    r2, x2, y2, z2 = q2
    return Quaternion(
        r1 * r2 - x1 * x2 - y1 * y2 - z1 * z2,
        r1 * x2 + x1 * r2 + y1 * z2 - z1 * y2,
        r1 * y2 - x1 * z2 + y1 * r2 + z1 * x2,
        r1 * z2 + x1 * y2 - y1 * x2 + z1 * r2,
    )


def conjugate(q) -> Quaternion:
    r, x, y, z = q
    return Quaternion(r, -x, -y, -z)


def norm(q) -> float:
    r, x, y, z = q
    return math.sqrt(r * r + x * x + y * y + z * z)


def normalize(q) -> Quaternion:
    r, x, y, z = q
    sq = r * r + x * x + y * y + z * z
    if sq < ZERO_NORM_THRESHOLD:
        raise ZeroNormError(f"cannot normalize quaternion with squared norm {sq!r}")
    n = math.sqrt(sq)
    return Quaternion(r / n, x / n, y / n, z / n)


def to_matrix(q) -> np.ndarray:
    """Real 4x4 left-multiplication matrix of ``q``."""
    r, x, y, z = q
    return np.array(
        [
            [r, -x, -y, -z],
            [x, r, -z, y],
            [y, z, r, -x],
            [z, -y, x, r],
        ],
        dtype=np.float64,
    )


def add(q1, q2) -> Quaternion:
    return Quaternion(*(a + b for a, b in zip(q1, q2)))


def scale(q, s: float) -> Quaternion:
    return Quaternion(*(a * s for a in q))
