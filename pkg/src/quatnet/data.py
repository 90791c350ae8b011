"""Utterance datasets, their on-disk layout, and the bundled synthetic tasks.

A data directory holds one QACF1 energy file per utterance plus
``manifest.tsv`` with ``utterance id<TAB>feature file<TAB>labels``, labels
being space-separated integer ids (one per frame for framewise targets).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionMismatch, EmptyDataset
from .features import EnergyMatrix, acoustic_input, load_features, save_features

MANIFEST = "manifest.tsv"


@dataclass
class Utterance:
    uid: str
    energies: EnergyMatrix
    labels: list

    @property
    def frames(self):
        return self.energies.frames


def features_for(utts, normalize=False):
    return [acoustic_input(u.energies, normalize) for u in utts]


def write_dataset(utts, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for u in utts:
        name = f"{u.uid}.qacf"
        save_features(u.energies, directory / name)
        lines.append(f"{u.uid}\t{name}\t{' '.join(map(str, u.labels))}")
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")


def read_dataset(directory):
    directory = Path(directory)
    manifest = directory / MANIFEST
    if not manifest.is_file():
        raise DataError(f"{directory}: no {MANIFEST}")
    utts = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DimensionMismatch(f"{manifest}:{lineno}: expected 3 tab-separated fields")
        uid, name, labels = parts
        try:
            ids = [int(t) for t in labels.split()]
        except ValueError:
            raise DataError(f"{manifest}:{lineno}: labels must be integers") from None
        utts.append(Utterance(uid, load_features(directory / name), ids))
    if not utts:
        raise EmptyDataset(f"{directory}: dataset is empty")
    return utts


# ---------------------------------------------------------------- synthetic tasks


def _prototypes(rng, classes, bands):
    return rng.normal(0.0, 1.5, size=(classes, bands))


def ctc_toy(n=24, bands=8, symbols=3, seed=0, noise=0.15, task_seed=0):
    """Energies built from per-symbol spectral prototypes separated by silence.

    Each utterance spells 1 to 3 random symbols; every symbol lasts 3 to 5
    frames and is followed by 1 to 3 silent frames. ``task_seed`` fixes the
    prototypes, ``seed`` the sampled utterances.
    """
    protos = _prototypes(np.random.default_rng(task_seed), symbols, bands)
    rng = np.random.default_rng([task_seed, seed])
    silence = np.full(bands, -2.0)
    utts = []
    for k in range(n):
        target = list(rng.integers(0, symbols, size=rng.integers(1, 4)))
        cols = [silence] * int(rng.integers(2, 4))
        for s in target:
            cols += [protos[s]] * int(rng.integers(3, 6))
            cols += [silence] * int(rng.integers(1, 4))
        values = np.array(cols).T + rng.normal(0.0, noise, size=(bands, len(cols)))
        utts.append(Utterance(f"ctc{k:03d}", EnergyMatrix(values), [int(s) for s in target]))
    return utts


def framewise_toy(n=24, bands=8, classes=4, frames=30, seed=0, noise=0.15, stay=0.8, task_seed=0):
    """Per-frame classes from a sticky Markov chain over spectral prototypes."""
    protos = _prototypes(np.random.default_rng(task_seed), classes, bands)
    rng = np.random.default_rng([task_seed, seed])
    utts = []
    for k in range(n):
        state = int(rng.integers(classes))
        labels = []
        for _ in range(frames):
            labels.append(state)
            if rng.random() > stay:
                state = int(rng.integers(classes))
        values = protos[labels].T + rng.normal(0.0, noise, size=(bands, frames))
        utts.append(Utterance(f"frm{k:03d}", EnergyMatrix(values), labels))
    return utts
