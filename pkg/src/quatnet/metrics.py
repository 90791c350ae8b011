"""Edit-distance scoring for decoded label sequences."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class EditCounts:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0

    @property
    def errors(self):
        return self.substitutions + self.insertions + self.deletions

    def __add__(self, other):
        return EditCounts(self.substitutions + other.substitutions,
                          self.insertions + other.insertions,
                          self.deletions + other.deletions)


def edit_counts(ref, hyp) -> EditCounts:
    """Levenshtein alignment of ``hyp`` against ``ref``.

    Among minimum-cost alignments the backtrace prefers a match or
    substitution, then a deletion, then an insertion.
    """
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i][j] = min(d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]), d[i - 1][j] + 1, d[i][j - 1] + 1)
    s = ins = dele = 0
    i, j = n, m
    while i or j:
        if i and j and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i and d[i][j] == d[i - 1][j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(s, ins, dele)


def error_rate(refs, hyps):
    """Corpus error rate in percent and the summed edit counts."""
    total = EditCounts()
    words = 0
    for ref, hyp in zip(refs, hyps, strict=True):
        total = total + edit_counts(ref, hyp)
        words += len(ref)
    rate = 100.0 * total.errors / words if words else (0.0 if total.errors == 0 else float("inf"))
    return rate, total
