"""Character error rate over minimal-edit alignments."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import MetricError


@dataclass
class EditCounts:
    """Substitution/deletion/insertion counts of one minimal alignment."""

    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def total(self):
        return self.substitutions + self.deletions + self.insertions

    def __add__(self, other):
        return EditCounts(self.substitutions + other.substitutions,
                          self.deletions + other.deletions,
                          self.insertions + other.insertions,
                          self.ref_len + other.ref_len)


def edit_distance(ref, hyp):
    """Minimal uniform-cost S/D/I alignment between two sequences.

    Ties resolve preferring substitution over insertion over deletion, so
    the returned counts are deterministic, not just their total.
    """
    ref = list(ref)
    hyp = list(hyp)
    # rows of (total, subs, dels, ins)
    prev = [(j, 0, 0, j) for j in range(len(hyp) + 1)]
    for i in range(1, len(ref) + 1):
        cur = [(i, 0, i, 0)]
        r = ref[i - 1]
        for j in range(1, len(hyp) + 1):
            if r == hyp[j - 1]:
                cur.append(prev[j - 1])
                continue
            dt, ds, dd, di = prev[j - 1]
            best = (dt + 1, ds + 1, dd, di)
            lt, ls, ld, li = cur[j - 1]
            if lt + 1 < best[0]:
                best = (lt + 1, ls, ld, li + 1)
            ut, us, ud, ui = prev[j]
            if ut + 1 < best[0]:
                best = (ut + 1, us, ud + 1, ui)
            cur.append(best)
        prev = cur
    total, s, d, i = prev[-1]
    return EditCounts(s, d, i, len(ref))


def aggregate_counts(pairs):
    """Summed edit counts over (ref, hyp) pairs."""
    acc = EditCounts(0, 0, 0, 0)
    for ref, hyp in pairs:
        acc = acc + edit_distance(ref, hyp)
    return acc


def cer(pairs):
    """Corpus-pooled character error rate, in percent.

    Pools errors over the whole corpus (sum of edits over sum of reference
    lengths) rather than averaging per-utterance rates; insertions can push
    the value past 100.
    """
    acc = aggregate_counts(pairs)
    if acc.ref_len == 0:
        raise MetricError("character error rate undefined for empty references")
    return 100.0 * acc.total / acc.ref_len
