"""Synthetic corpora with a learnable frame-to-label mapping.

Each label gets a distinct per-frame feature template; an utterance renders
its label sequence as contiguous segments of noisy template frames with a
short silence gap at each segment tail (like the transitions between real
characters), plus a constant per-speaker offset so per-speaker
normalization has work to do. Utterance length grows with the label count,
as it does in real speech, and adjacent repeated labels never occur (two
touching segments of one label would be indistinguishable from one longer
segment). Everything is deterministic given the seed.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .features import Utterance


def label_templates(rng, num_labels, feature_dim, separation=2.0,
                    confusable_pairs=()):
    """One template row per label, well separated unless listed as confusable.

    Templates are orthogonal when the feature dimension allows it.
    Confusable pairs get templates that differ by a small offset, so the
    acoustics alone cannot reliably tell them apart.
    """
    if num_labels <= feature_dim:
        q, _ = np.linalg.qr(rng.normal(size=(feature_dim, feature_dim)))
        base = q[:num_labels]
    else:
        base = rng.normal(size=(num_labels, feature_dim))
        base /= np.linalg.norm(base, axis=1, keepdims=True)
    templates = separation * base
    for a, b in confusable_pairs:
        delta = rng.normal(size=feature_dim)
        delta *= 0.15 * separation / np.linalg.norm(delta)
        templates[b] = templates[a] + delta
    return templates


def _draw_labels(rng, n, num_labels, grammar, transition=None):
    # adjacent repeats are excluded: two touching segments of one label are
    # indistinguishable from a single longer segment, which would make the
    # frame-to-label mapping unlearnable
    if grammar == "uniform":
        labels = []
        for _ in range(n):
            nxt = int(rng.integers(0, num_labels))
            while labels and nxt == labels[-1]:
                nxt = int(rng.integers(0, num_labels))
            labels.append(nxt)
        return labels
    if grammar == "skewed":
        labels = [int(rng.integers(0, num_labels))]
        for _ in range(n - 1):
            row = transition[labels[-1]].copy()
            row[labels[-1]] = 0.0
            row /= row.sum()
            labels.append(int(rng.choice(num_labels, p=row)))
        return labels
    raise ConfigError(f"unknown grammar {grammar!r}")


def skewed_transition(rng, num_labels, concentration=0.9):
    """A peaked bigram table: each label strongly prefers one successor.

    Successors form one cycle, so no label prefers itself (self-loops are
    excluded when sequences are drawn).
    """
    trans = np.full((num_labels, num_labels), (1.0 - concentration) / (num_labels - 1))
    order = rng.permutation(num_labels)
    for i in range(num_labels):
        l, succ = order[i], order[(i + 1) % num_labels]
        trans[l, succ] = concentration
    return trans


def synth_dataset(seed, count, vocab, t_range, n_range, rate_denominator=1,
                  feature_dim=8, noise=0.1, speakers=4, grammar="uniform",
                  confusable_pairs=()):
    """Generate ``count`` deterministic utterances.

    t_range and n_range are inclusive (lo, hi) bounds on frames and labels.
    Every utterance is feasible for the given down-sampling denominator:
    the generator refuses ranges where ceil(min_T / denominator) could fall
    short of max_N.
    """
    t_lo, t_hi = t_range
    n_lo, n_hi = n_range
    if t_lo < 1 or n_lo < 0 or t_hi < t_lo or n_hi < n_lo:
        raise ConfigError(f"bad ranges T={t_range} N={n_range}")
    if n_hi > -(-t_lo // rate_denominator):
        raise ConfigError(
            f"infeasible ranges: up to {n_hi} labels but only ceil({t_lo}/{rate_denominator})"
            f"={-(-t_lo // rate_denominator)} encoded steps guaranteed")

    rng = np.random.default_rng(seed)
    templates = label_templates(rng, vocab.size, feature_dim,
                                confusable_pairs=confusable_pairs)
    speaker_offsets = 0.5 * rng.normal(size=(speakers, feature_dim))
    transition = skewed_transition(rng, vocab.size) if grammar == "skewed" else None
    frames_per_label = max(t_hi // max(n_hi, 1), 1)

    utts = []
    for i in range(count):
        N = int(rng.integers(n_lo, n_hi + 1))
        if N > 0:
            jitter = int(rng.integers(-(frames_per_label // 4), frames_per_label // 4 + 1))
            T = int(np.clip(frames_per_label * N + jitter, t_lo, t_hi))
        else:
            T = int(rng.integers(t_lo, t_hi + 1))
        labels = _draw_labels(rng, N, vocab.size, grammar, transition)
        spk = i % speakers
        feats = np.zeros((T, feature_dim))
        if N > 0:
            bounds = np.linspace(0, T, N + 1).astype(int)
            for seg, lab in enumerate(labels):
                b, e = bounds[seg], bounds[seg + 1]
                gap = min(5, (e - b) // 3)      # silence tail per segment
                feats[b:e - gap] = templates[lab]
        feats += noise * rng.normal(size=feats.shape)
        feats += speaker_offsets[spk]
        utts.append(Utterance(features=feats, labels=labels,
                              speaker=f"spk{spk}", uid=f"synth{i:05d}"))
    return utts


def synth_splits(seed, train_count, dev_count, vocab, t_range, n_range, **kw):
    """Disjoint train/dev splits drawn from one deterministic stream."""
    everything = synth_dataset(seed, train_count + dev_count, vocab,
                               t_range, n_range, **kw)
    return everything[:train_count], everything[train_count:]
