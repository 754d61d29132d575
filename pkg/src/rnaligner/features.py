"""Feature ingestion: binary feature files, deltas, normalization, stacking.

Feature matrices are plain float numpy arrays of shape (frames, dims) with
a 10 ms frame shift assumed. All transforms here are pure data preparation;
gradients never flow into them.

File formats
------------
Feature file: magic ``RNAF``, little-endian u32 version=1, u32 T, u32 F,
then T*F little-endian float32 values, row major.

Vocabulary file: UTF-8 text, one label per line; the line index is the id.
The blank label is implicit with id L and is never listed.

Manifest: UTF-8 lines ``<feature-path>\\t<speaker-id>\\t<label ids>`` with
ids separated by spaces.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError

FEATURE_MAGIC = b"RNAF"
FEATURE_VERSION = 1


@dataclass
class Utterance:
    """One training/eval item: features, target label ids, speaker id."""

    features: np.ndarray
    labels: list
    speaker: str = ""
    uid: str = ""


@dataclass
class Vocabulary:
    """Ordered real labels with ids 0..L-1; blank is the implicit id L."""

    labels: list

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise FormatError("vocabulary contains duplicate labels")

    @property
    def size(self):
        return len(self.labels)

    @property
    def blank(self):
        return len(self.labels)

    @property
    def units(self):
        # softmax width: real labels plus blank
        return len(self.labels) + 1

    def to_string(self, ids):
        return "".join(self.labels[i] for i in ids)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            labels = [line.rstrip("\n") for line in fh]
        labels = [l for l in labels if l != ""]
        if not labels:
            raise FormatError(f"vocabulary file {path} has no labels")
        return cls(labels)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for label in self.labels:
                fh.write(label + "\n")


def save_features(path, feats):
    """Write a (T, F) matrix in the binary feature format (float32 payload)."""
    feats = np.asarray(feats, dtype=np.float32)
    if feats.ndim != 2:
        raise ConfigError(f"expected a (frames, dims) matrix, got shape {feats.shape}")
    T, F = feats.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, T, F))
        fh.write(feats.astype("<f4").tobytes())


def load_features(path):
    """Read a feature file; values round-trip bit-exactly with save_features."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header at byte {len(blob)}")
    version, T, F = struct.unpack("<III", blob[4:16])
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    need = 16 + 4 * T * F
    if len(blob) < need:
        raise FormatError(
            f"{path}: payload truncated at byte {len(blob)}, expected {need} bytes for {T}x{F}")
    data = np.frombuffer(blob[16:need], dtype="<f4").reshape(T, F)
    return np.array(data, dtype=np.float32)


def add_deltas(feats):
    """Append first and second central differences, tripling the dims.

    delta_t = (f_{t+1} - f_{t-1}) / 2 with edge frames clamped (repeated);
    the second difference applies the same stencil to the first.
    """
    feats = np.asarray(feats, dtype=np.float64)

    def delta(x):
        up = np.vstack([x[1:], x[-1:]])
        down = np.vstack([x[:1], x[:-1]])
        return (up - down) / 2.0

    d1 = delta(feats)
    d2 = delta(d1)
    return np.hstack([feats, d1, d2])


@dataclass
class NormStats:
    """Per-dimension mean/std, globally and per speaker (training data only)."""

    global_mean: np.ndarray
    global_std: np.ndarray
    speaker_mean: dict = field(default_factory=dict)
    speaker_std: dict = field(default_factory=dict)
    fallbacks: int = 0

    STD_FLOOR = 1e-8

    @classmethod
    def fit(cls, utterances):
        rows = np.vstack([u.features for u in utterances])
        stats = cls(global_mean=rows.mean(axis=0),
                    global_std=np.maximum(rows.std(axis=0), cls.STD_FLOOR))
        by_speaker = {}
        for u in utterances:
            by_speaker.setdefault(u.speaker, []).append(u.features)
        for spk, mats in by_speaker.items():
            m = np.vstack(mats)
            stats.speaker_mean[spk] = m.mean(axis=0)
            stats.speaker_std[spk] = np.maximum(m.std(axis=0), cls.STD_FLOOR)
        return stats


def normalize(feats, stats, mode, speaker=""):
    """Standardize per dimension using fitted stats.

    In per-speaker mode an unknown speaker falls back to the global stats
    and bumps ``stats.fallbacks``.
    """
    if mode == "global":
        mean, std = stats.global_mean, stats.global_std
    elif mode == "per-speaker":
        if speaker in stats.speaker_mean:
            mean, std = stats.speaker_mean[speaker], stats.speaker_std[speaker]
        else:
            stats.fallbacks += 1
            mean, std = stats.global_mean, stats.global_std
    else:
        raise ConfigError(f"unknown normalization mode {mode!r}")
    return (np.asarray(feats, dtype=np.float64) - mean) / std


def stack_frames(feats, k, s):
    """Concatenate k consecutive frames per output row, advancing by s.

    Row t' holds frames t'*s .. t'*s+k-1; positions past the end are zero.
    Output has ceil(T/s) rows of k*F dims.
    """
    if k < 1 or s < 1:
        raise ConfigError(f"stack needs k >= 1 and s >= 1, got k={k} s={s}")
    feats = np.asarray(feats, dtype=np.float64)
    T, F = feats.shape
    to = -(-T // s)
    padded = np.vstack([feats, np.zeros((s * (to - 1) + k - T, F))]) \
        if s * (to - 1) + k > T else feats
    rows = [padded[t * s:t * s + k].reshape(-1) for t in range(to)]
    return np.vstack(rows)


def normalize_corpus(utterances, stats):
    """Per-speaker standardization followed by global standardization."""
    out = []
    for u in utterances:
        f = normalize(u.features, stats, "per-speaker", speaker=u.speaker)
        out.append(Utterance(features=f, labels=list(u.labels),
                             speaker=u.speaker, uid=u.uid))
    second = NormStats.fit(out)
    return [Utterance(features=normalize(u.features, second, "global"),
                      labels=u.labels, speaker=u.speaker, uid=u.uid)
            for u in out], second


def load_manifest(path, vocab):
    """Read manifest lines into utterances, loading each feature file."""
    utts = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{ln}: expected 3 tab-separated fields")
            fpath, speaker, ids = parts
            labels = [int(tok) for tok in ids.split()] if ids.strip() else []
            bad = [i for i in labels if not 0 <= i < vocab.size]
            if bad:
                raise FormatError(
                    f"{path}:{ln}: label ids {bad} outside vocabulary of size {vocab.size}")
            utts.append(Utterance(features=load_features(fpath), labels=labels,
                                  speaker=speaker, uid=fpath))
    return utts


def save_manifest(path, utterances, feature_dir):
    """Write features + manifest for a corpus; returns the manifest path."""
    import os

    os.makedirs(feature_dir, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for i, u in enumerate(utterances):
            fpath = os.path.join(feature_dir, f"utt{i:05d}.rnaf")
            save_features(fpath, u.features)
            ids = " ".join(str(l) for l in u.labels)
            fh.write(f"{fpath}\t{u.speaker}\t{ids}\n")
    return path
