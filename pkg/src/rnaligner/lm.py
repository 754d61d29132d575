"""Character language model and blank-aware gated fusion.

The LM is a start-symbol-fed recurrent net over the real labels only; the
transducer's blank never enters it. During fused decoding the LM state
advances only on non-blank symbols: a blank step reuses the previous LM
output unchanged, which keeps the LM synchronous with the emitted text
rather than with the acoustic clock.

Fusion replaces the plain output projection: a sigmoid gate computed from
the concatenated transducer state s_u and LM feature decides how much of
the LM enters the fused state, which a second projection maps to L+1
logits:

    g   = sigmoid(W1 [s; h_lm] + b1)
    s_f = [s; g * h_lm]
    out = W2 s_f + b2
"""

from __future__ import annotations

import numpy as np

from .encoder import LstmParams, lstm_step, uniform_param
from .errors import ConfigError, ShapeError, VocabularyError
from . import tensor as tz
from .tensor import Tensor, parameter


class LMParams:
    """Embeddings for L labels plus a learned start symbol, cell, output."""

    def __init__(self, num_labels, embed_dim, cells, rng):
        self.num_labels = num_labels
        self.start = num_labels            # embedding row for the start symbol
        self.cells = cells
        self.embedding = uniform_param(rng, (num_labels + 1, embed_dim))
        self.cell = LstmParams(embed_dim, cells, rng)
        self.w = uniform_param(rng, (cells, num_labels))
        self.b = uniform_param(rng, (num_labels,))

    def named(self, prefix="lm"):
        yield f"{prefix}.embedding", self.embedding
        yield from self.cell.named(f"{prefix}.cell")
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b

    def zero_state(self):
        z = np.zeros((1, self.cells))
        return Tensor(z.copy()), Tensor(z.copy())

    def consume(self, state, symbol):
        """Feed one symbol (a real label or the start id); returns new state."""
        emb = self.embedding[symbol:symbol + 1, :]
        return lstm_step(self.cell, emb, *state)

    def start_state(self):
        """State and output after consuming the start symbol."""
        state = self.consume(self.zero_state(), self.start)
        return state, state[0]

    def output_chain(self, labels):
        """Cell outputs after (start, y_1 .. y_n) for n = 0..N: (N+1, cells)."""
        for y in labels:
            if not 0 <= y < self.num_labels:
                raise VocabularyError(
                    f"label {y} outside the {self.num_labels}-label LM vocabulary")
        state = self.zero_state()
        rows = []
        for symbol in [self.start] + list(labels):
            state = self.consume(state, symbol)
            rows.append(state[0])
        return tz.concat(rows, axis=0)

    def next_char_nll(self, labels):
        """Cross-entropy of a transcript under the LM, summed over chars."""
        if not labels:
            return Tensor(0.0), 0
        chain = self.output_chain(labels[:-1])           # predicts y_1..y_N
        logits = chain @ self.w + self.b
        lp = tz.log_softmax(logits)
        picked = lp[np.arange(len(labels)), np.array(labels, dtype=np.intp)]
        return -tz.tsum(picked), len(labels)


def lm_state_advance(params, state, symbol, blank):
    """Blank-aware LM step: blank returns the held state/output untouched.

    ``state`` is the ((h, c), output_row) pair produced by start_state or a
    previous advance. A non-blank symbol is consumed and a fresh output
    returned.
    """
    if symbol == blank:
        return state
    inner, _ = state
    new_inner = params.consume(inner, symbol)
    return new_inner, new_inner[0]


def perplexity(params, transcripts):
    """Corpus perplexity: exp of mean per-character cross-entropy."""
    total, chars = 0.0, 0
    for labels in transcripts:
        nll, n = params.next_char_nll(labels)
        total += float(nll.data)
        chars += n
    if chars == 0:
        raise ConfigError("perplexity of an empty corpus")
    return float(np.exp(total / chars))


class FusionParams:
    """Gate and output projections of the fused output layer."""

    def __init__(self, s_dim, lm_dim, units, rng):
        self.s_dim = s_dim
        self.lm_dim = lm_dim
        self.units = units
        self.w1 = uniform_param(rng, (s_dim + lm_dim, lm_dim))
        self.b1 = uniform_param(rng, (lm_dim,))
        self.w2 = uniform_param(rng, (s_dim + lm_dim, units))
        self.b2 = uniform_param(rng, (units,))

    @classmethod
    def from_projection(cls, decoder, lm_dim, rng):
        """Start as an exact copy of the plain projection: the W2 block that
        reads the gated LM feature is zero, so fused logits equal the base
        model's until training moves them."""
        fp = cls(decoder.w.shape[0], lm_dim, decoder.units, rng)
        fp.w2.data[:fp.s_dim, :] = decoder.w.data
        fp.w2.data[fp.s_dim:, :] = 0.0
        fp.b2.data[:] = decoder.b.data
        fp.b1.data[:] = -2.0
        return fp

    def named(self, prefix="fusion"):
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2


def fuse(s, h_lm, fp):
    """Gated combination of transducer state rows and LM feature rows."""
    s = tz.as_tensor(s)
    h_lm = tz.as_tensor(h_lm)
    if s.shape[-1] != fp.s_dim or h_lm.shape[-1] != fp.lm_dim:
        raise ShapeError(
            f"fusion built for s:{fp.s_dim} lm:{fp.lm_dim}, "
            f"got s:{s.shape} lm:{h_lm.shape}")
    both = tz.concat([s, h_lm], axis=1)
    gate = tz.sigmoid(both @ fp.w1 + fp.b1)
    fused = tz.concat([s, gate * h_lm], axis=1)
    return fused @ fp.w2 + fp.b2


class FusedOutput:
    """Adapter handed to the aligner: LM advancement plus fused projection."""

    def __init__(self, lm_params, fusion_params, blank):
        self.lm = lm_params
        self.fp = fusion_params
        self.blank = blank

    def start(self):
        return self.lm.start_state()

    def advance(self, state, symbol):
        return lm_state_advance(self.lm, state, symbol, self.blank)

    def chain(self, labels):
        return self.lm.output_chain(labels)

    def logits(self, s, lm_h):
        return fuse(s, lm_h, self.fp)
