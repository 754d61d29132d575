"""Alignment loss over the (time step, emitted-count) lattice, and decoding.

The decoder is a label-fed recurrent cell: at step u it consumes the
embedding of the previous output symbol (blank included; the very first
step consumes the blank embedding as a start convention), and the encoder
frame h_u joins through the output projection applied to the concatenation
[c_u; h_u] of the cell output and the frame.

Two loss modes are provided:

``lattice-exact``
    The label-side recurrence runs over the target prefix only: the cell
    state is indexed by the number n of emitted labels and consumes y_n;
    blank does not advance it. Every lattice node (u, n) then has a
    well-defined distribution and the marginalization over alignments is
    exact for this factorized model, which is what the brute-force
    enumeration oracle checks.

``greedy-path``
    The decoder runs left to right feeding back its own argmax label,
    exactly as in inference. The resulting per-step distributions are then
    held fixed (the argmax choices are data, the probabilities stay
    differentiable) and the same blank/label dynamic program runs over
    them.

An alignment z is a length-U symbol sequence over labels plus blank whose
blank-removal equals the target; unlike CTC, repeated labels are kept.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .encoder import LstmParams, lstm_step, uniform_param
from .errors import (ConfigError, InfeasibleError, NumericError, ShapeError,
                     VocabularyError)
from . import tensor as tz
from .tensor import Tensor


class DecoderParams:
    """Embeddings over L+1 symbols, one recurrent cell, output projection."""

    def __init__(self, num_labels, embed_dim, cells, h_dim, rng):
        self.num_labels = num_labels          # real labels; blank id == num_labels
        self.blank = num_labels
        self.cells = cells
        self.h_dim = h_dim
        self.embedding = uniform_param(rng, (num_labels + 1, embed_dim))
        self.cell = LstmParams(embed_dim, cells, rng)
        self.w = uniform_param(rng, (cells + h_dim, num_labels + 1))
        self.b = uniform_param(rng, (num_labels + 1,))

    @property
    def units(self):
        return self.num_labels + 1

    def named(self, prefix="decoder"):
        yield f"{prefix}.embedding", self.embedding
        yield from self.cell.named(f"{prefix}.cell")
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b

    def zero_state(self):
        z = np.zeros((1, self.cells))
        return Tensor(z.copy()), Tensor(z.copy())

    def advance(self, state, symbol):
        """Consume one symbol embedding; returns the new (h, c) state."""
        if not 0 <= symbol <= self.num_labels:
            raise VocabularyError(
                f"symbol id {symbol} outside the {self.units}-unit vocabulary")
        emb = self.embedding[symbol:symbol + 1, :]
        return lstm_step(self.cell, emb, *state)

    def output_logits(self, s, fusion=None, lm_h=None):
        """Project fused/plain state rows to L+1 logits; s is [c; h] rows."""
        if fusion is None:
            return s @ self.w + self.b
        return fusion.logits(s, lm_h)


def decoder_step(params, h_u, prev_id, state, fusion=None, lm_h=None):
    """One decode step: distribution over L+1 symbols plus the new state."""
    h_u = tz.as_tensor(h_u)
    if h_u.ndim == 1:
        h_u = tz.reshape(h_u, (1, h_u.shape[0]))
    new_state = params.advance(state, prev_id)
    s = tz.concat([new_state[0], h_u], axis=1)
    probs = tz.softmax(params.output_logits(s, fusion, lm_h))
    return probs, new_state


def collapse_blanks(symbols, blank):
    """Drop blanks, keep everything else; repeats are preserved."""
    return [s for s in symbols if s != blank]


@dataclass
class AlignmentLattice:
    """Per-node log distributions and forward/backward tables.

    ``log_probs`` is a (U, N+1, K) tensor in lattice-exact mode (node
    distributions) or a (U, K) tensor in greedy-path mode (one row per
    step). ``alpha[u]``/``beta[u]`` are (N+1,) tensors for u = 0..U;
    unreachable nodes hold -inf.
    """

    U: int
    N: int
    blank: int
    labels: list
    mode: str
    log_probs: Tensor
    alpha: list
    beta: list
    nll: Tensor
    alignment: list | None = None     # argmax path, greedy-path mode only

    def alpha_values(self):
        return np.stack([a.data for a in self.alpha])

    def beta_values(self):
        return np.stack([b.data for b in self.beta])

    def log_likelihood_drift(self):
        """Max over u of |logsumexp(alpha_u + beta_u) - log p(y|x)|."""
        ref = float(self.alpha[self.U].data[self.N])
        worst = 0.0
        for u in range(self.U + 1):
            s = self.alpha[u].data + self.beta[u].data
            m = s.max()
            if m == -np.inf:
                return np.inf
            total = m + np.log(np.exp(s - m).sum())
            worst = max(worst, abs(total - ref))
        return worst


def _check_targets(params, labels):
    for y in labels:
        if not 0 <= y < params.num_labels:
            raise VocabularyError(
                f"target label {y} outside the {params.num_labels}-label vocabulary")


def _label_chain(params, labels):
    """Cell outputs after consuming (start, y_1 .. y_N); rows n = 0..N."""
    ids = np.array([params.blank] + list(labels), dtype=np.intp)
    emb = params.embedding[ids]
    h, c = params.zero_state()
    rows = []
    for i in range(len(ids)):
        h, c = lstm_step(params.cell, emb[i:i + 1, :], h, c)
        rows.append(h)
    return tz.concat(rows, axis=0)


def _lattice_log_probs(h, params, labels, fusion=None):
    """(U, N+1, K) log distributions: node (u, n) conditions on y_1..y_n."""
    U = h.shape[0]
    N = len(labels)
    chain = _label_chain(params, labels)                       # (N+1, cells)
    n_idx = np.tile(np.arange(N + 1), U)
    u_idx = np.repeat(np.arange(U), N + 1)
    s = tz.concat([chain[n_idx], h[u_idx]], axis=1)
    lm_h = fusion.chain(labels)[n_idx] if fusion is not None else None
    logits = params.output_logits(s, fusion, lm_h)
    if np.isnan(logits.data).any():
        raise NumericError("NaN in decoder logits")
    lp = tz.log_softmax(logits)
    return tz.reshape(lp, (U, N + 1, params.units))


def _greedy_pass(h, params, fusion=None):
    """Left-to-right pass feeding back argmax labels (inference computation).

    Returns (stacked (U, K) log-prob rows, argmax alignment).
    """
    U = h.shape[0]
    state = params.zero_state()
    prev = params.blank
    lm_state = fusion.start() if fusion is not None else None
    rows = []
    alignment = []
    for u in range(U):
        state = params.advance(state, prev)
        s = tz.concat([state[0], h[u:u + 1, :]], axis=1)
        lm_h = lm_state[1] if fusion is not None else None
        logits = params.output_logits(s, fusion, lm_h)
        if np.isnan(logits.data).any():
            raise NumericError(f"NaN in decoder logits at step {u + 1}")
        lp = tz.log_softmax(logits)
        rows.append(lp)
        prev = int(np.argmax(lp.data))     # ties break toward the lowest id
        alignment.append(prev)
        if fusion is not None:
            lm_state = fusion.advance(lm_state, prev)
    return tz.concat(rows, axis=0), alignment


NEG_INF = -np.inf


def _dp_pass(U, N, blank_at, label_at):
    """Shared forward/backward recursion over (u, n) in log space.

    ``blank_at(u)`` gives log p(blank) for nodes n = 0..N at step u (vector
    or scalar); ``label_at(u)`` gives log p(y_{n+1}) at nodes n = 0..N-1.
    Returns (alpha list, beta list) of (N+1,) tensors for u = 0..N..U.
    """
    ninf1 = Tensor(np.array([NEG_INF]))

    start = np.full(N + 1, NEG_INF)
    start[0] = 0.0
    alpha = [Tensor(start)]
    for u in range(1, U + 1):
        prev = alpha[-1]
        stay = prev + blank_at(u)
        if N > 0:
            emit = prev[0:N] + label_at(u)
            cur = tz.log_add_exp(stay, tz.concat([ninf1, emit], axis=0))
        else:
            cur = stay
        alpha.append(cur)

    end = np.full(N + 1, NEG_INF)
    end[N] = 0.0
    beta = [Tensor(end)]
    for u in range(U - 1, -1, -1):
        nxt = beta[0]
        stay = nxt + blank_at(u + 1)
        if N > 0:
            emit = nxt[1:N + 1] + label_at(u + 1)
            cur = tz.log_add_exp(stay, tz.concat([emit, ninf1], axis=0))
        else:
            cur = stay
        beta.insert(0, cur)
    return alpha, beta


def rna_loss(h, params, labels, mode="lattice-exact", fusion=None):
    """Negative log-likelihood of ``labels`` under all alignments of ``h``.

    Returns (nll scalar tensor, AlignmentLattice). ``h`` is the (U, d)
    encoder output; gradients flow through everything the mode defines as
    differentiable.
    """
    h = tz.as_tensor(h)
    U = h.shape[0]
    N = len(labels)
    if N > U:
        raise InfeasibleError(
            f"target has {N} labels but only {U} encoded steps are available")
    _check_targets(params, labels)
    y_arr = np.array(labels, dtype=np.intp)

    alignment = None
    if mode == "lattice-exact":
        lp3 = _lattice_log_probs(h, params, labels, fusion)
        blank_mat = lp3[:, :, params.blank]                     # (U, N+1)
        label_mat = lp3[:, np.arange(N), y_arr] if N > 0 else None

        def blank_at(u):
            return blank_mat[u - 1]

        def label_at(u):
            return label_mat[u - 1]

        log_probs = lp3
    elif mode == "greedy-path":
        rows, alignment = _greedy_pass(h, params, fusion)        # (U, K)
        blank_col = rows[:, params.blank]
        label_mat = rows[:, y_arr] if N > 0 else None            # (U, N)

        def blank_at(u):
            return blank_col[u - 1]

        def label_at(u):
            return label_mat[u - 1]

        log_probs = rows
    else:
        raise ConfigError(f"unknown loss mode {mode!r}")

    alpha, beta = _dp_pass(U, N, blank_at, label_at)
    nll = -alpha[U][N]
    lattice = AlignmentLattice(U=U, N=N, blank=params.blank, labels=list(labels),
                               mode=mode, log_probs=log_probs, alpha=alpha,
                               beta=beta, nll=nll, alignment=alignment)
    return nll, lattice


def rna_loss_bruteforce(h, params, labels, mode="lattice-exact", fusion=None):
    """Enumerate every alignment whose blank-removal equals the target.

    Exact reference for rna_loss: sums path probabilities over the same
    per-node distributions as the checked mode. Refuses U > 8; the cost is
    C(U, N) paths.
    """
    h = tz.as_tensor(h)
    U = h.shape[0]
    N = len(labels)
    if U > 8:
        raise ConfigError(f"brute-force oracle refuses U={U} > 8")
    if N > U:
        raise InfeasibleError(
            f"target has {N} labels but only {U} encoded steps are available")
    _check_targets(params, labels)

    if mode == "lattice-exact":
        table = _lattice_log_probs(h, params, labels, fusion).data
    elif mode == "greedy-path":
        rows, _ = _greedy_pass(h, params, fusion)
        table = np.repeat(rows.data[:, None, :], N + 1, axis=1)
    else:
        raise ConfigError(f"unknown loss mode {mode!r}")

    total = NEG_INF
    count = 0
    for positions in combinations(range(U), N):
        score = 0.0
        n = 0
        for u in range(U):
            if n < N and positions[n] == u:
                score += table[u, n, labels[n]]
                n += 1
            else:
                score += table[u, n, params.blank]
        total = np.logaddexp(total, score)
        count += 1
    return -total, count


@dataclass
class Hypothesis:
    """One beam entry: an alignment prefix with its running log score.

    ``state`` is the decoder cell state after consuming the prefix minus
    its final symbol (the cell runs one symbol behind); ``lm_state`` obeys
    the blank rule and is private to the hypothesis.
    """

    alignment: tuple
    logp: float
    state: tuple
    lm_state: object = None

    def sort_key(self):
        return (-self.logp, self.alignment)


def greedy_decode(h, params, fusion=None):
    """Argmax decoding per step, blanks removed from the result."""
    h = tz.as_tensor(h)
    if h.shape[0] < 1:
        raise ShapeError("cannot decode an empty encoding")
    _, alignment = _greedy_pass(h, params, fusion)
    return collapse_blanks(alignment, params.blank)


def beam_search(h, params, beam_size, fusion=None):
    """Alignment-level beam search; returns final hypotheses, best first.

    Every hypothesis expands over all L+1 symbols each step; the top
    ``beam_size`` by cumulative log probability survive. Hypotheses with
    equal blank-collapsed prefixes are never merged. Ties break by log
    probability, then lexicographically by alignment, so results are
    deterministic.
    """
    if beam_size < 1:
        raise ConfigError(f"beam size must be >= 1, got {beam_size}")
    h = tz.as_tensor(h)
    U = h.shape[0]
    beam = [Hypothesis(alignment=(), logp=0.0, state=params.zero_state(),
                       lm_state=fusion.start() if fusion is not None else None)]
    for u in range(U):
        candidates = []
        for hyp in beam:
            prev = hyp.alignment[-1] if hyp.alignment else params.blank
            state = params.advance(hyp.state, prev)
            s = tz.concat([state[0], h[u:u + 1, :]], axis=1)
            lm_h = hyp.lm_state[1] if fusion is not None else None
            row = tz.log_softmax(params.output_logits(s, fusion, lm_h)).data[0]
            for k in range(params.units):
                candidates.append(Hypothesis(
                    alignment=hyp.alignment + (k,),
                    logp=hyp.logp + float(row[k]),
                    state=state,
                    lm_state=hyp.lm_state))
        candidates.sort(key=Hypothesis.sort_key)
        beam = candidates[:beam_size]
        if fusion is not None:
            beam = [Hypothesis(alignment=hyp.alignment, logp=hyp.logp,
                               state=hyp.state,
                               lm_state=fusion.advance(hyp.lm_state, hyp.alignment[-1]))
                    for hyp in beam]
    return beam


def beam_decode(h, params, beam_size, fusion=None):
    """Labels of the best alignment found by beam_search."""
    beam = beam_search(h, params, beam_size, fusion)
    return collapse_blanks(beam[0].alignment, params.blank)
