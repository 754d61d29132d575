"""Gradient-descent training loops for the transducer, the LM, and fusion.

Adam (the default) or plain SGD, both with global gradient-norm clipping
and step-size halving when the dev loss stops improving. Utterances are
bucketed by frame count and each batch accumulates per-utterance gradients
(every utterance gets its own recorded graph, so no frames are ever padded
into the loss).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .metrics import cer
from . import lm as lm_mod
from .tensor import Graph, zero_grad


class SGD:
    """Stochastic gradient descent with global-norm clipping."""

    def __init__(self, params, lr, clip_norm=5.0):
        self.params = list(params)
        self.lr = lr
        self.clip_norm = clip_norm

    def _clip_scale(self):
        grads = [p.grad for p in self.params if p.grad is not None]
        if not grads:
            return None
        norm = float(np.sqrt(sum((g * g).sum() for g in grads)))
        if self.clip_norm and norm > self.clip_norm:
            return self.clip_norm / norm
        return 1.0

    def step(self):
        scale = self._clip_scale()
        if scale is None:
            return
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * scale * p.grad

    def zero(self):
        zero_grad(self.params)


class Adam(SGD):
    """Adam with global-norm clipping; deterministic given the data order."""

    def __init__(self, params, lr, clip_norm=5.0, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        super().__init__(params, lr, clip_norm)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        scale = self._clip_scale()
        if scale is None:
            return
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad * scale
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1.0 - self.beta2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name, params, lr, clip_norm=5.0):
    if name == "adam":
        return Adam(params, lr, clip_norm)
    if name == "sgd":
        return SGD(params, lr, clip_norm)
    raise ConfigError(f"unknown optimizer {name!r}")


class Plateau:
    """Halve the step size when the watched loss stalls."""

    def __init__(self, optimizer, patience=4, decay=0.5, min_improve=1e-3):
        self.opt = optimizer
        self.patience = patience
        self.decay = decay
        self.min_improve = min_improve
        self.best = np.inf
        self.stale = 0

    def update(self, value):
        if value < self.best - self.min_improve:
            self.best = value
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.opt.lr *= self.decay
                self.stale = 0


def bucket_batches(utterances, batch_size, rng):
    """Length-bucketed batches in a shuffled order."""
    order = sorted(range(len(utterances)), key=lambda i: len(utterances[i].features))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    rng.shuffle(chunks)
    return [[utterances[i] for i in chunk] for chunk in chunks]


def split_feasible(model, utterances):
    """Utterances whose targets fit their encoded lengths, plus a skip count."""
    kept, skipped = [], 0
    for u in utterances:
        if len(u.labels) <= model.output_length(len(u.features)):
            kept.append(u)
        else:
            skipped += 1
    return kept, skipped


def evaluate(model, utterances, use_fusion=None):
    """Mean per-utterance loss and greedy CER over a dev set."""
    total = 0.0
    pairs = []
    for u in utterances:
        loss, _, _ = model.loss(u, use_fusion=use_fusion)
        total += float(loss.data)
        pairs.append((u.labels, model.greedy(u, use_fusion=use_fusion)))
    return total / max(len(utterances), 1), cer(pairs)


def train_model(model, train_utts, dev_utts, log=print, params=None,
                use_fusion=None, epochs=None):
    """Fit ``params`` (default: all base parameters) on the training set.

    Logs one machine-readable line per epoch:
    ``EPOCH=<k> LOSS=<dev loss> DEV_CER=<percent>``.
    """
    cfg = model.config
    train_utts, skipped = split_feasible(model, train_utts)
    if not train_utts:
        raise ConfigError("every training utterance is infeasible (labels > encoded steps)")
    if skipped:
        log(f"SKIPPED_INFEASIBLE={skipped}")
    dev_utts, dev_skipped = split_feasible(model, dev_utts)
    if dev_skipped:
        log(f"SKIPPED_INFEASIBLE={dev_skipped}")

    opt = make_optimizer(cfg.optimizer,
                         params if params is not None else model.parameters(),
                         lr=cfg.lr, clip_norm=cfg.clip_norm)
    schedule = Plateau(opt, patience=cfg.lr_patience, decay=cfg.lr_decay)
    rng = np.random.default_rng(cfg.seed + 7919)
    history = []
    for epoch in range(1, (epochs or cfg.epochs) + 1):
        for batch in bucket_batches(train_utts, cfg.batch_size, rng):
            opt.zero()
            for utt in batch:
                with Graph() as g:
                    loss, _, _ = model.loss(utt, use_fusion=use_fusion)
                    g.backward(loss * (1.0 / len(batch)))
            opt.step()
        dev_loss, dev_cer = evaluate(model, dev_utts or train_utts,
                                     use_fusion=use_fusion)
        history.append((epoch, dev_loss, dev_cer))
        log(f"EPOCH={epoch} LOSS={dev_loss:.6f} DEV_CER={dev_cer:.4f}")
        schedule.update(dev_loss)
    return history


def train_lm(transcripts, lm_params, dev_transcripts=None, lr=0.01, epochs=30,
             batch_size=8, clip_norm=5.0, seed=1, log=print, optimizer="adam"):
    """Next-character cross-entropy training; logs dev perplexity per epoch.

    ``transcripts`` are label-id sequences over the LM's real labels.
    """
    transcripts = [t for t in transcripts if t]
    if not transcripts:
        raise ConfigError("cannot train a language model on an empty corpus")
    dev = [t for t in (dev_transcripts or transcripts) if t]
    params = [t for _, t in lm_params.named()]
    opt = make_optimizer(optimizer, params, lr=lr, clip_norm=clip_norm)
    schedule = Plateau(opt)
    rng = np.random.default_rng(seed + 6211)
    history = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(transcripts))
        for lo in range(0, len(order), batch_size):
            batch = order[lo:lo + batch_size]
            opt.zero()
            chars = 0
            with Graph() as g:
                total = None
                for i in batch:
                    nll, n = lm_params.next_char_nll(transcripts[i])
                    chars += n
                    total = nll if total is None else total + nll
                g.backward(total * (1.0 / max(chars, 1)))
            opt.step()
        ppl = lm_mod.perplexity(lm_params, dev)
        history.append((epoch, ppl))
        log(f"LM_EPOCH={epoch} PPL={ppl:.6f}")
        schedule.update(np.log(ppl))
    return history


def train_fusion(model, train_utts, dev_utts, log=print, epochs=None):
    """Optimize only the fusion gate/projection; base and LM stay frozen."""
    if model.fusion is None:
        raise ConfigError("attach a language model before fusion training")
    fusion_params = [t for _, t in model.fusion.fp.named()]
    return train_model(model, train_utts, dev_utts, log=log,
                       params=fusion_params, use_fusion=True, epochs=epochs)
