"""Self-contained verification harnesses, shared by the CLI and the tests.

``full_model_grad_check`` wires every component into one tiny model (conv,
multiplicative unit, two recurrent layers, decoder, entropy penalty, fused
LM gate) and compares recorded gradients of the penalized lattice loss
against central differences for every parameter coordinate.

``oracle_equivalence_sweep`` compares the lattice recursion against full
path enumeration across random model draws.
"""

from __future__ import annotations

import numpy as np

from .aligner import rna_loss, rna_loss_bruteforce, DecoderParams
from .config import RunConfig
from .gradcheck import grad_check
from .model import TransducerModel, build_fusion, build_lm
from .features import Utterance
from .penalty import PenaltyConfig, total_loss


def _toy_model(seed=20):
    config = RunConfig(downsample="conv-stride{2}", feature_dim=2,
                       use_deltas=False, lstm_layers=2, cells=3,
                       bidirectional=False, mu_count=1, conv_channels="2",
                       row_conv_context=0, embed_dim=2, decoder_cells=3,
                       vocab_size=3, lm_embed_dim=2, lm_cells=3,
                       confidence_penalty=0.2, loss_mode="lattice-exact",
                       seed=seed)
    model = TransducerModel(config)
    lm = build_lm(config)
    model.attach_fusion(lm, build_fusion(model, lm))
    rng = np.random.default_rng(seed + 17)
    tensors = dict(model.named_parameters())
    tensors.update(model.fusion_parameters())
    # healthy magnitudes: the tiny training init sits too close to dead
    # relus and saturation plateaus for finite differences to resolve
    for t in tensors.values():
        t.data[:] = rng.uniform(-0.4, 0.4, size=t.data.shape)
    return model, tensors


def full_model_grad_check(eps=1e-5, seed=20):
    """Max relative gradient error of the full penalized fused loss."""
    model, tensors = _toy_model(seed)
    rng = np.random.default_rng(seed + 31)
    utt = Utterance(features=0.5 * rng.normal(size=(6, 2)), labels=[1, 0],
                    speaker="s0")
    model.pipeline.fit([utt])

    def f(ps):
        loss, _, _ = model.loss(utt, mode="lattice-exact")
        return loss

    return grad_check(f, list(tensors.values()), eps=eps)


def oracle_equivalence_sweep(draws=200, seed=123, max_u=5, max_n=3, num_labels=3):
    """Max |lattice nll - enumerated nll| over random parameter draws."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        U = int(rng.integers(1, max_u + 1))
        N = int(rng.integers(0, min(U, max_n) + 1))
        params = DecoderParams(num_labels, 2, 3, 4, rng)
        for _, t in params.named():
            t.data[:] = rng.uniform(-0.5, 0.5, size=t.data.shape)
        h = rng.normal(size=(U, 4))
        labels = list(rng.integers(0, num_labels, size=N))
        nll, _ = rna_loss(h, params, labels, mode="lattice-exact")
        ref, _ = rna_loss_bruteforce(h, params, labels, mode="lattice-exact")
        worst = max(worst, abs(float(nll.data) - ref))
    return worst


def forward_backward_drift(lattices=100, seed=321):
    """Max posterior-sum drift over random lattices (consistency check)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(lattices):
        U = int(rng.integers(1, 8))
        N = int(rng.integers(0, min(U, 4) + 1))
        params = DecoderParams(3, 2, 3, 4, rng)
        for _, t in params.named():
            t.data[:] = rng.uniform(-1.0, 1.0, size=t.data.shape)
        h = rng.normal(size=(U, 4))
        _, lattice = rna_loss(h, params, list(rng.integers(0, 3, size=N)))
        worst = max(worst, lattice.log_likelihood_drift())
    return worst
