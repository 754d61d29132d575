"""Confidence penalty: output-entropy regularization of the alignment loss.

The penalty subtracts a multiple of the per-step output entropy from the
loss, so near-one-hot distributions are penalized and smoother ones are
rewarded:

    total = nll - weight * sum of step entropies

In greedy-path mode the entropies are those of the U distributions along
the decoded path. In lattice-exact mode every reachable node's entropy is
weighted by the node's posterior occupancy (which sums to one per step),
so the penalty is an expectation over the model's own alignment posterior
and collapses to the plain per-step sum when only one path exists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from . import tensor as tz
from .tensor import Tensor


@dataclass
class PenaltyConfig:
    weight: float = 0.2

    def __post_init__(self):
        if self.weight < 0:
            raise ConfigError(f"penalty weight must be >= 0, got {self.weight}")


def entropy(dist):
    """Shannon entropy of a probability vector, with 0 log 0 = 0.

    Differentiable through the probabilities; rejects negative entries.
    """
    dist = tz.as_tensor(dist)
    if (dist.data < -1e-12).any():
        raise NumericError("entropy of a distribution with negative probabilities")
    tiny = 1e-300
    # max(p, tiny) via relu keeps the zero-probability terms at exactly 0
    safe = tz.relu(dist - tiny) + tiny
    return -tz.tsum(dist * tz.log(safe))


def _entropy_rows_from_log_probs(lp):
    """Entropy of each row of a (..., K) log-probability tensor."""
    return -tz.tsum(tz.exp(lp) * lp, axis=-1)


def lattice_entropy(lattice):
    """Total output entropy the penalty sees, as a recorded tensor.

    Greedy-path lattices sum the U per-step entropies. Lattice-exact ones
    weight node (u, n)'s entropy by exp(alpha[u] + beta[u] + nll), the
    posterior probability that step u+1 fires from n emitted labels.
    """
    if lattice.mode == "greedy-path":
        return tz.tsum(_entropy_rows_from_log_probs(lattice.log_probs))
    ent = _entropy_rows_from_log_probs(lattice.log_probs)     # (U, N+1)
    occupancy = tz.exp(
        tz.stack(lattice.alpha[:lattice.U], axis=0)
        + tz.stack(lattice.beta[:lattice.U], axis=0)
        + lattice.nll)
    return tz.tsum(occupancy * ent)


def total_loss(nll, lattice, config):
    """Alignment loss with the entropy penalty applied at ``config.weight``."""
    if config.weight == 0.0:
        return nll
    return nll - config.weight * lattice_entropy(lattice)
