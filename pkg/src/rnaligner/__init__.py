"""Streaming encoder-decoder speech-to-character transducer on numpy.

A blank-augmented alignment loss marginalized over a (time, emitted-count)
lattice, a temporal down-sampling encoder with gated convolutional blocks,
output-entropy regularization, blank-aware language-model fusion, and
greedy/beam decoding — with reverse-mode gradients recorded by a built-in
tape and verified against finite differences.
"""

from .aligner import (AlignmentLattice, DecoderParams, Hypothesis,
                      beam_decode, beam_search, collapse_blanks,
                      decoder_step, greedy_decode, rna_loss,
                      rna_loss_bruteforce)
from .config import RunConfig
from .downsample import DownsampleSpec, parse_downsample_spec
from .encoder import (EncoderConfig, EncoderParams, MuParams, encode,
                      mu_forward, row_conv)
from .features import (NormStats, Utterance, Vocabulary, add_deltas,
                       load_features, load_manifest, normalize, save_features,
                       stack_frames)
from .gradcheck import grad_check
from .lm import (FusedOutput, FusionParams, LMParams, fuse, lm_state_advance,
                 perplexity)
from .metrics import EditCounts, cer, edit_distance
from .model import FeaturePipeline, TransducerModel, build_fusion, build_lm
from .penalty import PenaltyConfig, entropy, total_loss
from .synth import synth_dataset, synth_splits
from .tensor import (Graph, Tensor, backward, conv2d, layer_norm, log_add_exp,
                     matmul, max_pool_time, parameter, set_default_dtype,
                     softmax, zero_grad)
from .train import SGD, train_fusion, train_lm, train_model

__all__ = [name for name in dir() if not name.startswith("_")]
