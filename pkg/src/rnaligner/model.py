"""Full transducer assembly: feature pipeline, encoder, decoder, fusion."""

from __future__ import annotations

import numpy as np

from .aligner import DecoderParams, beam_decode, greedy_decode, rna_loss
from .config import RunConfig
from .downsample import parse_downsample_spec
from .encoder import EncoderConfig, EncoderParams, encode
from .errors import ConfigError, FormatError
from .features import NormStats, Utterance, add_deltas, normalize
from .lm import FusedOutput, FusionParams, LMParams
from .penalty import PenaltyConfig, total_loss


class FeaturePipeline:
    """Deltas plus two-stage normalization (per-speaker, then global).

    Fitted on the training partition only; decode-time utterances from
    unknown speakers fall back to the stage-one global stats.
    """

    def __init__(self, use_deltas=True):
        self.use_deltas = use_deltas
        self.stage1 = None
        self.stage2 = None

    def _deltas(self, utt):
        feats = add_deltas(utt.features) if self.use_deltas else np.asarray(utt.features)
        return Utterance(features=feats, labels=list(utt.labels),
                         speaker=utt.speaker, uid=utt.uid)

    def fit(self, utterances):
        expanded = [self._deltas(u) for u in utterances]
        self.stage1 = NormStats.fit(expanded)
        once = [Utterance(features=normalize(u.features, self.stage1, "per-speaker",
                                             speaker=u.speaker),
                          labels=u.labels, speaker=u.speaker, uid=u.uid)
                for u in expanded]
        self.stage2 = NormStats.fit(once)
        return self

    def apply(self, utt):
        if self.stage1 is None:
            raise ConfigError("feature pipeline used before fitting")
        u = self._deltas(utt)
        feats = normalize(u.features, self.stage1, "per-speaker", speaker=u.speaker)
        return normalize(feats, self.stage2, "global")

    def named_arrays(self, prefix="frontend"):
        yield f"{prefix}.g1.mean", self.stage1.global_mean
        yield f"{prefix}.g1.std", self.stage1.global_std
        for spk in sorted(self.stage1.speaker_mean):
            yield f"{prefix}.spk.{spk}.mean", self.stage1.speaker_mean[spk]
            yield f"{prefix}.spk.{spk}.std", self.stage1.speaker_std[spk]
        yield f"{prefix}.g2.mean", self.stage2.global_mean
        yield f"{prefix}.g2.std", self.stage2.global_std

    def load_arrays(self, arrays, prefix="frontend"):
        self.stage1 = NormStats(global_mean=arrays[f"{prefix}.g1.mean"],
                                global_std=arrays[f"{prefix}.g1.std"])
        self.stage2 = NormStats(global_mean=arrays[f"{prefix}.g2.mean"],
                                global_std=arrays[f"{prefix}.g2.std"])
        for name, value in arrays.items():
            if name.startswith(f"{prefix}.spk."):
                rest = name[len(f"{prefix}.spk."):]
                spk, kind = rest.rsplit(".", 1)
                dest = (self.stage1.speaker_mean if kind == "mean"
                        else self.stage1.speaker_std)
                dest[spk] = value
        return self


class TransducerModel:
    """Encoder plus decoder under one config, with optional fused output."""

    def __init__(self, config: RunConfig, rng=None):
        self.config = config
        rng = rng or np.random.default_rng(config.seed)
        enc_dim = config.feature_dim * (3 if config.use_deltas else 1)
        self.encoder_cfg = EncoderConfig(
            parse_downsample_spec(config.downsample),
            feature_dim=enc_dim,
            lstm_layers=config.lstm_layers,
            cells=config.cells,
            bidirectional=config.bidirectional,
            mu_count=config.mu_count,
            conv_channels=config.conv_channel_list(),
            row_conv_context=config.row_conv_context)
        self.encoder = EncoderParams(self.encoder_cfg, rng)
        self.decoder = DecoderParams(config.vocab_size, config.embed_dim,
                                     config.decoder_cells,
                                     self.encoder_cfg.output_dim, rng)
        self.penalty = PenaltyConfig(config.confidence_penalty)
        self.pipeline = FeaturePipeline(config.use_deltas)
        self.fusion = None

    def attach_fusion(self, lm_params: LMParams, fusion_params: FusionParams):
        self.fusion = FusedOutput(lm_params, fusion_params, self.decoder.blank)

    def named_parameters(self):
        out = dict(self.encoder.named("encoder"))
        out.update(self.decoder.named("decoder"))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def fusion_parameters(self):
        if self.fusion is None:
            return {}
        out = dict(self.fusion.fp.named("fusion"))
        out.update(self.fusion.lm.named("lm"))
        return out

    def encode_utterance(self, utt):
        return encode(self.pipeline.apply(utt), self.encoder_cfg, self.encoder)

    def output_length(self, frames):
        return self.encoder_cfg.downsample.output_length(frames)

    def loss(self, utt, mode=None, use_fusion=None):
        """Penalized alignment loss of one utterance.

        Returns (total, nll, lattice); fusion joins when attached unless
        ``use_fusion`` is False.
        """
        fusion = self.fusion if (use_fusion is None or use_fusion) else None
        h = self.encode_utterance(utt)
        nll, lattice = rna_loss(h, self.decoder, utt.labels,
                                mode=mode or self.config.loss_mode,
                                fusion=fusion)
        return total_loss(nll, lattice, self.penalty), nll, lattice

    def greedy(self, utt, use_fusion=None):
        fusion = self.fusion if (use_fusion is None or use_fusion) else None
        h = self.encode_utterance(utt)
        return greedy_decode(h, self.decoder, fusion=fusion)

    def beam(self, utt, beam_size=None, use_fusion=None):
        fusion = self.fusion if (use_fusion is None or use_fusion) else None
        h = self.encode_utterance(utt)
        return beam_decode(h, self.decoder, beam_size or self.config.beam,
                           fusion=fusion)

    def state_arrays(self):
        """Everything a checkpoint stores, as plain arrays."""
        out = {name: t.data for name, t in self.named_parameters().items()}
        out.update({name: t.data for name, t in self.fusion_parameters().items()})
        if self.pipeline.stage1 is not None:
            out.update(dict(self.pipeline.named_arrays()))
        return out

    def load_state_arrays(self, arrays):
        params = self.named_parameters()
        params.update(self.fusion_parameters())
        missing = set(params) - set(arrays)
        if missing:
            raise FormatError(f"checkpoint missing tensors: {sorted(missing)[:4]}")
        for name, tensor in params.items():
            value = np.asarray(arrays[name])
            if value.shape != tensor.data.shape:
                raise FormatError(
                    f"checkpoint tensor {name} has shape {value.shape}, "
                    f"model expects {tensor.data.shape}")
            tensor.data = value.astype(tensor.data.dtype)
        frontend = {n: v for n, v in arrays.items() if n.startswith("frontend.")}
        if frontend:
            self.pipeline.load_arrays(frontend)


def build_lm(config: RunConfig, rng=None):
    rng = rng or np.random.default_rng(config.seed + 101)
    return LMParams(config.vocab_size, config.lm_embed_dim, config.lm_cells, rng)


def build_fusion(model: TransducerModel, lm_params: LMParams, rng=None):
    rng = rng or np.random.default_rng(model.config.seed + 202)
    return FusionParams.from_projection(model.decoder, lm_params.cells, rng)
