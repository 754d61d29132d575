"""Command line entry points: train, decode, eval, lm-train, fusion-train,
gradcheck, oracle-check.

Exit codes: 0 success, 1 usage/config error, 2 data, format or check
failure. Machine-readable output lines, one fact per line:

    EPOCH=<int> LOSS=<float> DEV_CER=<float>
    SKIPPED_INFEASIBLE=<int>
    LM_EPOCH=<int> PPL=<float>
    CER=<float> S=<int> D=<int> I=<int> REFLEN=<int>
    GRADCHECK_MAX_REL_ERR=<float>
    ORACLE_MAX_ABS_DIFF=<float>
"""

from __future__ import annotations

import argparse
import os
import string
import sys

import numpy as np

from . import checks
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .downsample import parse_downsample_spec
from .errors import AlignerError, ConfigError, FormatError, UsageError
from .features import Vocabulary, load_manifest
from .metrics import aggregate_counts
from .model import TransducerModel, build_fusion, build_lm
from .synth import synth_splits
from .tensor import set_default_dtype
from .train import train_fusion, train_lm, train_model


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _synth_vocab(n):
    letters = string.ascii_lowercase + string.ascii_uppercase + string.digits
    labels = [letters[i] if i < len(letters) else f"u{i}" for i in range(n)]
    return Vocabulary(labels)


def _load_config(args, **extra):
    base = RunConfig.from_file(args.config) if getattr(args, "config", None) \
        else RunConfig()
    overrides = {}
    for key in ("seed", "downsample", "confidence_penalty", "loss_mode",
                "beam", "precision", "epochs", "lr"):
        if hasattr(args, key) and getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    overrides.update({k: v for k, v in extra.items() if v is not None})
    return base.with_overrides(**overrides)


def _corpus(args, config):
    """(train utterances, dev utterances, vocabulary) for a run."""
    if args.synthetic:
        vocab = _synth_vocab(config.vocab_size)
        denom = parse_downsample_spec(config.downsample).rate.denominator
        train, dev = synth_splits(
            config.seed, config.synth_train, config.synth_dev, vocab,
            (config.synth_t_min, config.synth_t_max),
            (config.synth_n_min, config.synth_n_max),
            rate_denominator=denom, feature_dim=config.feature_dim,
            noise=config.synth_noise, grammar=config.synth_grammar)
        return train, dev, vocab
    if not args.manifest or not args.vocab:
        raise UsageError("either --synthetic or both --manifest and --vocab are required")
    vocab = Vocabulary.load(args.vocab)
    train = load_manifest(args.manifest, vocab)
    dev = load_manifest(args.dev_manifest, vocab) if args.dev_manifest else []
    return train, dev, vocab


class _Logger:
    """Print lines and keep them for a byte-stable log file."""

    def __init__(self):
        self.lines = []

    def __call__(self, line):
        self.lines.append(line)
        print(line)

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines:
                fh.write(line + "\n")


def cmd_train(args):
    config = _load_config(args)
    set_default_dtype(np.float32 if config.precision == 32 else np.float64)
    train, dev, vocab = _corpus(args, config)
    config = config.with_overrides(vocab_size=vocab.size)
    model = TransducerModel(config)
    model.pipeline.fit(train)
    log = _Logger()
    train_model(model, train, dev, log=log)
    os.makedirs(args.out, exist_ok=True)
    log.write(os.path.join(args.out, "train.log"))
    save_checkpoint(os.path.join(args.out, "checkpoint.rnac"),
                    config.to_dict(), len(log.lines), model.state_arrays())
    return 0


def _restore_model(path):
    config_dict, step, arrays = load_checkpoint(path)
    config = RunConfig.from_dict(config_dict)
    set_default_dtype(np.float32 if config.precision == 32 else np.float64)
    model = TransducerModel(config)
    if any(name.startswith("fusion.") for name in arrays):
        lm = build_lm(config)
        model.attach_fusion(lm, build_fusion(model, lm))
    model.load_state_arrays(arrays)
    return model, config


def cmd_decode(args):
    model, config = _restore_model(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    if vocab.size != config.vocab_size:
        raise ConfigError(
            f"checkpoint was trained with {config.vocab_size} labels but the "
            f"vocabulary file lists {vocab.size}")
    use_fusion = None
    if args.fusion == "on":
        if model.fusion is None:
            raise ConfigError("--fusion on, but the checkpoint has no fusion parameters")
        use_fusion = True
    elif args.fusion == "off":
        use_fusion = False
    beam = args.beam if args.beam is not None else config.beam
    utts = load_manifest(args.manifest, vocab)
    with open(args.out, "w", encoding="utf-8") as fh:
        for utt in utts:
            ids = model.beam(utt, beam_size=beam, use_fusion=use_fusion)
            fh.write(f"{utt.uid}\t{' '.join(str(i) for i in ids)}\n")
    return 0


def cmd_eval(args):
    vocab = Vocabulary.load(args.vocab)
    refs = {u.uid: u.labels for u in load_manifest(args.ref, vocab)}
    pairs = []
    missing = []
    with open(args.hyp, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line:
                continue
            uid, _, ids = line.partition("\t")
            if uid not in refs:
                missing.append(uid)
                continue
            hyp = [int(tok) for tok in ids.split()] if ids.strip() else []
            pairs.append((refs[uid], hyp))
    if missing:
        raise FormatError(f"hypothesis ids missing from references: {missing}")
    counts = aggregate_counts(pairs)
    if counts.ref_len == 0:
        raise FormatError("reference transcripts are empty; CER undefined")
    rate = 100.0 * counts.total / counts.ref_len
    print(f"{len(pairs)} utterances: {rate:.2f}% character error rate "
          f"({counts.substitutions} sub, {counts.deletions} del, "
          f"{counts.insertions} ins over {counts.ref_len} reference chars)")
    print(f"CER={rate:.4f} S={counts.substitutions} D={counts.deletions} "
          f"I={counts.insertions} REFLEN={counts.ref_len}")
    return 0


def cmd_lm_train(args):
    config = _load_config(args)
    set_default_dtype(np.float32 if config.precision == 32 else np.float64)
    train, dev, vocab = _corpus(args, config)
    config = config.with_overrides(vocab_size=vocab.size)
    lm = build_lm(config)
    log = _Logger()
    train_lm([u.labels for u in train], lm,
             dev_transcripts=[u.labels for u in dev] or None,
             lr=config.lm_lr, epochs=config.lm_epochs, optimizer=config.optimizer,
             batch_size=config.batch_size, clip_norm=config.clip_norm,
             seed=config.seed, log=log)
    os.makedirs(args.out, exist_ok=True)
    log.write(os.path.join(args.out, "lm_train.log"))
    save_checkpoint(os.path.join(args.out, "lm.rnac"), config.to_dict(),
                    len(log.lines), {name: t.data for name, t in lm.named()})
    return 0


def cmd_fusion_train(args):
    base_config_dict, _, base_arrays = load_checkpoint(args.checkpoint)
    lm_config_dict, _, lm_arrays = load_checkpoint(args.lm_checkpoint)
    config = RunConfig.from_dict(base_config_dict)
    lm_config = RunConfig.from_dict(lm_config_dict)
    if lm_config.vocab_size != config.vocab_size:
        raise ConfigError(
            f"base model has {config.vocab_size} labels, LM has {lm_config.vocab_size}")
    set_default_dtype(np.float32 if config.precision == 32 else np.float64)
    model = TransducerModel(config)
    model.load_state_arrays(base_arrays)
    lm = build_lm(config.with_overrides(lm_embed_dim=lm_config.lm_embed_dim,
                                        lm_cells=lm_config.lm_cells))
    for name, t in lm.named():
        t.data = lm_arrays[name].astype(t.data.dtype)
    model.attach_fusion(lm, build_fusion(model, lm))
    train, dev, _ = _corpus(args, config)
    log = _Logger()
    train_fusion(model, train, dev, log=log,
                 epochs=args.epochs if args.epochs else None)
    os.makedirs(args.out, exist_ok=True)
    log.write(os.path.join(args.out, "fusion_train.log"))
    save_checkpoint(os.path.join(args.out, "checkpoint.rnac"),
                    config.to_dict(), len(log.lines), model.state_arrays())
    return 0


def cmd_gradcheck(args):
    err = checks.full_model_grad_check(eps=args.eps)
    print(f"GRADCHECK_MAX_REL_ERR={err:.3e}")
    return 0 if err <= 1e-4 else 2


def cmd_oracle_check(args):
    diff = checks.oracle_equivalence_sweep(draws=args.draws)
    print(f"ORACLE_MAX_ABS_DIFF={diff:.3e}")
    return 0 if diff <= 1e-9 else 2


def build_parser():
    parser = _Parser(prog="rnaligner",
                     description="streaming speech-to-character transducer")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--downsample", help='e.g. "conv-stride{2}+pooling{2,4}-width{2,2}"')
        p.add_argument("--confidence-penalty", dest="confidence_penalty", type=float)
        p.add_argument("--loss-mode", dest="loss_mode",
                       choices=["lattice-exact", "greedy-path"])
        p.add_argument("--precision", type=int, choices=[32, 64])
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--synthetic", action="store_true",
                       help="train on the built-in synthetic corpus")
        p.add_argument("--manifest")
        p.add_argument("--dev-manifest", dest="dev_manifest")
        p.add_argument("--vocab")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    p_train = sub.add_parser("train", help="train the transducer")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_decode = sub.add_parser("decode", help="write hypotheses for a manifest")
    p_decode.add_argument("--checkpoint", required=True)
    p_decode.add_argument("--manifest", required=True)
    p_decode.add_argument("--vocab", required=True)
    p_decode.add_argument("--out", required=True, help="hypothesis file")
    p_decode.add_argument("--beam", type=int)
    p_decode.add_argument("--fusion", choices=["on", "off"])
    p_decode.set_defaults(func=cmd_decode)

    p_eval = sub.add_parser("eval", help="score hypotheses against references")
    p_eval.add_argument("--ref", required=True, help="reference manifest")
    p_eval.add_argument("--hyp", required=True, help="hypothesis file")
    p_eval.add_argument("--vocab", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_lm = sub.add_parser("lm-train", help="train the character language model")
    common(p_lm)
    p_lm.set_defaults(func=cmd_lm_train)

    p_fuse = sub.add_parser("fusion-train",
                            help="train the LM fusion gate, base and LM frozen")
    common(p_fuse)
    p_fuse.add_argument("--checkpoint", required=True, help="trained base model")
    p_fuse.add_argument("--lm-checkpoint", dest="lm_checkpoint", required=True)
    p_fuse.set_defaults(func=cmd_fusion_train)

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p_grad.add_argument("--eps", type=float, default=1e-5)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_oracle = sub.add_parser("oracle-check",
                              help="lattice loss vs brute-force enumeration")
    p_oracle.add_argument("--draws", type=int, default=200)
    p_oracle.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (AlignerError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
