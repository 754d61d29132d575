import numpy as np
import pytest

from rnaligner.errors import ConfigError, ShapeError, VocabularyError
from rnaligner.gradcheck import grad_check
from rnaligner.lm import (FusedOutput, FusionParams, LMParams, fuse,
                          lm_state_advance, perplexity)
from rnaligner.tensor import Tensor, concat, parameter, tsum
from rnaligner.train import train_lm
from tests.test_aligner import make_decoder


def make_lm(num_labels, rng, embed=4, cells=5, scale=0.5):
    lm = LMParams(num_labels, embed, cells, rng)
    for _, t in lm.named():
        t.data[:] = rng.uniform(-scale, scale, size=t.data.shape)
    return lm


class TestLmStateAdvance:
    def test_blank_returns_identical_objects(self):
        rng = np.random.default_rng(0)
        lm = make_lm(4, rng)
        state = lm.start_state()
        after = lm_state_advance(lm, state, symbol=4, blank=4)
        assert after is state   # bit-identical, not merely equal

    def test_blanks_never_advance_anything(self):
        rng = np.random.default_rng(1)
        lm = make_lm(4, rng)
        state = lm.start_state()
        state = lm_state_advance(lm, state, 0, blank=4)
        held = state[1].data.copy()
        for _ in range(3):
            state = lm_state_advance(lm, state, 4, blank=4)
            np.testing.assert_array_equal(state[1].data, held)

    def test_consumed_sequence_matches_direct_chain(self):
        # [a, blank, blank, b] must consume exactly (start, a, b)
        rng = np.random.default_rng(2)
        lm = make_lm(4, rng)
        state = lm.start_state()
        for symbol in [0, 4, 4, 2]:
            state = lm_state_advance(lm, state, symbol, blank=4)
        direct = lm.zero_state()
        for symbol in [lm.start, 0, 2]:
            direct = lm.consume(direct, symbol)
        np.testing.assert_array_equal(state[0][0].data, direct[0].data)
        np.testing.assert_array_equal(state[0][1].data, direct[1].data)
        np.testing.assert_array_equal(state[1].data, direct[0].data)

    def test_advance_count_equals_collapsed_length(self):
        from rnaligner.aligner import collapse_blanks

        rng = np.random.default_rng(3)
        lm = make_lm(4, rng)
        consumed = []
        original = lm.consume

        def counting(state, symbol):
            consumed.append(symbol)
            return original(state, symbol)

        lm.consume = counting
        alignment = [4, 1, 4, 4, 0, 2, 4]
        state = lm.start_state()
        for symbol in alignment:
            state = lm_state_advance(lm, state, symbol, blank=4)
        collapsed = collapse_blanks(alignment, blank=4)
        assert consumed == [lm.start] + collapsed

    def test_distinct_labels_distinct_outputs(self):
        rng = np.random.default_rng(4)
        lm = make_lm(4, rng)
        state = lm.start_state()
        a = lm_state_advance(lm, state, 1, blank=4)
        b = lm_state_advance(lm, state, 2, blank=4)
        assert (a[1].data != b[1].data).any()

    def test_lm_vocabulary_excludes_blank(self):
        rng = np.random.default_rng(5)
        lm = make_lm(4, rng)
        with pytest.raises(VocabularyError):
            lm.output_chain([4])


class TestTrainLm:
    def test_memorizes_single_sequence(self):
        rng = np.random.default_rng(6)
        lm = make_lm(4, rng)
        transcript = [0, 1, 2, 3, 1, 0]
        history = train_lm([transcript] * 8, lm, epochs=60, lr=0.05, seed=1,
                           log=lambda line: None)
        assert history[-1][1] <= 1.1

    def test_uniform_corpus_perplexity_near_vocab_size(self):
        rng = np.random.default_rng(7)
        L = 4
        lm = make_lm(L, rng)
        gen = np.random.default_rng(8)
        train = [list(gen.integers(0, L, size=6)) for _ in range(40)]
        dev = [list(gen.integers(0, L, size=6)) for _ in range(20)]
        train_lm(train, lm, dev_transcripts=dev, epochs=15, seed=1,
                 log=lambda line: None)
        ppl = perplexity(lm, dev)
        assert 0.75 * L < ppl < 1.5 * L

    def test_skewed_corpus_perplexity_decreases(self):
        from rnaligner.synth import skewed_transition, _draw_labels

        rng = np.random.default_rng(9)
        lm = make_lm(6, rng)
        gen = np.random.default_rng(10)
        trans = skewed_transition(gen, 6)
        corpus = [_draw_labels(gen, 5, 6, "skewed", trans) for _ in range(60)]
        history = train_lm(corpus[:40], lm, dev_transcripts=corpus[40:],
                           epochs=6, seed=1, log=lambda line: None)
        assert history[2][1] < history[0][1]
        assert history[-1][1] < history[0][1]

    def test_empty_corpus_rejected(self):
        rng = np.random.default_rng(11)
        lm = make_lm(4, rng)
        with pytest.raises(ConfigError):
            train_lm([], lm, log=lambda line: None)
        with pytest.raises(ConfigError):
            train_lm([[]], lm, log=lambda line: None)


class TestFuse:
    @staticmethod
    def setup_params(seed=12, s_dim=6, lm_dim=4, units=5):
        rng = np.random.default_rng(seed)
        fp = FusionParams(s_dim, lm_dim, units, rng)
        for _, t in fp.named():
            t.data[:] = rng.uniform(-0.5, 0.5, size=t.data.shape)
        return fp, rng

    def test_gate_off_ignores_lm_feature(self):
        fp, rng = self.setup_params()
        fp.b1.data[:] = -40.0      # saturate the gate closed
        fp.w1.data[:] = 0.0
        s = Tensor(rng.normal(size=(3, 6)))
        out1 = fuse(s, Tensor(rng.normal(size=(3, 4))), fp)
        out2 = fuse(s, Tensor(rng.normal(size=(3, 4))), fp)
        np.testing.assert_allclose(out1.data, out2.data, atol=1e-12)

    def test_gate_on_passes_lm_feature_through(self):
        fp, rng = self.setup_params(seed=13)
        fp.b1.data[:] = 40.0       # saturate the gate open
        fp.w1.data[:] = 0.0
        s = Tensor(rng.normal(size=(2, 6)))
        h_lm = Tensor(rng.normal(size=(2, 4)))
        expect = concat([s, h_lm], axis=1) @ fp.w2 + fp.b2
        np.testing.assert_allclose(fuse(s, h_lm, fp).data, expect.data, atol=1e-12)

    def test_projection_identity_when_lm_block_zeroed(self):
        # gate off plus zero LM columns reduces fusion to the plain projection
        rng = np.random.default_rng(14)
        decoder = make_decoder(4, 3, rng, cells=3)
        fp = FusionParams.from_projection(decoder, lm_dim=4, rng=rng)
        s = Tensor(rng.normal(size=(3, 6)))
        h_lm = Tensor(rng.normal(size=(3, 4)))
        plain = s @ decoder.w + decoder.b
        np.testing.assert_allclose(fuse(s, h_lm, fp).data, plain.data, atol=1e-12)

    def test_shape_mismatch(self):
        fp, rng = self.setup_params(seed=15)
        with pytest.raises(ShapeError):
            fuse(Tensor(np.zeros((2, 5))), Tensor(np.zeros((2, 4))), fp)

    def test_gradients_through_gate(self):
        fp, rng = self.setup_params(seed=16)
        s = Tensor(rng.normal(size=(2, 6)))
        h_lm = Tensor(rng.normal(size=(2, 4)))

        def f(ps):
            return tsum(fuse(s, h_lm, fp) ** 2.0)

        assert grad_check(f, [fp.w1, fp.b1, fp.w2, fp.b2], eps=1e-5) <= 1e-4


class TestFusedDecoding:
    def test_fused_rna_loss_matches_bruteforce(self):
        from rnaligner.aligner import rna_loss, rna_loss_bruteforce

        rng = np.random.default_rng(17)
        decoder = make_decoder(3, 4, rng)
        lm = make_lm(3, rng)
        fp = FusionParams(decoder.cells + 4, lm.cells, decoder.units, rng)
        for _, t in fp.named():
            t.data[:] = rng.uniform(-0.5, 0.5, size=t.data.shape)
        fusion = FusedOutput(lm, fp, decoder.blank)
        h = Tensor(rng.normal(size=(4, 4)))
        for mode in ("lattice-exact", "greedy-path"):
            nll, _ = rna_loss(h, decoder, [1, 2], mode=mode, fusion=fusion)
            ref, _ = rna_loss_bruteforce(h, decoder, [1, 2], mode=mode, fusion=fusion)
            assert abs(float(nll.data) - ref) <= 1e-9

    def test_beam_hypotheses_carry_private_lm_state(self):
        from rnaligner.aligner import beam_search

        rng = np.random.default_rng(18)
        decoder = make_decoder(3, 4, rng)
        lm = make_lm(3, rng)
        fp = FusionParams(decoder.cells + 4, lm.cells, decoder.units, rng)
        fusion = FusedOutput(lm, fp, decoder.blank)
        beam = beam_search(Tensor(rng.normal(size=(3, 4))), decoder, 4,
                           fusion=fusion)
        # each hypothesis's LM consumed exactly its own collapsed alignment
        from rnaligner.aligner import collapse_blanks
        for hyp in beam:
            direct = lm.zero_state()
            for symbol in [lm.start] + collapse_blanks(hyp.alignment,
                                                       decoder.blank):
                direct = lm.consume(direct, symbol)
            np.testing.assert_array_equal(hyp.lm_state[1].data, direct[0].data)
