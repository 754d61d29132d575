import itertools
from functools import lru_cache

import numpy as np
import pytest

from rnaligner.errors import MetricError
from rnaligner.metrics import EditCounts, aggregate_counts, cer, edit_distance


@lru_cache(maxsize=None)
def brute_distance(ref, hyp):
    """Plain recursive minimal edit distance (oracle)."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    same = brute_distance(ref[1:], hyp[1:]) + (0 if ref[0] == hyp[0] else 1)
    return min(same,
               brute_distance(ref, hyp[1:]) + 1,
               brute_distance(ref[1:], hyp) + 1)


class TestEditDistance:
    def test_identical(self):
        c = edit_distance("abc", "abc")
        assert (c.substitutions, c.deletions, c.insertions) == (0, 0, 0)

    def test_single_substitution(self):
        c = edit_distance("abc", "abd")
        assert (c.substitutions, c.deletions, c.insertions) == (1, 0, 0)

    def test_empty_hypothesis_all_deletions(self):
        c = edit_distance("abc", "")
        assert (c.substitutions, c.deletions, c.insertions) == (0, 3, 0)

    def test_empty_reference_all_insertions(self):
        c = edit_distance("", "ab")
        assert (c.substitutions, c.deletions, c.insertions) == (0, 0, 2)

    def test_tie_prefers_substitution(self):
        # "a" -> "b" could be del+ins; substitution must win
        c = edit_distance("a", "b")
        assert (c.substitutions, c.deletions, c.insertions) == (1, 0, 0)

    def test_counts_sum_to_total(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            ref = tuple(rng.integers(0, 3, size=rng.integers(0, 7)))
            hyp = tuple(rng.integers(0, 3, size=rng.integers(0, 7)))
            c = edit_distance(ref, hyp)
            assert c.total == brute_distance(ref, hyp)
            assert c.deletions <= len(ref)

    def test_symmetry_swaps_deletions_and_insertions(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            ref = tuple(rng.integers(0, 3, size=rng.integers(0, 6)))
            hyp = tuple(rng.integers(0, 3, size=rng.integers(0, 6)))
            a = edit_distance(ref, hyp)
            b = edit_distance(hyp, ref)
            assert a.total == b.total
            assert (a.deletions, a.insertions) == (b.insertions, b.deletions)
            assert a.substitutions == b.substitutions

    def test_triangle_inequality_on_totals(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            x, y, z = (tuple(rng.integers(0, 3, size=rng.integers(0, 6)))
                       for _ in range(3))
            assert (edit_distance(x, z).total
                    <= edit_distance(x, y).total + edit_distance(y, z).total)

    def test_matches_recursive_oracle_exhaustively_short(self):
        # exhaustive up to length 3 here; the acceptance suite covers <= 6
        strings = [t for n in range(4)
                   for t in itertools.product(range(3), repeat=n)]
        for ref in strings:
            for hyp in strings:
                assert edit_distance(ref, hyp).total == brute_distance(ref, hyp)


class TestCer:
    def test_all_correct(self):
        assert cer([([1, 2], [1, 2]), ([0], [0])]) == 0.0

    def test_one_sub_in_ten(self):
        assert cer([(list(range(10)), [99] + list(range(1, 10)))]) == 10.0

    def test_can_exceed_hundred(self):
        assert cer([(["a"], ["b", "b"])]) == 200.0

    def test_pooled_not_averaged(self):
        # 1 error over 1 ref char + 0 errors over 9 -> pooled 10%, averaged 50%
        assert cer([(["a"], ["b"]), (list(range(9)), list(range(9)))]) == 10.0

    def test_empty_reference_total_rejected(self):
        with pytest.raises(MetricError):
            cer([([], [1])])

    def test_aggregate_counts_addition(self):
        acc = aggregate_counts([("abc", "abd"), ("xy", "")])
        assert (acc.substitutions, acc.deletions, acc.insertions) == (1, 2, 0)
        assert acc.ref_len == 5
        assert acc.total == 3
