import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hdmulti.prob import (
    CountVector,
    ProbVector,
    RngSpec,
    SortedNull,
    lp_distance,
    read_counts,
    read_prob_vector,
    sample_counts,
    sample_counts_batch,
    tv_distance,
    two_thirds_norm,
)


@st.composite
def simplex(draw, d=None, min_d=1, max_d=30):
    if d is None:
        d = draw(st.integers(min_d, max_d))
    w = draw(st.lists(st.floats(0, 1, allow_nan=False), min_size=d, max_size=d))
    w = np.asarray(w)
    if w.sum() == 0:
        w[0] = 1.0
    return w / w.sum()


@st.composite
def simplex_pair(draw, count=2):
    d = draw(st.integers(1, 30))
    return tuple(draw(simplex(d=d)) for _ in range(count))


class TestProbVector:
    def test_renormalizes_small_drift(self):
        p = ProbVector([0.5, 0.5 + 5e-7])
        assert abs(p.probs.sum() - 1.0) <= 1e-12

    @pytest.mark.parametrize("bad", [[0.5, 0.6], [-0.1, 1.1], [0.0, 0.0], [], [np.nan, 1.0]])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            ProbVector(bad)

    def test_immutable(self):
        p = ProbVector([0.25] * 4)
        with pytest.raises(ValueError):
            p.probs[0] = 1.0

    def test_sorted_null_stable_ties(self):
        s = SortedNull.of([0.2, 0.3, 0.2, 0.3])
        assert s.perm.tolist() == [1, 3, 0, 2]
        assert np.all(np.diff(s.sorted_probs) <= 0)

    def test_sorted_null_rejects_bad_perm(self):
        with pytest.raises(ValueError):
            SortedNull(ProbVector([0.6, 0.4]), perm=[1, 0])
        with pytest.raises(ValueError):
            SortedNull(ProbVector([0.6, 0.4]), perm=[0, 0])


class TestCountVector:
    def test_sample_size(self):
        assert CountVector([3, 0, 2]).n == 5

    @pytest.mark.parametrize("bad", [[0, 0], [-1, 2], [1.5, 1], []])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            CountVector(bad)


class TestSampling:
    def test_point_mass(self):
        assert sample_counts([1, 0, 0], 5, RngSpec(1)).counts.tolist() == [5, 0, 0]

    def test_fair_coin_band(self):
        x = sample_counts([0.5, 0.5], 10**6, RngSpec(11))
        assert 0.497 <= x.counts[1] / x.n <= 0.503

    def test_deterministic(self):
        p = ProbVector(np.arange(1, 11) / 55)
        a = sample_counts(p, 300, RngSpec(5, 3))
        b = sample_counts(p, 300, RngSpec(5, 3))
        c = sample_counts(p, 300, RngSpec(5, 4))
        assert np.array_equal(a.counts, b.counts)
        assert not np.array_equal(a.counts, c.counts)

    def test_substreams_are_distinct(self):
        root = RngSpec(9)
        assert root.substream(1, 0) != root.substream(0, 1)
        assert root.substream(1, 2).stream == (1 << 32) + 2

    @pytest.mark.parametrize("p", [[0.5, 0.5], [0.7, 0.2, 0.1], [0.1, 0.2, 0.3, 0.4], [0.01, 0.99]])
    def test_sampler_goodness_of_fit(self, p):
        # 1e5 draws aggregated through many small samples
        batch = sample_counts_batch(p, 100, 1000, RngSpec(2024))
        total = batch.sum(axis=0)
        assert total.sum() == 10**5
        pvalue = stats.chisquare(total, 10**5 * np.asarray(p)).pvalue
        assert pvalue > 1e-4

    def test_batch_rows_sum_to_n(self):
        batch = sample_counts_batch([0.3, 0.3, 0.4], 17, 50, RngSpec(0))
        assert batch.shape == (50, 3)
        assert np.all(batch.sum(axis=1) == 17)


class TestDistances:
    def test_examples(self):
        p, q = [0.5, 0.5], [0.8, 0.2]
        assert tv_distance(p, p) == 0
        assert tv_distance([1, 0], [0, 1]) == 1
        assert tv_distance(p, q) == pytest.approx(0.3, abs=1e-15)
        assert lp_distance(p, q, "l1") == pytest.approx(0.6, abs=1e-15)
        assert lp_distance(p, q, "l2") == pytest.approx(0.18, abs=1e-15)
        assert lp_distance(q, q, "l2") == 0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            tv_distance([1.0], [0.5, 0.5])
        with pytest.raises(ValueError):
            lp_distance([0.5, 0.5], [0.5, 0.5], "linf")

    @given(simplex_pair())
    def test_tv_is_half_l1(self, pq):
        p, q = pq
        assert abs(tv_distance(p, q) - 0.5 * lp_distance(p, q, "l1")) <= 1e-12

    @given(simplex_pair(count=3))
    def test_tv_metric(self, pqr):
        p, q, r = pqr
        assert abs(tv_distance(p, q) - tv_distance(q, p)) <= 1e-12
        assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-12
        assert 0 <= tv_distance(p, q) <= 1 + 1e-12


class TestTwoThirdsNorm:
    def test_examples(self):
        assert two_thirds_norm([0.25] * 4) == pytest.approx(2.0, rel=1e-12)
        assert two_thirds_norm([1.0, 0, 0]) == 1.0
        assert two_thirds_norm([0.5, 0.5]) == pytest.approx(math.sqrt(2), rel=1e-12)

    @pytest.mark.parametrize("d", [1, 2, 7, 100, 999, 10**4])
    def test_uniform_is_sqrt_d(self, d):
        assert two_thirds_norm(np.full(d, 1 / d)) == pytest.approx(math.sqrt(d), rel=1e-10)

    @given(simplex())
    def test_bounds(self, p):
        v = two_thirds_norm(p)
        assert 1 - 1e-9 <= v <= math.sqrt(p.size) * (1 + 1e-9)


class TestFiles:
    def test_plain_lines(self, tmp_path):
        f = tmp_path / "p.txt"
        f.write_text("0.2\n0.3\n\n0.5\n")
        assert read_prob_vector(f).probs.tolist() == pytest.approx([0.2, 0.3, 0.5])

    def test_csv_column(self, tmp_path):
        f = tmp_path / "p.csv"
        f.write_text("label,p\na,0.25\nb,0.75\n")
        assert read_prob_vector(f).probs.tolist() == pytest.approx([0.25, 0.75])

    def test_bad_sum_rejected(self, tmp_path):
        f = tmp_path / "p.txt"
        f.write_text("0.2\n0.2\n")
        with pytest.raises(ValueError):
            read_prob_vector(f)

    def test_counts(self, tmp_path):
        f = tmp_path / "x.csv"
        f.write_text("cat,count\na,3\nb,0\nc,2\n")
        assert read_counts(f).counts.tolist() == [3, 0, 2]
        g = tmp_path / "x.txt"
        g.write_text("1\n2\n")
        assert read_counts(g).n == 3
