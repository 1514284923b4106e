import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stratalloc.model import OutOfBounds, PopulationFrame, StratumSummary, SurveySpec, reduce
from stratalloc.stats import evaluate, summarize, variance_of_total

from conftest import random_allocation, random_spec


def frame_of(groups):
    ids, labels, ys = [], [], []
    for lab, values in groups:
        for v in values:
            ids.append(f"u{len(ids)}")
            labels.append(lab)
            ys.append([v])
    return PopulationFrame(tuple(ids), tuple(labels), np.array(ys))


def sign(x, tol=1e-9):
    return 0 if abs(x) <= tol else (1 if x > 0 else -1)


class TestSummarize:
    def test_textbook_variance(self):
        (s,), Y = summarize(frame_of([("A", [1, 2, 3])]))
        assert (s.N, s.mean[0], s.s2[0], Y[0]) == (3, 2.0, 1.0, 6.0)

    def test_singleton(self):
        (s,), Y = summarize(frame_of([("A", [7])]))
        assert s.s2[0] == 0.0 and Y[0] == 7.0

    def test_constant_strata(self):
        out, Y = summarize(frame_of([("A", [0, 0, 0]), ("B", [5, 5])]))
        assert [s.s2[0] for s in out] == [0.0, 0.0]
        assert Y[0] == 10.0

    def test_first_appearance_order(self):
        frame = PopulationFrame(("a", "b", "c", "d"), ("z", "y", "z", "x"), np.array([1.0, 2.0, 3.0, 4.0]))
        out, _ = summarize(frame)
        assert [s.label for s in out] == ["z", "y", "x"]
        assert [s.N for s in out] == [2, 1, 1]

    def test_divisor_switch(self):
        (s,), _ = summarize(frame_of([("A", [1, 2, 3, 6])]), "n")
        assert s.s2[0] == pytest.approx(np.var([1, 2, 3, 6]), rel=1e-14)
        with pytest.raises(ValueError):
            summarize(frame_of([("A", [1, 2])]), "bogus")

    @given(st.lists(st.tuples(st.sampled_from("abc"), st.floats(-1e3, 1e3)), min_size=1, max_size=40))
    def test_matches_numpy(self, rows):
        frame = frame_of([(lab, [v]) for lab, v in rows])
        out, Y = summarize(frame)
        assert sum(s.N for s in out) == len(rows)
        assert Y[0] == pytest.approx(math.fsum(v for _, v in rows), abs=1e-9)
        for s in out:
            vals = [v for lab, v in rows if lab == s.label]
            want = np.var(vals, ddof=1) if len(vals) > 1 else 0.0
            assert s.s2[0] == pytest.approx(want, rel=1e-9, abs=1e-9)


class TestVariance:
    def test_direct_substitution(self):
        spec = SurveySpec((StratumSummary("A", 4, [1.0]),), [10.0], [0.1])
        assert variance_of_total(spec, [2])[0] == pytest.approx(4.0, rel=1e-15)

    def test_census_zero(self, rng):
        for _ in range(20):
            spec = random_spec(rng)
            assert np.all(variance_of_total(spec, spec.N) == 0.0)

    def test_two_ways(self):
        # S^2 chosen so that p = (2, 2) with Y = 10, cv = 0.1
        spec = SurveySpec((StratumSummary("A", 3, [2 / 9]), StratumSummary("B", 4, [2 / 16])), [10.0], [0.1])
        prob = reduce(spec)
        v = variance_of_total(spec, [2, 2])
        via_lhs = (prob.lhs([2, 2]) - prob.q + 0.0) * (spec.totals * spec.cv_targets) ** 2
        np.testing.assert_allclose(v, via_lhs, rtol=1e-12)
        # hand value: 9*(2/9)/2*(1/3) + 16*(2/16)/2*(1/2)
        assert v[0] == pytest.approx(1 / 3 + 1 / 2, rel=1e-12)

    def test_out_of_bounds(self):
        spec = SurveySpec((StratumSummary("A", 4, [1.0]),), [10.0], [0.1])
        for bad in ([0], [5], [2.5], [1, 1]):
            with pytest.raises(OutOfBounds):
                variance_of_total(spec, bad)

    @given(st.integers(0, 10_000))
    def test_monotone_in_each_stratum(self, seed):
        rng = np.random.default_rng(seed)
        spec = random_spec(rng, N_max=15)
        s2 = spec.s2.copy()
        s2[rng.random(s2.shape) < 0.3] = 0.0
        spec = SurveySpec(
            tuple(StratumSummary(s.label, s.N, s2[h] if s.N > 1 else 0 * s2[h]) for h, s in enumerate(spec.summaries)),
            spec.totals,
            spec.cv_targets,
        )
        n = np.array([rng.integers(1, N + 1) for N in spec.N])
        h = int(rng.integers(spec.H))
        if n[h] == spec.N[h]:
            return
        up = n.copy()
        up[h] += 1
        v0, v1 = variance_of_total(spec, n), variance_of_total(spec, up)
        s2h = spec.summaries[h].s2
        assert np.all(v1[s2h > 0] < v0[s2h > 0])
        np.testing.assert_allclose(v1[s2h == 0], v0[s2h == 0], rtol=1e-12, atol=1e-12)


class TestEvaluate:
    def test_census(self, rng):
        spec = random_spec(rng, H=3, m=2)
        ev = evaluate(reduce(spec), spec, spec.N)
        assert np.all(ev.cv == 0)
        np.testing.assert_allclose(ev.constraint_lhs, 0.0, atol=1e-12)

    def test_zero_dispersion(self):
        spec = SurveySpec((StratumSummary("A", 5, [0.0]), StratumSummary("B", 6, [0.0])), [3.0], [0.05])
        ev = evaluate(reduce(spec), spec, [2, 3])
        assert ev.constraint_lhs[0] == 0.0 and ev.cv[0] == 0.0

    def test_cv_definition(self, rng):
        spec = random_spec(rng, H=4, m=3)
        prob = reduce(spec)
        n = random_allocation(rng, prob)
        ev = evaluate(prob, spec, n)
        np.testing.assert_allclose(ev.cv, np.sqrt(ev.variance_of_total) / np.abs(spec.totals), rtol=1e-15)

    def test_sign_equivalence(self):
        rng = np.random.default_rng(7)
        checked = 0
        for _ in range(1000):
            spec = random_spec(rng)
            prob = reduce(spec)
            n = random_allocation(rng, prob)
            ev = evaluate(prob, spec, n)
            for j in range(spec.m):
                a = sign(ev.constraint_lhs[j] - 1.0)
                b = sign(ev.cv[j] / spec.cv_targets[j] - 1.0)
                if a and b:
                    assert a == b
                    checked += 1
        assert checked > 1000

    def test_summarize_then_reduce_matches_external_summaries(self, rng):
        y = rng.lognormal(size=(40, 2))
        labels = tuple(rng.choice(["a", "b", "c"], size=40))
        frame = PopulationFrame(tuple(f"u{i}" for i in range(40)), labels, y)
        summaries, totals = summarize(frame)
        ext = []
        for s in summaries:
            rows = y[np.array(labels) == s.label]
            ext.append(StratumSummary(s.label, len(rows), rows.var(axis=0, ddof=1) if len(rows) > 1 else [0, 0]))
        a = reduce(SurveySpec(tuple(summaries), totals, [0.05, 0.1]))
        b = reduce(SurveySpec(tuple(ext), y.sum(axis=0), [0.05, 0.1]))
        np.testing.assert_allclose(a.p, b.p, rtol=1e-12)
        np.testing.assert_allclose(a.q, b.q, rtol=1e-12)
