import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stratalloc.model import (
    AllocationProblem,
    BadTarget,
    BoundConflict,
    EmptyStratum,
    NonFinite,
    OutOfBounds,
    PopulationFrame,
    SchemaError,
    StratumSummary,
    SurveySpec,
    ZeroTotal,
    parse_cv,
    reduce,
    validate_survey_spec,
)

from conftest import problems, random_spec


def one_stratum(Y=100.0, cv=0.1, n_min=1, N=10, s2=4.0):
    return SurveySpec((StratumSummary("A", N, [s2]),), [Y], [cv], n_min=n_min)


class TestValidation:
    def test_valid_spec_returned_unchanged(self):
        spec = one_stratum()
        assert validate_survey_spec(spec) is spec

    def test_zero_total(self):
        with pytest.raises(ZeroTotal):
            validate_survey_spec(one_stratum(Y=0.0))

    def test_n_min_above_stratum_size(self):
        with pytest.raises(BoundConflict):
            validate_survey_spec(one_stratum(n_min=11))

    @pytest.mark.parametrize("cv", [0.0, -0.05])
    def test_nonpositive_target(self, cv):
        with pytest.raises(BadTarget):
            validate_survey_spec(one_stratum(cv=cv))

    def test_empty_stratum(self):
        with pytest.raises(EmptyStratum):
            StratumSummary("A", 0, [1.0])
        with pytest.raises(EmptyStratum):
            validate_survey_spec(SurveySpec((), [1.0], [0.1]))

    def test_non_finite(self):
        with pytest.raises(NonFinite):
            validate_survey_spec(one_stratum(Y=float("nan")))
        with pytest.raises(NonFinite):
            StratumSummary("A", 3, [float("inf")])

    def test_singleton_must_have_zero_variance(self):
        with pytest.raises(ValueError):
            StratumSummary("A", 1, [2.0])

    def test_dimension_mismatch(self):
        spec = SurveySpec((StratumSummary("A", 5, [1.0, 2.0]),), [3.0, 4.0], [0.1])
        with pytest.raises(SchemaError):
            validate_survey_spec(spec)


class TestReduce:
    def test_direct_substitution(self):
        prob = reduce(one_stratum(Y=20.0, cv=0.1, N=10, s2=4.0))
        assert prob.p[0, 0] == pytest.approx(100.0, rel=1e-14)
        assert prob.q[0] == pytest.approx(10.0, rel=1e-14)

    def test_zero_dispersion(self):
        spec = SurveySpec(
            (StratumSummary("A", 3, [0.0, 0.0]), StratumSummary("B", 4, [0.0, 0.0])), [5.0, 7.0], [0.1, 0.2]
        )
        prob = reduce(spec)
        assert np.all(prob.p == 0) and np.all(prob.q == 0)

    def test_q_recomputed_independently(self):
        spec = SurveySpec(
            (StratumSummary("A", 3, [2.5, 0.3]), StratumSummary("B", 4, [1.25, 7.0])), [31.0, -12.0], [0.05, 0.2]
        )
        prob = reduce(spec)
        for j in range(2):
            q = 0.0
            for h, N in enumerate((3, 4)):
                q += prob.p[h][j] / N
            assert prob.q[j] == pytest.approx(q, rel=1e-14)

    def test_copies_bounds_and_costs(self, rng):
        spec = random_spec(rng, H=3, m=2)
        spec = SurveySpec(spec.summaries, spec.totals, spec.cv_targets, [1.0, 2.0, 3.0], n_min=1)
        prob = reduce(spec)
        assert prob.N.tolist() == spec.N.tolist()
        assert prob.costs.tolist() == [1.0, 2.0, 3.0]

    @pytest.mark.parametrize("c", [1e-3, 7.3, 1e3])
    def test_scale_invariance(self, rng, c):
        for _ in range(20):
            spec = random_spec(rng)
            j = int(rng.integers(spec.m))
            factor = np.ones(spec.m)
            factor[j] = c
            scaled = SurveySpec(
                tuple(StratumSummary(s.label, s.N, s.s2 * factor**2) for s in spec.summaries),
                spec.totals * factor,
                spec.cv_targets,
            )
            np.testing.assert_allclose(reduce(scaled).p, reduce(spec).p, rtol=1e-12, atol=0)

    def test_partition_count_matches_frame(self, rng):
        from stratalloc.stats import summarize

        labels = rng.choice(["a", "b", "c"], size=57)
        frame = PopulationFrame(tuple(f"u{i}" for i in range(57)), tuple(labels), rng.normal(size=(57, 2)))
        summaries, _ = summarize(frame)
        assert sum(s.N for s in summaries) == frame.N


class TestFrame:
    def test_duplicate_unit_in_two_strata(self):
        with pytest.raises(SchemaError, match="two strata"):
            PopulationFrame.from_records([("u1", "A", [1.0]), ("u1", "B", [2.0])])

    def test_ragged_variables(self):
        with pytest.raises(SchemaError):
            PopulationFrame.from_records([("u1", "A", [1.0]), ("u2", "A", [2.0, 3.0])])

    def test_non_finite(self):
        with pytest.raises(NonFinite):
            PopulationFrame.from_records([("u1", "A", [float("nan")])])

    def test_immutable(self):
        frame = PopulationFrame.from_records([("u1", "A", [1.0])])
        with pytest.raises(ValueError):
            frame.y[0, 0] = 3.0


class TestProblem:
    @given(problems())
    def test_census_feasible_with_zero_lhs(self, prob):
        assert prob.is_feasible(prob.N)
        assert np.all(np.abs(prob.lhs(prob.N) - prob.q) <= 1e-12 * np.maximum(1.0, prob.q))
        alloc = prob.allocation(prob.N)
        assert alloc.feasible
        assert np.all(alloc.achieved_cv_ratio < 1e-5)

    @given(problems())
    def test_q_invariants(self, prob):
        np.testing.assert_allclose(prob.q, (prob.p / prob.N[:, None]).sum(axis=0), rtol=1e-14)
        assert np.all(prob.q <= prob.p.sum(axis=0) + 1e-12)

    @given(problems(), st.data())
    def test_allocation_objective_exact(self, prob, data):
        n = [data.draw(st.integers(prob.n_min, int(N))) for N in prob.N]
        alloc = prob.allocation(n)
        assert alloc.objective == sum(c * k for c, k in zip(prob.costs, n))
        assert alloc.feasible == bool(np.all(prob.lhs(n) - prob.q <= 1 + 1e-9 * (1 + prob.q)))

    def test_out_of_bounds(self, demo2):
        with pytest.raises(OutOfBounds):
            demo2.allocation([0, 2])
        with pytest.raises(OutOfBounds):
            demo2.allocation([3, 5])
        with pytest.raises(OutOfBounds):
            demo2.allocation([1.5, 2])

    def test_bad_problem(self):
        with pytest.raises(ValueError):
            AllocationProblem.from_p(np.array([[-1.0]]), np.array([3]))
        with pytest.raises(BoundConflict):
            AllocationProblem.from_p(np.array([[1.0]]), np.array([3]), n_min=4)


class TestParseCv:
    @pytest.mark.parametrize("raw, want", [("5%", 0.05), ("0.05", 0.05), (0.05, 0.05), (" 12.5% ", 0.125), ("100%", 1.0)])
    def test_forms(self, raw, want):
        assert parse_cv(raw) == pytest.approx(want, rel=1e-15)

    @pytest.mark.parametrize("raw", ["0", "-1%", "150%", "nan", 2.0])
    def test_rejects(self, raw):
        with pytest.raises(BadTarget):
            parse_cv(raw)
