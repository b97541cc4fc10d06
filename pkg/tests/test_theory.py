import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.special import lambertw

from outeffhop.errors import DomainError
from outeffhop.theory import (
    CapacityParams,
    GenBoundParams,
    capacity_coefficients,
    capacity_from_coefficients,
    capacity_lower_bound,
    generalization_bound,
    lambert_w0,
    lambert_w0_of_exp,
    query_error_bound,
    retrieval_error_upper_bound,
    solve_abc,
    well_separation_threshold,
)


def bisect_w(y):
    lo, hi = -1.0, max(1.0, math.log1p(y) + 1)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * math.exp(mid) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def abc_root(a, b):
    """Bracketing root of ``a c + c ln c - b`` (increasing in c beyond e^(-a-1))."""
    f = lambda c: a * c + c * math.log(c) - b  # noqa: E731
    lo = math.exp(-a - 1.0)  # minimiser of f; f(lo) < 0 for b > 0
    hi = max(2.0 * lo, 1.0)
    while f(hi) <= 0:
        hi *= 2.0
    return brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


class TestLambert:
    def test_special_values(self):
        assert lambert_w0(0.0) == 0.0
        assert lambert_w0(math.e) == pytest.approx(1.0, abs=1e-15)
        assert lambert_w0(-1 / math.e) == -1.0

    def test_omega_constant(self):
        assert lambert_w0(1.0) == pytest.approx(bisect_w(1.0), abs=1e-14)
        assert lambert_w0(1.0) == pytest.approx(0.5671432904097838, abs=1e-15)

    def test_domain(self):
        with pytest.raises(DomainError) as exc:
            lambert_w0(-0.5)
        assert exc.value.value == -0.5
        assert exc.value.to_dict()["error"] == "domain"

    def test_residual_grid(self):
        ys = np.concatenate([-1 / math.e + np.geomspace(1e-6, 0.3678, 3000),
                             np.linspace(-0.3, 10, 3000), np.geomspace(10, 1e6, 4000)])
        worst = 0.0
        for y in ys:
            w = lambert_w0(y)
            assert w >= -1.0
            worst = max(worst, abs(w * math.exp(w) - y) / max(1.0, abs(y)))
        assert worst <= 1e-12

    @settings(max_examples=300)
    @given(st.floats(-1 / math.e, 1e8))
    def test_matches_extended_precision(self, y):
        w = lambert_w0(y)
        if y == -1 / math.e:
            # the float nearest -1/e sits just below the true branch point
            assert w == -1.0
            return
        exact = mpmath.lambertw(mpmath.mpf(y)).real
        # near the branch point dw/dy blows up, so allow a few ulps of y propagated
        cond = 4 * np.spacing(abs(y)) / float(mpmath.exp(exact) * (1 + exact))
        assert abs(w - float(exact)) <= 1e-13 * max(1.0, abs(w)) + cond

    def test_agrees_with_scipy_away_from_branch_point(self):
        for y in np.linspace(-0.3, 1e4, 500):
            assert lambert_w0(y) == pytest.approx(float(lambertw(y).real), rel=1e-13, abs=1e-14)

    def test_of_exp_large(self):
        for t in [10.0, 100.0, 699.0, 701.0, 5000.0]:
            w = lambert_w0_of_exp(t)
            assert w + math.log(w) == pytest.approx(t, rel=1e-14)
        assert lambert_w0_of_exp(699.0) == pytest.approx(lambert_w0(math.exp(699.0)), rel=1e-14)


class TestAbc:
    def test_cases(self):
        for a, b in [(0.0, math.e), (1.0, 1.0)]:
            c = solve_abc(a, b)
            assert abs(a * c + c * math.log(c) - b) <= 1e-8 * (1 + b)
            assert c == pytest.approx(abc_root(a, b), rel=1e-8)
        assert solve_abc(1.0, 1.0) == pytest.approx(1.0 / lambert_w0(math.e), rel=1e-14)

    def test_domain(self):
        with pytest.raises(DomainError):
            solve_abc(1.0, 0.0)

    @settings(max_examples=300)
    @given(st.floats(-5, 5), st.floats(1e-6, 1e3))
    def test_oracle_equivalence(self, a, b):
        assert solve_abc(a, b) == pytest.approx(abc_root(a, b), rel=1e-8)


class TestCapacity:
    def test_log_argument_is_negative_for_valid_p(self):
        # the log argument 2 m^2 (sqrt(p) - 1) / R is negative on (0, 1)
        for p in (0.01, 0.5, 0.99):
            params = CapacityParams(d=16, m=1.0, R=0.1, beta=1.0, delta=0.1, p=p)
            with pytest.raises(DomainError) as exc:
                capacity_lower_bound(params)
            assert exc.value.value == pytest.approx(2 * (math.sqrt(p) - 1) / 0.1)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            CapacityParams(d=1, m=1, R=1, beta=1, delta=0.1, p=0.5)
        with pytest.raises(ValueError):
            CapacityParams(d=4, m=1, R=1, beta=1, delta=0.1, p=1.0)

    def test_b_coefficient(self):
        params = CapacityParams(d=11, m=2.0, R=0.5, beta=3.0, delta=0.2, p=0.5)
        try:
            capacity_coefficients(params)
        except DomainError:
            pass
        assert 4 * 2.0**2 * 3.0 / (5 * 10) == pytest.approx(0.96)

    def test_from_coefficients_is_composition(self):
        a, b, d, p = -0.3, 0.8, 17, 0.25
        c = solve_abc(a, b)
        assert capacity_from_coefficients(a, b, d, p) == pytest.approx(math.sqrt(p) * c ** ((d - 1) / 4), rel=1e-14)

    def test_smaller_a_gives_larger_bound(self):
        # a shrinks as delta grows, so this is the direction of the delta dependence
        b, d, p = 0.5, 33, 0.1
        vals = [capacity_from_coefficients(a, b, d, p) for a in (0.0, -0.01, -0.1, -1.0)]
        assert all(x < y for x, y in zip(vals, vals[1:]))

    def test_exponential_in_d(self):
        a, b, p = -0.5, 0.7, 0.2
        ds = [8, 16, 32, 64]
        logs = [math.log(capacity_from_coefficients(a, b, d, p)) for d in ds]
        slope = 0.25 * math.log(solve_abc(a, b))
        for d, v in zip(ds, logs):
            assert v == pytest.approx(0.5 * math.log(p) + (d - 1) * slope, rel=1e-12)


class TestSeparation:
    def test_hand_value(self):
        assert well_separation_threshold(2, 1.0, 0.5, 1.0, 0.0) == pytest.approx(math.log(4) + 1, abs=1e-15)

    def test_delta_shift(self):
        base = well_separation_threshold(5, 1.3, 0.2, 2.0)
        assert well_separation_threshold(5, 1.3, 0.2, 2.0, 0.5) == pytest.approx(base - 0.5, abs=1e-15)

    def test_decreasing_in_beta(self):
        vals = [well_separation_threshold(8, 1.0, 0.3, b) for b in (0.5, 1, 2, 4)]
        assert all(x > y for x, y in zip(vals, vals[1:]))

    def test_errors(self):
        with pytest.raises(ValueError):
            well_separation_threshold(1, 1.0, 0.5, 1.0)


class TestErrorBound:
    def test_equal_at_zero_delta(self):
        a = retrieval_error_upper_bound("dense", 1.0, 5, 0.3, 2.0)
        assert retrieval_error_upper_bound("outeff", 1.0, 5, 0.3, 2.0, 0.0) == a

    def test_half_at_ln2(self):
        beta = 1.7
        a = retrieval_error_upper_bound("dense", 1.0, 5, 0.3, beta)
        b = retrieval_error_upper_bound("outeff", 1.0, 5, 0.3, beta, math.log(2) / beta)
        assert b == pytest.approx(a / 2, rel=1e-15)

    def test_errors(self):
        with pytest.raises(ValueError):
            retrieval_error_upper_bound("outeff", 1.0, 5, 0.3, 1.0, -0.1)
        with pytest.raises(ValueError):
            retrieval_error_upper_bound("dense", 1.0, 1, 0.3, 1.0)
        with pytest.raises(ValueError):
            retrieval_error_upper_bound("sparse", 1.0, 3, 0.3, 1.0)

    @given(st.floats(0, 10), st.floats(-5, 5), st.floats(0.01, 10))
    def test_outeff_never_looser(self, delta, dt, beta):
        assert retrieval_error_upper_bound("outeff", 1.0, 4, dt, beta, delta) <= \
            retrieval_error_upper_bound("dense", 1.0, 4, dt, beta)

    def test_query_bound_holds_everywhere(self):
        from outeffhop.hopfield import retrieve_step

        rng = np.random.default_rng(0)
        for _ in range(3000):
            d, M = int(rng.integers(2, 16)), int(rng.integers(2, 16))
            xi = rng.normal(size=(d, M))
            xi /= np.linalg.norm(xi, axis=0)
            mu = int(rng.integers(M))
            x = xi[:, mu] + rng.uniform(0, 1) * rng.normal(size=d) / np.sqrt(d)
            beta = float(10 ** rng.uniform(-1, 1))
            err = np.linalg.norm(retrieve_step("outeff", xi, x, beta) - xi[:, mu])
            assert err <= query_error_bound(xi, x, mu, beta) * (1 + 1e-12)


class TestGeneralization:
    def test_unit_counts(self):
        p = GenBoundParams(1, 1, 1, 1, 1, 1.0, 1, 1, 1, 0.05)
        assert generalization_bound(p) == pytest.approx(math.sqrt(math.log(20)), rel=1e-15)

    def test_scaling_in_n(self):
        base = dict(B_Y=1.0, B_K=1.0, B_K21=2.0, B_V=1.5, B_V21=1.0, beta=1.0, d=8, M=16, delta_prob=0.1)
        for N in (10, 100, 1000):
            lo = generalization_bound(GenBoundParams(N=N, **base))
            hi = generalization_bound(GenBoundParams(N=4 * N, **base))
            ratio = lo / hi
            drift = math.sqrt(math.log(8 * N * 16) / math.log(8 * 4 * N * 16))
            assert 2 * drift <= ratio <= 2

    def test_monotone_in_bounds(self):
        base = dict(B_Y=1.0, B_K=1.0, B_K21=1.0, B_V=1.0, B_V21=1.0, beta=1.0, d=4, M=4, N=50, delta_prob=0.1)
        ref = generalization_bound(GenBoundParams(**base))
        for key in ("B_Y", "B_K21", "B_V", "B_V21"):
            assert generalization_bound(GenBoundParams(**{**base, key: 2.0})) > ref
        # B_K enters the assumptions but not the final expression
        assert generalization_bound(GenBoundParams(**{**base, "B_K": 2.0})) == ref

    def test_validation(self):
        with pytest.raises(ValueError):
            GenBoundParams(-1, 1, 1, 1, 1, 1.0, 1, 1, 1, 0.1)
        with pytest.raises(ValueError):
            GenBoundParams(1, 1, 1, 1, 1, 1.0, 1, 1, 1, 1.0)
