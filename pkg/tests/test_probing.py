import math
import warnings
from fractions import Fraction

import numpy as np
import pytest

from pdzd import ProbingPlan, SignalKind, common_period, probe_vector, signal_value, validate_orthogonality
from pdzd.probing import aligned_step, parse_kappa, sampled_mean_bias, signal_moments


def simpson(f, a, b, panels=10_000):
    x = np.linspace(a, b, 2 * panels + 1)
    y = f(x)
    h = (b - a) / (2 * panels)
    return h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())


def test_square_wave_values():
    assert signal_value(SignalKind.SQUARE, math.pi / 2) == 1.0
    assert signal_value(SignalKind.SQUARE, 3 * math.pi / 2) == -1.0
    # right-open intervals: the switching instant takes the value of the interval it starts
    assert signal_value(SignalKind.SQUARE, 0.0) == 1.0
    assert signal_value(SignalKind.SQUARE, math.pi) == -1.0


def test_sinusoid_zero_mean():
    assert abs(simpson(lambda t: signal_value(SignalKind.SINUSOID, t), 0, 2 * math.pi)) < 1e-12


def test_square_mean_square_by_simpson():
    ms = simpson(lambda t: signal_value(SignalKind.SQUARE, t) ** 2, 0, 2 * math.pi) / (2 * math.pi)
    assert ms == pytest.approx(1.0, abs=1e-9)


def test_triangle_mean_square_is_one_third():
    ms = simpson(lambda t: signal_value(SignalKind.TRIANGLE, t) ** 2, 0, 2 * math.pi) / (2 * math.pi)
    assert ms == pytest.approx(1 / 3, abs=1e-9)
    assert SignalKind.TRIANGLE.eta_d == pytest.approx(1 / 3)


@pytest.mark.parametrize("kind", list(SignalKind))
def test_moments(kind):
    m = signal_moments(kind)
    assert abs(m["mean"]) < 1e-10
    assert abs(m["mean_square"] - kind.eta_d) < 1e-8
    assert m["max"] == 1.0


def test_eta_values():
    assert SignalKind.SINUSOID.eta_d == 0.5
    assert SignalKind.SQUARE.eta_d == 1.0


def test_probe_components_bounded():
    plan = ProbingPlan.published_plan(SignalKind.SINUSOID)
    t = np.random.default_rng(0).uniform(-100, 100, 10_000)
    vals = np.array([probe_vector(plan, s) for s in t])
    assert np.all(np.abs(vals) <= 1.0)


def test_probe_vector_sinusoid_peak():
    plan = ProbingPlan("sinusoid", 1.0, 2 * math.pi, ("1",))
    np.testing.assert_allclose(probe_vector(plan, math.pi / 2), [1.0], atol=1e-15)


def test_published_plan_frequencies():
    plan = ProbingPlan.published_plan()
    assert plan.kappa == tuple(Fraction(6, 5) + Fraction(3, 2) * i for i in range(1, 8))
    assert len(set(plan.omega)) == 7
    # rational periods 1/kappa_i have lcm 10/3 (in units of eps_omega)
    assert common_period(plan) == pytest.approx(0.025 * 10 / 3)


def test_common_period_examples():
    assert common_period(ProbingPlan("sinusoid", 1, 2 * math.pi, ("1", "2")), (0, 1)) == pytest.approx(2 * math.pi)
    assert common_period(ProbingPlan("sinusoid", 1, 2 * math.pi, ("1/2", "1/3")), (0, 1)) == pytest.approx(12 * math.pi)
    assert common_period(ProbingPlan("sinusoid", 1, 0.025, ("1.2",)), (0,)) == pytest.approx(0.025 * 5 / 6)


def test_orthogonality_examples():
    rep = validate_orthogonality(ProbingPlan("sinusoid", 0.1, 1.0, ("1", "2")))
    assert rep.ok and abs(rep.cross_integrals[(0, 1)][0]) < 1e-12
    rep = validate_orthogonality(ProbingPlan("square", 0.1, 1.0, ("1", "3")))
    assert not rep.ok and any("odd" in v for v in rep.violations)
    rep = validate_orthogonality(ProbingPlan("square", 0.1, 1.0, ("2", "3")))
    assert rep.ok and abs(rep.cross_integrals[(0, 1)][0]) < 1e-8


def test_duplicate_kappa_is_a_violation():
    assert not validate_orthogonality(ProbingPlan("sinusoid", 0.1, 1.0, ("1", "1"))).ok


def test_odd_ratio_rule_agrees_with_quadrature():
    # every pair p/q with small p, q: the algebraic rule and the integral must agree
    for a in range(1, 8):
        for b in range(1, 8):
            if a == b:
                continue
            rep = validate_orthogonality(ProbingPlan("square", 0.1, 1.0, (Fraction(a), Fraction(b))))
            val, T = rep.cross_integrals[(0, 1)]
            assert rep.ok == (abs(val) <= 1e-8 * T)


def test_triangle_shares_odd_harmonic_rule():
    assert not validate_orthogonality(ProbingPlan("triangle", 0.1, 1.0, ("1", "3"))).ok
    assert validate_orthogonality(ProbingPlan("triangle", 0.1, 1.0, ("1", "2"))).ok


def test_kappa_parsing():
    assert parse_kappa("3/2") == Fraction(3, 2)
    assert parse_kappa(1.2) == Fraction(6, 5)
    assert parse_kappa("2.7") == Fraction(27, 10)
    with pytest.raises(ValueError):
        parse_kappa("-1")
    with pytest.raises(ValueError):
        parse_kappa(0)


def test_decimal_kappa_warns_with_fraction():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        parse_kappa(0.1 + 0.2)
    assert any("3/10" in str(x.message) for x in w)


def test_periodicity():
    t = np.random.default_rng(2).uniform(-50, 50, 1000)
    for kind in SignalKind:
        a = np.array([signal_value(kind, s) for s in t])
        b = np.array([signal_value(kind, s + 2 * math.pi) for s in t])
        tol = 0.0 if kind is SignalKind.SQUARE else 1e-12
        # square: compare away from switching instants, where float rounding of t + 2 pi can flip a side
        if kind is SignalKind.SQUARE:
            keep = np.abs(np.sin(t)) > 1e-9
            a, b = a[keep], b[keep]
        assert np.max(np.abs(a - b)) <= tol


def test_aligned_step_removes_sampling_bias():
    plan = ProbingPlan("square", 0.025, 0.025, ("7/8", "5/4", "3/2", "1", "6/5", "4/3", "8/7"))
    h = aligned_step(plan)
    assert sampled_mean_bias(plan, h) == 0.0
    assert h <= plan.max_step(40)
    assert plan.eps_omega / h == pytest.approx(96)
    assert sampled_mean_bias(plan, plan.eps_omega / 63) == pytest.approx(1 / 63)


def test_sinusoid_has_no_sampling_bias():
    plan = ProbingPlan("sinusoid", 0.025, 0.025, ("1", "3/2"))
    assert sampled_mean_bias(plan, plan.eps_omega / 77) == 0.0
