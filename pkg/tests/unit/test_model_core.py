#!/usr/bin/env python3
"""
Test parameters, drift, Jacobian and regime classification.

Closed-form drift values, ray invariance, the sphere identity and the
canonical reduction of every sign pattern.
"""

import itertools
import logging
import sys
import os

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from deterministic_flow import q_star
from errors import DomainError
from model_core import (
    CANONICAL_PATTERNS,
    ModelParams,
    classify_regime,
    drift,
    is_case_one,
    jacobian,
    norm_generator,
    reduced_sphere_drift,
    sign_pattern,
    sphere_derivative,
    sphere_residual,
)

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

SYMMETRIC = ModelParams(alpha=1.0, d=(0.0, 0.0, 0.0))
MIXED = ModelParams(alpha=1.0, sigma=1.0, d=(0.5, -0.2, 0.3))


def test_drift_closed_forms():
    """Drift at the origin, at e1, at (1,1,1) and along the Q* ray."""
    print("📐 Testing drift closed forms...")
    assert np.array_equal(drift(SYMMETRIC, [0, 0, 0]), np.zeros(3))
    assert np.array_equal(drift(SYMMETRIC, [1, 0, 0]), np.zeros(3))
    assert np.allclose(drift(SYMMETRIC, [1, 1, 1]), [-2.0, -2.0, -2.0], atol=1e-15)
    q = np.full(3, 1.0 / np.sqrt(3.0))
    assert np.allclose(drift(SYMMETRIC, 2.0 * q), -6.0 * q, atol=1e-14)
    print("✅ Drift matches the closed forms")


def test_drift_rejects_non_finite():
    print("🚫 Testing non-finite input...")
    with pytest.raises(DomainError):
        drift(SYMMETRIC, [np.nan, 0.0, 1.0])
    with pytest.raises(DomainError):
        jacobian(SYMMETRIC, [np.inf, 0.0, 1.0])
    print("✅ Non-finite states rejected")


def test_ray_invariance():
    """drift(sQ) = alpha s (1 - s^2) Q for unit equilibria Q."""
    print("📏 Testing ray invariance...")
    for q in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]), q_star(MIXED)):
        for s in (0.1, 0.7, 1.0, 1.9, 3.0):
            expected = MIXED.alpha * s * (1 - s * s) * q
            assert np.allclose(drift(MIXED, s * q), expected, rtol=1e-12, atol=1e-13)
    print("✅ Drift is parallel to equilibrium rays")


def test_jacobian_finite_differences():
    """Central differences converge at second order to F(x) v."""
    print("🧮 Testing Jacobian against central differences...")
    rng = np.random.default_rng(7)
    for _ in range(5):
        x = rng.uniform(0.1, 1.5, 3)
        v = rng.normal(size=3)
        errors = []
        for h in (1e-3, 1e-4):
            fd = (drift(MIXED, x + h * v) - drift(MIXED, x - h * v)) / (2 * h)
            errors.append(np.linalg.norm(fd - jacobian(MIXED, x) @ v))
        ratio = errors[0] / errors[1]
        assert 50 <= ratio <= 200, ratio
    print("✅ Error ratio near 100 per decade of h")


def test_jacobian_vectorized():
    states = np.array([[1.0, 0.0, 0.0], [0.3, 0.4, 0.5]])
    batch = jacobian(MIXED, states)
    assert batch.shape == (2, 3, 3)
    assert np.allclose(batch[1], jacobian(MIXED, states[1]))


def test_sphere_residual_examples():
    assert sphere_residual([1, 0, 0]) == 0.0
    assert sphere_residual([0, 0, 0]) == -1.0
    assert sphere_residual([1, 1, 1]) == 2.0


def test_sphere_derivative_identity():
    """<grad L, b> = -2 alpha |x|^2 L(x)."""
    print("🌐 Testing the sphere identity...")
    rng = np.random.default_rng(11)
    x = rng.uniform(0.0, 2.0, size=(200, 3))
    lhs = sphere_derivative(MIXED, x)
    rhs = -2.0 * MIXED.alpha * np.sum(x * x, axis=1) * sphere_residual(x)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)
    print("✅ Sphere identity holds")


def test_norm_generator_on_sphere():
    """On the unit sphere the generator of |x|^2 reduces to sigma^2."""
    y = np.array([0.6, 0.0, 0.8])
    assert np.isclose(norm_generator(MIXED, y), MIXED.sigma2)
    assert norm_generator(MIXED, 3.0 * y) < 0


def test_reduced_sphere_drift_matches_full_drift():
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = rng.uniform(0.05, 1.0, 3)
        x /= np.linalg.norm(x)
        assert np.allclose(reduced_sphere_drift(MIXED, x[:2]), drift(MIXED, x)[:2], atol=1e-14)


def test_classify_examples():
    """Representative parameters of the canonical cases."""
    print("🗂️  Testing regime classification...")
    cases = [
        ((0.0, 0.0, 0.0), (1, 1, 1), "I"),
        ((-2.0, 0.0, -3.0), (-1, 1, -1), "II"),
        ((-1.0, 0.0, 0.0), (0, 1, 1), "IIIa"),
        ((-1.0, -1.0, -1.0), (0, 0, 0), "V"),
    ]
    for d, pattern, case in cases:
        regime = classify_regime(ModelParams(alpha=1.0, d=d))
        assert regime.sign_pattern == pattern
        assert regime.canonical_case == case
        print(f"  d={d}: {regime.symbols} -> {case}")
    print("✅ Classification matches")


def test_every_pattern_reduces_by_its_witness():
    """The reported permutation and time flip map the raw pattern onto the canonical one."""
    counts = {}
    for m in itertools.product((-1.0, 0.0, 1.0), repeat=3):
        params = ModelParams(alpha=1.0, d=tuple(v - 1.0 for v in m))
        regime = classify_regime(params)
        assert regime.sign_pattern == tuple(int(v) for v in m)
        assert regime.canonical_pattern() == CANONICAL_PATTERNS[regime.canonical_case]
        counts[regime.canonical_case] = counts.get(regime.canonical_case, 0) + 1
    assert counts["V"] == 1
    assert counts["I"] == 2
    assert counts["IV"] == 6
    assert set(counts) == set(CANONICAL_PATTERNS)


def test_case_one_predicate():
    assert is_case_one(SYMMETRIC)
    assert is_case_one(ModelParams(alpha=1.0, d=(-2.0, -2.0, -2.0)))
    assert not is_case_one(ModelParams(alpha=1.0, d=(-1.0, -1.0, -1.0)))
    assert not is_case_one(ModelParams(alpha=1.0, d=(-2.0, 0.0, -3.0)))
    with pytest.raises(DomainError):
        q_star(ModelParams(alpha=1.0, d=(-1.0, -1.0, -1.0)))


def test_zero_tolerance():
    near = ModelParams(alpha=1.0, d=(-1.0 + 1e-13, 0.0, 0.0))
    assert sign_pattern(near) == (0, 1, 1)
    assert sign_pattern(near, zero_tol=1e-14) == (1, 1, 1)


def test_params_records():
    """Flat records round into parameters and back."""
    params = ModelParams.from_record({"alpha": "1", "sigma": "0.5", "d1": "0.5", "d2": "-0.2", "d3": "0.3"})
    assert params.alpha == 1.0 and params.sigma == 0.5
    assert params.d == (0.5, -0.2, 0.3)
    assert np.allclose(params.m, [1.5, 0.8, 1.3])
    assert np.isclose(params.c, 1.0 - 0.125)
    assert ModelParams.from_record(params.to_record()) == params
    assert np.isclose(ModelParams.from_record({"alpha": 2, "sigma2": 2.0}).sigma2, 2.0)
    with pytest.raises(DomainError):
        ModelParams.from_record({"sigma": "1"})
    with pytest.raises(DomainError):
        ModelParams.from_record({"alpha": "one"})
    with pytest.raises(ValueError):
        ModelParams(alpha=0.0)
    with pytest.raises(ValueError):
        ModelParams(alpha=1.0, sigma=-0.1)


def test_with_sigma2():
    params = SYMMETRIC.with_sigma2(3.0)
    assert np.isclose(params.sigma2, 3.0)
    assert params.d == SYMMETRIC.d
    with pytest.raises(DomainError):
        SYMMETRIC.with_sigma2(-1.0)


def run_all_tests():
    """Run all model-core tests."""
    print("🧪 Model Core Tests")
    print("=" * 50)

    tests = [
        ("Drift Closed Forms", test_drift_closed_forms),
        ("Non-finite Input", test_drift_rejects_non_finite),
        ("Ray Invariance", test_ray_invariance),
        ("Jacobian Finite Differences", test_jacobian_finite_differences),
        ("Vectorized Jacobian", test_jacobian_vectorized),
        ("Sphere Residual", test_sphere_residual_examples),
        ("Sphere Identity", test_sphere_derivative_identity),
        ("Norm Generator", test_norm_generator_on_sphere),
        ("Reduced Sphere Drift", test_reduced_sphere_drift_matches_full_drift),
        ("Classification Examples", test_classify_examples),
        ("Canonical Witnesses", test_every_pattern_reduces_by_its_witness),
        ("Case I Predicate", test_case_one_predicate),
        ("Zero Tolerance", test_zero_tolerance),
        ("Parameter Records", test_params_records),
        ("Noise Override", test_with_sigma2),
    ]

    results = []

    for test_name, test_func in tests:
        try:
            test_func()
            results.append((test_name, True))
        except AssertionError as e:
            print(f"❌ {test_name} failed: {e}")
            results.append((test_name, False))
        except Exception as e:
            print(f"❌ {test_name} failed with exception: {e}")
            results.append((test_name, False))

    print("\n📊 Test Results Summary")
    print("=" * 50)

    all_passed = True
    for test_name, passed in results:
        status = "✅ PASS" if passed else "❌ FAIL"
        print(f"{test_name}: {status}")
        if not passed:
            all_passed = False

    print(f"\nOverall: {'✅ ALL TESTS PASSED' if all_passed else '❌ SOME TESTS FAILED'}")
    return all_passed


if __name__ == "__main__":
    result = run_all_tests()
    exit(0 if result else 1)
