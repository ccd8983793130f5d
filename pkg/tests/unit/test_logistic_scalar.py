#!/usr/bin/env python3
"""
Test the scalar logistic equation: closed-form solution, the random
equilibrium u_g, its stationary law and time averages.
"""

import logging
import math
import sys
import os

import numpy as np
import pytest
from scipy import integrate, stats

# Add parent directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from errors import CoverageError, DomainError
from ensemble import ensemble_seeds
from logistic_scalar import (
    LogisticSolution,
    density_mode,
    density_shape,
    density_table,
    g_path,
    g_terminal_samples,
    pullback_rate,
    stationary_cdf,
    stationary_density,
    time_average_g2,
    truncation_depth,
    u_g,
    ug_path,
    ug_samples,
    ug_series,
)
from model_core import ModelParams
from noise_path import sample_path

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

QUIET = ModelParams(alpha=1.0, sigma=0.0)
NOISY = ModelParams(alpha=1.0, sigma=math.sqrt(0.5))


def test_noise_free_solution():
    """sigma = 0 reproduces g0 / sqrt(g0^2 + (1 - g0^2) exp(-2 alpha t))."""
    print("📈 Testing the noise-free logistic solution...")
    path = sample_path(1, 0.0, 5.0, 0.01)
    for g0 in (0.1, 1.0, 3.0):
        times, g = g_path(QUIET, path, g0, 5.0)
        exact = g0 / np.sqrt(g0 * g0 + (1.0 - g0 * g0) * np.exp(-2.0 * times))
        assert np.allclose(g, exact, rtol=1e-12)
    print("✅ Closed form matches the deterministic logistic curve")


def test_zero_and_bad_initial_values():
    path = sample_path(1, 0.0, 1.0, 0.01)
    _, g = g_path(NOISY, path, 0.0, 1.0)
    assert np.all(g == 0.0)
    with pytest.raises(DomainError):
        g_path(NOISY, path, -1.0, 1.0)
    with pytest.raises(CoverageError):
        g_path(NOISY, path, 1.0, 2.0)


def test_internal_time_is_monotone():
    solution = LogisticSolution(NOISY, sample_path(2, 0.0, 10.0, 0.01), 0.5)
    times, tau = solution.internal_time(10.0)
    assert tau[0] == 0.0 and np.all(np.diff(tau) > 0)
    _, g = solution.series(10.0)
    trapezoid = np.concatenate([[0.0], np.cumsum(0.5 * 0.01 * (g[1:] ** 2 + g[:-1] ** 2))])
    assert np.allclose(tau, trapezoid, rtol=1e-2, atol=1e-6)
    assert solution.at(10.0) == g[-1]


def test_truncation_depth():
    assert math.isclose(truncation_depth(QUIET, 1e-10), math.log(1e10) / 2.0)
    assert truncation_depth(ModelParams(alpha=1.0, sigma=1.4), 1e-10) > 100.0
    with pytest.raises(DomainError):
        truncation_depth(ModelParams(alpha=1.0, sigma=math.sqrt(2.0)))


def test_explicit_truncation_tolerance():
    """An explicit tolerance is used as given, never replaced by the configured one."""
    assert math.isclose(truncation_depth(QUIET, 1e-20), math.log(1e20) / 2.0)
    assert truncation_depth(QUIET, 1e-20) > truncation_depth(QUIET)
    for bad in (0.0, -1e-3, 1.5):
        with pytest.raises(DomainError):
            truncation_depth(QUIET, bad)
    with pytest.raises(DomainError):
        u_g(NOISY, sample_path(3, -40.0, 0.0, 0.01), tol=0.0)


def test_random_equilibrium_without_noise():
    print("🎯 Testing u_g at sigma = 0...")
    _, ug = ug_path(QUIET, seed=3, dt=0.01)
    assert abs(ug.value - 1.0) < 1e-10
    assert ug.tail_bound < 1e-10
    print(f"✅ u_g = {ug.value:.12f}, truncated at depth {ug.truncation_depth:g}")


def test_u_g_needs_backward_window():
    path = sample_path(3, -1.0, 0.0, 0.01)
    with pytest.raises(CoverageError):
        u_g(NOISY, path)


def test_equilibrium_is_carried_by_the_flow():
    """g(t, omega, u_g(omega)) = u_g(theta_t omega)."""
    print("🔁 Testing invariance of the random equilibrium...")
    path, ug = ug_path(NOISY, seed=5, dt=0.01, t_max=5.0)
    _, g = g_path(NOISY, path, ug.value, 5.0)
    times, series = ug_series(NOISY, path)
    forward = times >= -1e-12
    assert np.isclose(series[forward][0], ug.value, rtol=1e-9)
    assert np.allclose(g, series[forward], rtol=1e-9)
    print("✅ u_g is invariant along the path")


def test_ug_samples_match_paths():
    seeds = ensemble_seeds(9, 4)
    batch = ug_samples(NOISY, seeds, dt=0.01)
    single = [ug_path(NOISY, s, dt=0.01)[1].value for s in seeds]
    assert np.allclose(batch, single, rtol=1e-12)


def test_density_normalization():
    """The density integrates to one and is the derivative of the CDF."""
    print("📐 Testing the stationary density...")
    for sigma2 in (0.25, 0.5, 1.0, 1.5):
        params = ModelParams(alpha=1.0, sigma=math.sqrt(sigma2))
        for s in (0.3, 0.8, 1.3):
            h = 1e-5
            slope = (stationary_cdf(params, s + h) - stationary_cdf(params, s - h)) / (2 * h)
            assert math.isclose(slope, stationary_density(params, s), rel_tol=1e-6)
        assert math.isclose(stationary_cdf(params, 50.0), 1.0, rel_tol=1e-12)
        assert stationary_cdf(params, 0.0) == 0.0
    smooth = ModelParams(alpha=1.0, sigma=0.5)
    total, _ = integrate.quad(lambda s: stationary_density(smooth, s), 0.0, 10.0)
    assert abs(total - 1.0) < 1e-8
    print("✅ Density normalized")


def test_density_shape_and_mode():
    assert math.isclose(density_mode(NOISY), math.sqrt(0.5))
    assert density_shape(NOISY) == "unimodal"
    s, p = density_table(NOISY, n=801)
    assert abs(s[np.argmax(p)] - math.sqrt(0.5)) < 0.01
    flat = ModelParams(alpha=1.0, sigma=1.0)
    assert density_mode(flat) is None
    assert density_shape(flat) == "monotone-decreasing"
    _, p = density_table(ModelParams(alpha=1.0, sigma=math.sqrt(1.5)))
    assert np.all(np.diff(p) < 0)
    with pytest.raises(DomainError):
        stationary_density(QUIET, 1.0)


def test_random_equilibrium_law():
    """u_g samples follow the stationary law (KS) with E u^2 = 1 - sigma^2/(2 alpha)."""
    print("🧪 Testing the law of u_g...")
    samples = ug_samples(NOISY, ensemble_seeds(2024, 2000), dt=0.01)
    result = stats.kstest(samples, lambda s: stationary_cdf(NOISY, s))
    assert result.pvalue > 1e-3, result
    assert abs(np.mean(samples ** 2) - 0.75) < 0.06
    print(f"✅ KS D = {result.statistic:.4f}, p = {result.pvalue:.3f}, E u^2 = {np.mean(samples ** 2):.4f}")


def test_terminal_samples_match_paths():
    seeds = ensemble_seeds(4, 3)
    batch = g_terminal_samples(NOISY, seeds, 0.5, 3.0, dt=0.01)
    for seed, value in zip(seeds, batch):
        _, g = g_path(NOISY, sample_path(seed, 0.0, 3.0, 0.01), 0.5, 3.0)
        assert math.isclose(value, g[-1], rel_tol=1e-9)
    assert np.all(g_terminal_samples(NOISY, seeds, 0.0, 3.0, dt=0.01) == 0.0)


def test_time_average():
    """(1/T) int g^2 approaches 1 - sigma^2/(2 alpha) for long T."""
    print("⏱️  Testing the time average of g^2...")
    path = sample_path(17, 0.0, 2000.0, 0.01)
    average = time_average_g2(NOISY, path, 1.0, 2000.0)
    assert abs(average - 0.75) < 0.06
    assert math.isclose(time_average_g2(QUIET, path, 1.0, 10.0), 1.0, rel_tol=1e-12)
    with pytest.raises(DomainError):
        time_average_g2(NOISY, path, 0.0, 10.0)
    print(f"✅ Time average {average:.4f}")


def test_pullback_rate_without_noise():
    """Without noise the pull-back converges at rate 2 alpha."""
    path, _ = ug_path(QUIET, seed=6, dt=0.01)
    rate = pullback_rate(QUIET, path, 0.5, np.arange(2.0, 9.0))
    assert abs(rate - 2.0) < 0.05


def run_all_tests():
    """Run all logistic-scalar tests."""
    print("🧪 Logistic Scalar Tests")
    print("=" * 50)

    tests = [
        ("Noise-free Solution", test_noise_free_solution),
        ("Initial Values", test_zero_and_bad_initial_values),
        ("Internal Time", test_internal_time_is_monotone),
        ("Truncation Depth", test_truncation_depth),
        ("Explicit Tolerance", test_explicit_truncation_tolerance),
        ("u_g Without Noise", test_random_equilibrium_without_noise),
        ("u_g Coverage", test_u_g_needs_backward_window),
        ("Equilibrium Invariance", test_equilibrium_is_carried_by_the_flow),
        ("Batched u_g", test_ug_samples_match_paths),
        ("Density Normalization", test_density_normalization),
        ("Density Shape", test_density_shape_and_mode),
        ("Law of u_g", test_random_equilibrium_law),
        ("Batched Terminal Values", test_terminal_samples_match_paths),
        ("Time Average", test_time_average),
        ("Pull-back Rate", test_pullback_rate_without_noise),
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
