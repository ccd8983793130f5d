#!/usr/bin/env python3
"""
Test pull-back limits, random equilibria, Lyapunov exponents, random
periodic solutions, cone invariance and the ergodic census.
"""

import logging
import math
import sys
import os

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from deterministic_flow import StepControl, first_integral_values, h_star, integrate_flow, period_of_orbit, periodic_orbit
from errors import CoverageError, DomainError
from logistic_scalar import truncation_depth, ug_path
from model_core import ModelParams
from noise_path import sample_path
from random_dynamics import (
    cone_invariance_check,
    cone_starts,
    crps,
    ergodic_census,
    lyapunov_analytic,
    lyapunov_numeric,
    pullback_limit,
    pullback_point,
    random_equilibrium,
    random_equilibrium_trajectory,
)
from sde_engine import SchemeSpec, integrate_sde

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

X0 = [0.3, 0.4, 0.5]
SYMMETRIC = ModelParams(alpha=1.0, sigma=0.5, d=(0.0, 0.0, 0.0))
MIXED = ModelParams(alpha=1.0, sigma=0.7, d=(0.5, -0.2, 0.3))
CASE_II = ModelParams(alpha=1.0, sigma=math.sqrt(0.5), d=(-2.0, 0.0, -3.0))


def _crps_path(params: ModelParams, h: float, seed: int, dt: float = 0.01):
    mean_period = period_of_orbit(params, h) * params.alpha / params.c
    back = 2.0 * truncation_depth(params) + 12.0 * mean_period
    forward = math.ceil(period_of_orbit(params, h) / dt) * dt
    return sample_path(seed, -back, forward, dt)


def test_pullback_without_noise_is_the_flow():
    print("⏪ Testing the pull-back at sigma = 0...")
    params = ModelParams(alpha=1.0, d=(0.5, -0.2, 0.3))
    path = sample_path(1, -3.0, 0.0, 0.01)
    flow = integrate_flow(params, X0, 3.0, StepControl(h=1e-3, tol=None)).final_state
    assert np.allclose(pullback_point(params, path, X0, 3.0), flow, atol=1e-7)
    print("✅ Pull-back equals the deterministic flow")


def test_pullback_converges_to_random_equilibrium():
    """Case II: pull-back from an interior point settles on u_g(omega) e1."""
    print("🎯 Testing the pull-back limit in case II...")
    path = sample_path(2, -60.0, 0.0, 0.01)
    sample = pullback_limit(CASE_II, path, X0, 40.0)
    assert sample.kind == "point"
    assert sample.converged and not sample.inconclusive
    assert sample.deterministic_limit.label == "e1"
    gap = np.linalg.norm(np.subtract(sample.points[-1], sample.analytic_point))
    assert gap < 1e-4
    assert np.isclose(sample.analytic_point[0], sample.u_g)
    print(f"✅ Limit {sample.points[-1]} within {gap:.2e} of u_g e1")


def test_pullback_limit_forgets_the_start():
    """Two interior starts in the basin of e1 pull back to the same point on one path."""
    path = sample_path(2, -60.0, 0.0, 0.01)
    tol = 1e-4
    first = pullback_limit(CASE_II, path, X0, 40.0, tol=tol)
    second = pullback_limit(CASE_II, path, [1.2, 0.2, 0.6], 40.0, tol=tol)
    assert first.converged and second.converged
    assert first.deterministic_limit.label == second.deterministic_limit.label == "e1"
    gap = np.linalg.norm(np.subtract(first.points[-1], second.points[-1]))
    assert gap < 2.0 * tol, gap
    with pytest.raises(DomainError):
        pullback_limit(CASE_II, path, X0, 40.0, tol=0.0)


def test_pullback_collapses_under_strong_noise():
    params = ModelParams(alpha=1.0, sigma=math.sqrt(3.5))
    path = sample_path(3, -120.0, 0.0, 0.01)
    sample = pullback_limit(params, path, X0, 120.0)
    assert sample.kind == "origin" and sample.converged
    assert sample.analytic_point == (0.0, 0.0, 0.0)


def test_pullback_needs_window():
    path = sample_path(2, -5.0, 0.0, 0.01)
    with pytest.raises(CoverageError):
        pullback_limit(CASE_II, path, X0, 40.0)


def test_random_equilibrium_points():
    print("📍 Testing random equilibria...")
    path, ug = ug_path(SYMMETRIC, seed=4, dt=0.01)
    assert np.array_equal(random_equilibrium(SYMMETRIC, path, "O"), np.zeros(3))
    assert np.allclose(random_equilibrium(SYMMETRIC, path, "e2"), [0.0, ug.value, 0.0])
    q = random_equilibrium(SYMMETRIC, path, "Qstar")
    assert np.allclose(q, ug.value * np.full(3, 1.0 / math.sqrt(3.0)))
    quiet = ModelParams(alpha=1.0)
    assert np.array_equal(random_equilibrium(quiet, path, [0.0, 0.0, 1.0]), [0.0, 0.0, 1.0])
    with pytest.raises(DomainError):
        random_equilibrium(SYMMETRIC, path, [0.5, 0.5, 0.5])
    with pytest.raises(DomainError):
        random_equilibrium(ModelParams(alpha=1.0, sigma=2.0), path, "e1")
    print(f"✅ u_g = {ug.value:.6f}")


def test_random_equilibrium_solves_the_sde():
    """u_g(theta_t omega) Q* agrees with a fine Milstein run started at u_g(omega) Q*."""
    path, ug = ug_path(SYMMETRIC, seed=5, dt=1e-3, t_max=2.0)
    record = random_equilibrium_trajectory(SYMMETRIC, path, "Qstar", 2.0)
    assert np.allclose(record.states[0], random_equilibrium(SYMMETRIC, path, "Qstar"))
    direct = integrate_sde(SYMMETRIC, path, record.states[0], 2.0, SchemeSpec(dt=1e-3))
    assert np.linalg.norm(direct.final_state - record.final_state) < 2e-2
    radial = record.states / np.linalg.norm(record.states, axis=1)[:, None]
    assert np.allclose(radial, 1.0 / math.sqrt(3.0))


def test_lyapunov_analytic_values():
    print("📐 Testing closed-form Lyapunov exponents...")
    c = MIXED.c
    assert np.allclose(lyapunov_analytic(MIXED, "O"), [c, c, c])
    assert np.allclose(lyapunov_analytic(MIXED, "e1"), [-2 * c, 1.5 * c, -0.8 * c])
    assert np.allclose(lyapunov_analytic(MIXED, "e2"), [-1.5 * c, -2 * c, 1.3 * c])
    assert np.allclose(lyapunov_analytic(MIXED, "e3"), [0.8 * c, -1.3 * c, -2 * c])
    with pytest.raises(DomainError):
        lyapunov_analytic(MIXED, "Q")
    with pytest.raises(DomainError):
        lyapunov_analytic(ModelParams(alpha=1.0, sigma=1.5), "e1")
    print("✅ Exponents match the closed forms")


def test_lyapunov_numeric_on_origin():
    """At the origin the exponent is alpha - sigma^2/2 plus a sigma W_T / T fluctuation."""
    estimate = lyapunov_numeric(MIXED, 11, "O", 0, t_end=200.0, dt=0.02, n_seeds=10)
    assert estimate.n_seeds == 10 and len(estimate.values) == 10
    assert abs(estimate.value - MIXED.c) < 0.06
    assert estimate.renormalization_count == 10 * 200


def test_lyapunov_numeric_on_ray():
    """Along u_g(theta_t omega) e1 each axis grows at its closed-form rate (-2c, m1 c/alpha, -m2 c/alpha)."""
    print("📈 Testing the numeric Lyapunov triple on the e1 ray...")
    expected = lyapunov_analytic(MIXED, "e1")
    for axis in range(3):
        estimate = lyapunov_numeric(MIXED, 12, "e1", axis, t_end=500.0, dt=0.02, n_seeds=12)
        assert abs(estimate.value - expected[axis]) < 0.1, (axis, estimate.value, expected[axis])
        assert estimate.standard_error > 0
        print(f"   axis {axis}: {estimate.value:.4f} ± {estimate.standard_error:.4f}, analytic {expected[axis]:.4f}")
    print("✅ Numeric triple matches the closed form")


def test_lyapunov_at_critical_noise():
    """At sigma^2 = 2 alpha the origin exponent vanishes; the estimate stays within its standard error band."""
    critical = ModelParams(alpha=1.0, sigma=math.sqrt(2.0), d=(0.5, -0.2, 0.3))
    assert abs(lyapunov_analytic(critical, "O")[0]) < 1e-12
    estimate = lyapunov_numeric(critical, 21, "O", 0, t_end=400.0, dt=0.02, n_seeds=20)
    assert 0 < estimate.standard_error < 0.03
    assert abs(estimate.value) < 4.0 * estimate.standard_error, (estimate.value, estimate.standard_error)
    for sigma2, sign in ((1.0, 1.0), (3.0, -1.0)):
        params = ModelParams(alpha=1.0, sigma=math.sqrt(sigma2), d=(0.5, -0.2, 0.3))
        side = lyapunov_numeric(params, 21, "O", 0, t_end=400.0, dt=0.02, n_seeds=20)
        assert sign * side.value > 4.0 * side.standard_error


def test_crps_without_noise():
    """With sigma = 0 the random period is N(h) and the solution is Gamma(h) itself."""
    params = ModelParams(alpha=1.0)
    h = h_star(params) + 1.0
    sample = crps(params, _crps_path(params, h, seed=6), h)
    assert math.isclose(sample.u_g, 1.0, rel_tol=1e-9)
    assert np.allclose(sample.periods, sample.period_N, rtol=1e-6)
    assert sample.max_residual < 1e-5


def test_crps_identities():
    """psi_h(t + T_h) = psi_h(t) and the cocycle identity hold on a noisy path."""
    print("🔄 Testing random periodic solutions...")
    h = h_star(SYMMETRIC) + 1.0
    sample = crps(SYMMETRIC, _crps_path(SYMMETRIC, h, seed=7), h)
    assert sample.identity_residuals.size == 10
    assert sample.solution_residuals.size > 0
    assert sample.max_residual < 1e-3
    assert np.all(sample.periods > 0)
    gained = sample.internal_time(sample.check_times + sample.periods) - sample.internal_time(sample.check_times)
    assert np.allclose(gained, sample.period_N, atol=1e-6)
    h_values = first_integral_values(SYMMETRIC, sample.psi_at(sample.check_times))
    assert np.allclose(h_values, h, rtol=1e-6)
    print(f"✅ Max residual {sample.max_residual:.2e}, N(h) = {sample.period_N:.4f}")


def test_crps_rejects_bad_inputs():
    with pytest.raises(DomainError):
        crps(ModelParams(alpha=1.0, sigma=0.5, d=(-2.0, 0.0, -3.0)), sample_path(1, -50.0, 0.0, 0.01), 4.0)
    with pytest.raises(DomainError):
        crps(ModelParams(alpha=1.0, sigma=1.5), sample_path(1, -50.0, 0.0, 0.01), 4.0)


def test_cone_starts_lie_on_the_cone():
    h = h_star(SYMMETRIC) + 1.0
    starts = cone_starts(periodic_orbit(SYMMETRIC, h))
    assert starts.shape == (12, 3)
    assert np.allclose(first_integral_values(SYMMETRIC, starts), h, rtol=1e-8)


def test_cone_invariance():
    """The first integral stays at h; the schemes' drift from h shrinks with dt."""
    print("🔺 Testing cone invariance under the schemes...")
    h = h_star(SYMMETRIC) + 1.0
    quiet = ModelParams(alpha=1.0)
    assert cone_invariance_check(quiet, 1, h, 10.0, 1e-2, scheme="rk4") < 1e-5
    coarse = cone_invariance_check(SYMMETRIC, 2, h, 5.0, 4e-3)
    fine = cone_invariance_check(SYMMETRIC, 2, h, 5.0, 1e-3)
    assert fine < coarse
    with pytest.raises(DomainError):
        cone_invariance_check(SYMMETRIC, 2, h, 5.0, 1e-2, scheme="rk4")
    with pytest.raises(DomainError):
        cone_invariance_check(SYMMETRIC, 2, 2.5, 5.0, 1e-2)
    print(f"✅ max |H - h|: {coarse:.2e} at dt=4e-3, {fine:.2e} at dt=1e-3")


def test_ergodic_census():
    print("🗂️  Testing the ergodic census...")
    names = [m.name for m in ergodic_census(SYMMETRIC)]
    assert names == ["delta_O", "mu_e1", "mu_e2", "mu_e3", "mu_Qstar", "nu_h"]
    census = {m.name: m for m in ergodic_census(SYMMETRIC)}
    assert census["delta_O"].top_lyapunov_sign == 1 and census["delta_O"].hyperbolic
    assert census["mu_e1"].top_lyapunov_sign == 1
    assert census["nu_h"].h_range[0] == h_star(SYMMETRIC)

    strong = ergodic_census(ModelParams(alpha=1.0, sigma=1.5))
    assert [m.name for m in strong] == ["delta_O"] and strong[0].top_lyapunov_sign == -1

    critical = ergodic_census(ModelParams(alpha=1.0, sigma=math.sqrt(2.0)))
    assert len(critical) == 1 and not critical[0].hyperbolic

    sphere = ergodic_census(ModelParams(alpha=1.0, sigma=0.5, d=(-1.0, -1.0, -1.0)))
    assert [m.name for m in sphere] == ["delta_O", "mu_Q, Q on the sphere"]
    print("✅ Census matches the regimes")


def run_all_tests():
    """Run all random-dynamics tests."""
    print("🧪 Random Dynamics Tests")
    print("=" * 50)

    tests = [
        ("Noise-free Pull-back", test_pullback_without_noise_is_the_flow),
        ("Pull-back Limit", test_pullback_converges_to_random_equilibrium),
        ("Pull-back From Two Starts", test_pullback_limit_forgets_the_start),
        ("Pull-back Under Strong Noise", test_pullback_collapses_under_strong_noise),
        ("Pull-back Window", test_pullback_needs_window),
        ("Random Equilibria", test_random_equilibrium_points),
        ("Random Equilibrium Trajectory", test_random_equilibrium_solves_the_sde),
        ("Analytic Lyapunov", test_lyapunov_analytic_values),
        ("Numeric Lyapunov at O", test_lyapunov_numeric_on_origin),
        ("Numeric Lyapunov on Ray", test_lyapunov_numeric_on_ray),
        ("Lyapunov at Critical Noise", test_lyapunov_at_critical_noise),
        ("CRPS Without Noise", test_crps_without_noise),
        ("CRPS Identities", test_crps_identities),
        ("CRPS Inputs", test_crps_rejects_bad_inputs),
        ("Cone Starts", test_cone_starts_lie_on_the_cone),
        ("Cone Invariance", test_cone_invariance),
        ("Ergodic Census", test_ergodic_census),
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
