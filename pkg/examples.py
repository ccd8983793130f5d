"""
Example usage of the stochastic Kolmogorov lab.
This script walks through the deterministic flow, one noisy trajectory,
the random equilibrium u_g and a random periodic solution.
"""

import logging
import math

import numpy as np

from deterministic_flow import StepControl, equilibria, h_star, integrate_flow, periodic_orbit
from logistic_scalar import density_mode, density_shape, ug_path
from model_core import ModelParams, classify_regime
from noise_path import sample_path
from random_dynamics import crps, lyapunov_analytic, pullback_limit
from sde_engine import SchemeSpec, decompose, integrate_sde

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def example_classification():
    """Example: Sign pattern, equilibria and h* of the symmetric system."""
    print("=== Example: Classification ===")

    params = ModelParams(alpha=1.0)
    regime = classify_regime(params)
    eq = equilibria(params)

    print(f"Sign pattern {regime.symbols} -> case {regime.canonical_case}")
    print(f"Equilibria: {eq.census()} ({', '.join(eq.labels)})")
    print(f"h* = {h_star(params):.6f}")


def example_deterministic_flow():
    """Example: A closed orbit on the unit sphere."""
    print("\n=== Example: Deterministic Flow ===")

    params = ModelParams(alpha=1.0, d=(1.0, 1.0, 1.0))
    h = h_star(params) + 1.0
    orbit = periodic_orbit(params, h)
    print(f"Orbit at h = {h:.4f}: period N(h) = {orbit.period:.6f}")

    record = integrate_flow(params, [0.3, 0.4, 0.5], 20.0, StepControl(h=1e-3))
    print(f"First integral drift over t = 20: {record.integral_drift():.2e}")
    print(f"Distance to the sphere at t = 20: {abs(np.linalg.norm(record.final_state) - 1.0):.2e}")


def example_noisy_trajectory():
    """Example: Milstein against the stochastic decomposition on one path."""
    print("\n=== Example: Noisy Trajectory ===")

    params = ModelParams(alpha=1.0, sigma=math.sqrt(0.5), d=(1.0, 1.0, 1.0))
    path = sample_path(2024, 0.0, 10.0, 1e-3)
    record = integrate_sde(params, path, [0.3, 0.4, 0.5], 10.0, SchemeSpec(dt=1e-3))
    exact = decompose(params, path, [0.3, 0.4, 0.5], 1.0, 10.0)

    print(f"Milstein x(10) = {np.round(record.final_state, 6)}")
    print(f"Decomposition x(10) = {np.round(exact, 6)}")
    print(f"Gap: {np.linalg.norm(record.final_state - exact):.2e}")


def example_random_equilibrium():
    """Example: u_g and the law it is drawn from."""
    print("\n=== Example: Random Equilibrium ===")

    params = ModelParams(alpha=1.0, sigma=math.sqrt(0.5))
    _, ug = ug_path(params, seed=7, dt=1e-2)
    print(f"u_g = {ug.value:.6f} (depth {ug.truncation_depth:.1f}, tail bound {ug.tail_bound:.1e})")
    print(f"Stationary density is {density_shape(params)} with mode {density_mode(params)}")
    print(f"Lyapunov spectrum of mu_e1: {lyapunov_analytic(params, 'e1')}")


def example_pullback_and_crps():
    """Example: A pull-back limit cycle and the random periodic solution on it."""
    print("\n=== Example: Pull-back Limit and Random Periodic Solution ===")

    params = ModelParams(alpha=1.0, sigma=math.sqrt(0.5), d=(1.0, 1.0, 1.0))
    h = h_star(params) + 1.0
    path = sample_path(11, -200.0, 10.0, 1e-3)

    limit = pullback_limit(params, path, [0.3, 0.4, 0.5], 150.0)
    print(f"Pull-back limit: {limit.kind} (converged={limit.converged}, u_g={limit.u_g})")

    sample = crps(params, path, h)
    print(f"N(h) = {sample.period_N:.6f}; T_h ranges over [{sample.periods.min():.4f}, {sample.periods.max():.4f}]")
    print(f"Largest identity residual: {sample.max_residual:.2e}")


def main():
    """Run all examples."""
    try:
        print("Stochastic Kolmogorov Lab Examples")
        print("=" * 50)

        # Run examples
        example_classification()
        example_deterministic_flow()
        example_noisy_trajectory()
        example_random_equilibrium()
        example_pullback_and_crps()

        print("\n" + "=" * 50)
        print("All examples completed successfully!")

    except Exception as e:
        logger.error(f"Error running examples: {e}")
        print(f"\nError: {e}")
        print("\nPlease ensure:")
        print("1. numpy, scipy and pydantic are installed (pip install -r requirements.txt)")
        print("2. Any KOLMOGOROV_* overrides in your .env file are valid")


if __name__ == "__main__":
    main()
