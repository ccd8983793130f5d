"""
Test suite for the stochastic Kolmogorov lab

Each test file is a runnable script and a pytest module at the same time.

Test Categories:
- unit/: Closed forms, invariants and edge cases of individual modules
- integration/: Experiment harness runs, determinism and reduced-scale checks
"""
