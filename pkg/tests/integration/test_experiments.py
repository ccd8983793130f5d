#!/usr/bin/env python3
"""
Integration tests for the experiment harness: subcommands end to end,
artifact manifests, reproducibility and exit codes.
"""

import json
import logging
import math
import sys
import os
import tempfile

import pytest

# Add parent directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from kolmogorov_lab import THEOREMS, load_config, main, parse_args, run

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def _write(directory, name, text):
    target = os.path.join(directory, name)
    with open(target, "w") as handle:
        handle.write(text)
    return target


def _manifest(out_dir):
    with open(os.path.join(out_dir, "manifest.json")) as handle:
        return json.load(handle)


def test_parse_args():
    args = parse_args(["crps", "--config", "crps.env", "--seed", "9", "--threads", "2"])
    assert args.kind == "crps" and args.seed == 9 and args.threads == 2 and args.out is None
    with pytest.raises(SystemExit):
        parse_args(["not-an-experiment"])
    assert set(THEOREMS) == {
        "classify", "flow", "sde", "decompose-check", "logistic-density", "lyapunov", "lyapunov-sweep",
        "pullback", "crps", "cone-occupation", "vanishing-noise", "p-bifurcation",
    }


def test_classify_symmetric_case():
    """alpha=1, d=0 is case I with five isolated equilibria and h* = 3."""
    print("🔍 Testing the classify experiment...")
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "classify")
        config = _write(tmp, "params.env", "ALPHA=1\nD1=0\nD2=0\nD3=0\n")
        assert main(["classify", "--config", config, "--out", out]) == 0
        summary = _manifest(out)["summary"]
        assert summary["case"] == "I"
        assert len(summary["isolated"]) == 5
        assert math.isclose(summary["h_star"], 3.0, rel_tol=1e-9)
        assert summary["max_eigenvalue_gap"] < 1e-6
        assert os.path.isfile(os.path.join(out, "equilibria.csv"))
    print("✅ Case I, 5 equilibria, h* = 3")


def test_manifest_contents():
    with tempfile.TemporaryDirectory() as tmp:
        config = load_config(None, "flow", alpha=1.0, d1=-2.0, d3=-3.0, x0="0.3,0.4,0.5", t_end=5.0,
                             out=os.path.join(tmp, "flow"), threads=1)
        manifest = run(config)
        assert manifest["files"] == _manifest(config.out)["files"]
        assert manifest["config_sha256"] == config.config_hash()
        assert manifest["theorem"] == THEOREMS["flow"]
        assert {"numpy", "scipy", "pydantic"} <= set(manifest["versions"])
        assert [f["name"] for f in manifest["files"]] == ["flow.csv"]
        assert manifest["summary"]["omega_limit"]["label"] == "e1"


def test_manifest_is_strict_json():
    """A flow from an axis point has no first integral; the manifest stores null, not NaN."""
    def reject(token):
        raise ValueError(f"non-standard JSON constant {token}")

    with tempfile.TemporaryDirectory() as tmp:
        config = load_config(None, "flow", alpha=1.0, x0="0.8,0,0", t_end=2.0,
                             out=os.path.join(tmp, "axis"), threads=1)
        manifest = run(config)
        with open(os.path.join(config.out, "manifest.json")) as handle:
            written = json.loads(handle.read(), parse_constant=reject)
        assert written["summary"]["integral_drift"] is None
        assert manifest["summary"]["integral_drift"] is None
        assert written["summary"]["omega_limit"]["label"] == "e1"


def test_reruns_are_identical():
    """Same config and seed give byte-identical artifacts."""
    print("🔁 Testing reproducibility...")
    with tempfile.TemporaryDirectory() as tmp:
        config = _write(tmp, "sde.json", json.dumps({
            "kind": "sde", "sigma2": 0.5, "d1": 1.0, "d2": 1.0, "d3": 1.0,
            "x0": [0.3, 0.4, 0.5], "t_end": 2.0, "dt": 0.01, "record_every": 5,
        }))
        first, second = os.path.join(tmp, "a"), os.path.join(tmp, "b")
        assert main(["sde", "--config", config, "--seed", "42", "--out", first, "--threads", "1"]) == 0
        assert main(["sde", "--config", config, "--seed", "42", "--out", second, "--threads", "2"]) == 0
        a, b = _manifest(first), _manifest(second)
        assert a["files"] == b["files"]
        assert a["config_sha256"] == b["config_sha256"]
        assert a["summary"] == b["summary"]
        assert a["summary"]["negative_samples"] == 0

        third = os.path.join(tmp, "c")
        assert main(["sde", "--config", config, "--seed", "43", "--out", third]) == 0
        assert _manifest(third)["files"] != a["files"]
    print("✅ Artifacts reproduce from the seed")


def test_logistic_density_experiment():
    with tempfile.TemporaryDirectory() as tmp:
        config = load_config(None, "logistic-density", sigma2=0.5, n_samples=200, t_end=5.0, bins=8,
                             seed=3, out=os.path.join(tmp, "density"), threads=1)
        summary = run(config)["summary"]
        assert summary["shape"] == "unimodal"
        assert math.isclose(summary["mean_u2_expected"], 0.75)
        assert abs(summary["mean_u2"] - 0.75) < 0.15
        assert 0.0 <= summary["ks_terminal"] < 0.2
        for name in ("density.csv", "histogram.csv"):
            assert os.path.isfile(os.path.join(config.out, name))


def test_validation_failure_exit_code():
    print("🚦 Testing exit codes...")
    with tempfile.TemporaryDirectory() as tmp:
        bad = _write(tmp, "bad.env", "ALPHA=-1\n")
        assert main(["classify", "--config", bad, "--out", os.path.join(tmp, "x")]) == 2
        unknown = _write(tmp, "unknown.env", "ALPHA=1\nGAMMA=2\n")
        assert main(["classify", "--config", unknown, "--out", os.path.join(tmp, "y")]) == 2
        wrong_kind = _write(tmp, "wrong.json", json.dumps({"kind": "flow"}))
        assert main(["classify", "--config", wrong_kind, "--out", os.path.join(tmp, "z")]) == 2
        assert main(["classify", "--config", os.path.join(tmp, "missing.env")]) == 2
    print("✅ Validation failures exit with 2")


def test_numerical_failure_exit_code():
    """A coarse Euler-Maruyama step from far out blows up: exit 3."""
    with tempfile.TemporaryDirectory() as tmp:
        config = _write(tmp, "blowup.json", json.dumps({
            "kind": "sde", "x0": [5.0, 5.0, 5.0], "t_end": 5.0, "dt": 0.5, "scheme": "euler_maruyama",
        }))
        assert main(["sde", "--config", config, "--out", os.path.join(tmp, "out")]) == 3
        assert not os.path.exists(os.path.join(tmp, "out", "manifest.json"))


def run_all_tests():
    """Run all experiment harness tests."""
    print("🧪 Experiment Harness Tests")
    print("=" * 50)

    tests = [
        ("Argument Parsing", test_parse_args),
        ("Classify", test_classify_symmetric_case),
        ("Manifest", test_manifest_contents),
        ("Strict JSON Manifest", test_manifest_is_strict_json),
        ("Reproducibility", test_reruns_are_identical),
        ("Logistic Density", test_logistic_density_experiment),
        ("Validation Exit Code", test_validation_failure_exit_code),
        ("Numerical Failure Exit Code", test_numerical_failure_exit_code),
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
