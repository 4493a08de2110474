import math
import pathlib

import pytest

import kinetic_lab

CONSTANT = """
seed: 3
flow: {kind: torus, rho: golden}
generators:
  damped: {kind: kinetic, alpha_per_time: 3.0, beta_per_time_squared: 2.0}
  soft: {kind: kinetic, alpha_per_time: 1.0, beta_per_time_squared: 2.0}
estimator: {ensemble_size: 4, horizon_time: 300.0}
"""

ROOT = pathlib.Path(__file__).resolve().parents[2]


def test_constant_spectrum_matches_eigenvalues():
    s = kinetic_lab.estimate_spectrum(CONSTANT, "damped")
    assert abs(s["lambda1"] + 1.0) < 1e-2
    assert abs(s["lambda2"] + 2.0) < 1e-2
    assert s["mean_trace"] == -3.0


def test_sigma_p_of_constant_pair():
    value, err = kinetic_lab.sigma_p(CONSTANT, "damped", "soft", p=2.0, samples=100)
    assert math.isclose(value, 2.0 / 3.0, rel_tol=1e-12)
    assert kinetic_lab.sigma_p(CONSTANT, "damped", "damped")[0] == 0.0


def test_rotation_closed_form():
    theta = 1.5 * math.pi
    m = kinetic_lab.rotation_propagator(theta, 1.0)
    assert abs(m[0][0] - math.cos(theta)) < 1e-15
    assert abs(m[1][0] + theta * math.sin(theta)) < 1e-14


def test_config_errors_raise():
    with pytest.raises(kinetic_lab.ConfigError):
        kinetic_lab.estimate_spectrum("flow: {kind: torus, rho: golden}\ngenerators: {}\nbogus: 1\n", "x")


def test_cli_runner_writes_outputs(tmp_path):
    rc = kinetic_lab.spectrum(str(ROOT / "configs" / "constant.yaml"), str(tmp_path), seed=5)
    assert rc == 0
    assert (tmp_path / "report.txt").read_text().startswith("kinetic-lab report")
    assert (tmp_path / "collapse_trace.csv").read_text() == "round,jump,script_L,sigma1_cumulative\n"
