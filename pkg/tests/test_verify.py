import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmi_info import datagen as dg
from qmi_info.experiments import PRESETS
from qmi_info.verify import (VerificationReport, brute_inclusion, closed_loop, h2_norm, h2_norm_impulse,
                             hinf_norm, inclusion_scan, verify_performance, verify_stabilization)


def _stable(rng, n, radius=0.9):
    A = rng.standard_normal((n, n))
    return radius * A / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.integers(1, 3))
def test_h2_gramian_matches_impulse(seed, n, p):
    rng = np.random.default_rng(seed)
    A = _stable(rng, n, rng.uniform(0.1, 0.95))
    C = rng.standard_normal((p, n))
    a, b = h2_norm(A, C), h2_norm_impulse(A, C)
    assert a == pytest.approx(b, rel=1e-6)


def test_h2_scalar_closed_form():
    assert h2_norm([[0.5]], [[1.0]]) == pytest.approx(np.sqrt(1 / 0.75))
    assert h2_norm([[1.5]], [[1.0]]) == np.inf


@settings(max_examples=10)
@given(st.integers(0, 2**31 - 1), st.integers(1, 3))
def test_hinf_matches_dense_frequency_grid(seed, n):
    rng = np.random.default_rng(seed)
    A = _stable(rng, n, rng.uniform(0.1, 0.9))
    C = rng.standard_normal((2, n))
    ths = np.linspace(0.0, np.pi, 20001)
    grid = max(np.linalg.norm(C @ np.linalg.inv(np.exp(1j * t) * np.eye(n) - A), 2) for t in ths)
    val = hinf_norm(A, C)
    assert val >= grid * (1 - 1e-6)
    assert val == pytest.approx(grid, rel=1e-4)


def test_hinf_special_cases():
    assert hinf_norm([[0.5]], [[0.0]]) == 0.0
    assert hinf_norm([[0.5]], [[1.0]]) == pytest.approx(2.0, rel=1e-6)
    assert hinf_norm([[-0.5]], [[1.0]]) == pytest.approx(2.0, rel=1e-6)
    assert hinf_norm([[1.1]], [[1.0]]) == np.inf


def test_report_invariants():
    with pytest.raises(ValueError):
        VerificationReport("x", 3, 4, 0.0)
    r = VerificationReport("x", 10, 0, 0.1)
    assert r.passed and r.summary == "no counterexample in 10 samples"
    assert '"violations": 0' in r.to_json()


def _scalar_sigma(eps=0.3, seed=0):
    model = dg.measurement_noise_model(3, 20, eps)
    rng = dg.make_rng(seed, 1)
    clean = dg.random_data(PRESETS["scalar-1d"], 20, rng)
    data = dg.perturb(clean, dg.sample_perturbation(model, rng=rng))
    return dg.SigmaSet(data, model)


def test_zero_gain_on_unstable_set_fails_everywhere():
    sigma = _scalar_sigma(eps=0.05)
    rep = verify_stabilization(sigma, np.zeros((1, 1)), n_samples=100)
    assert rep.violations == rep.n_samples == 100
    assert rep.worst_margin < 0


def test_good_gain_passes_and_performance():
    sigma = _scalar_sigma(eps=0.05)
    K = np.array([[-2.0]])  # 1.2 - 0.6 * 2 = 0
    assert verify_stabilization(sigma, K, n_samples=100).passed
    rep = verify_performance(sigma, K, (np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]])), 50.0,
                             "h2", n_samples=50)
    assert rep.passed
    with pytest.raises(ValueError):
        verify_performance(sigma, K, (np.eye(1), np.eye(1)), 1.0, "l1", n_samples=1)


def test_closed_loop_lifts_ar():
    A, B, K = np.eye(2), np.ones((2, 1)), np.zeros((1, 2))
    assert np.allclose(closed_loop(A, B, K), A)


def test_inclusion_scan_nested_intervals():
    # [-1, 1] inside (-2, 2) but not inside (-0.5, 0.5)
    N = np.diag([1.0, -1.0])
    assert brute_inclusion(N, np.diag([4.0, -1.0]), 1)
    assert not brute_inclusion(N, np.diag([0.25, -1.0]), 1)
    # boundary touching is not strict inclusion
    assert not brute_inclusion(N, N, 1)


def test_inclusion_scan_two_dim_disk():
    N = np.diag([1.0, -1.0, -1.0])
    scan = inclusion_scan(N, np.diag([1.21, -1.0, -1.0]), 1)
    assert scan.included and scan.worst_margin == pytest.approx(0.21, abs=1e-8)
    assert not inclusion_scan(N, np.diag([0.81, -1.0, -1.0]), 1).included


def test_inclusion_scan_unbounded_is_flagged():
    N = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 0.0]])
    scan = inclusion_scan(N, np.diag([1.5, -1.0, -1.0]), 1, grid=32)
    assert scan.boxed and not scan.included
