import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmi_info import datagen as dg
from qmi_info.experiments import PRESETS, SCALAR_A, SCALAR_B
from qmi_info.qmi import QmiSet, contains


def test_make_rng_streams():
    a = dg.make_rng(7, 1, 2).standard_normal(5)
    b = dg.make_rng(7, 1, 2).standard_normal(5)
    c = dg.make_rng(7, 1, 3).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


def test_linear_system_validation():
    with pytest.raises(ValueError):
        dg.LinearSystem(np.eye(2), np.ones((3, 1)))
    with pytest.raises(ValueError):
        dg.LinearSystem(np.eye(2), np.ones((2, 1)), c=np.eye(2))


def test_simulate_and_random_data():
    sys_ = PRESETS["pendulum"]
    rng = dg.make_rng(0)
    d = dg.random_data(sys_, 15, rng)
    assert np.allclose(d.x_plus, sys_.a @ d.x + sys_.b @ d.u)
    s = dg.simulate(sys_, np.ones(3), rng.standard_normal((1, 6)))
    assert np.allclose(s.x_plus, sys_.a @ s.x + sys_.b @ s.u)
    assert np.allclose(s.x[:, 1:], s.x_plus[:, :-1])


def test_stacked_roundtrip():
    d = dg.random_data(PRESETS["unbounded-3x2"], 5, dg.make_rng(1))
    back = dg.DataRecord.from_stacked(d.stacked(), d.n, d.nx)
    assert np.array_equal(back.x_plus, d.x_plus) and np.array_equal(back.u, d.u)
    with pytest.raises(ValueError):
        dg.DataRecord(np.ones((2, 3)), np.ones((2, 4)), np.ones((1, 3)))


def _ar_system():
    return dg.ArSystem((np.array([[0.5, 0.1], [0.0, -0.3]]), np.array([[0.1, 0.0], [0.2, 0.1]])),
                       (np.array([[1.0], [0.0]]), np.array([[0.0], [0.5]]), np.array([[0.2], [0.1]])))


def test_ar_data_consistency():
    sys_ = _ar_system()
    d = dg.random_ar_data(sys_, 12, dg.make_rng(2))
    A, B = sys_.params()
    assert np.allclose(d.x_plus, A @ d.x + B @ d.u)
    # the lifted state moves with the lifted matrices
    Al, Bl = sys_.lifted()
    assert np.allclose(d.x[:, 1:], (Al @ d.x + Bl @ d.u)[:, :-1])


def test_ar_shift_matrices_shape():
    J1, J2 = dg.ar_shift_matrices(2, 1, 3)
    assert J1.shape == (7, 9) and J2.shape == (7, 1)


def test_true_system_in_sigma():
    model = dg.measurement_noise_model(3, 20, 0.3)
    rng = dg.make_rng(0, 1)
    clean = dg.random_data(PRESETS["scalar-1d"], 20, rng)
    data = dg.perturb(clean, dg.sample_perturbation(model, rng=rng))
    sigma = dg.SigmaSet(data, model)
    assert dg.sigma_contains(sigma, SCALAR_A, SCALAR_B)
    N = QmiSet(dg.consistency_matrix(data, model), 1)
    assert contains(N, np.vstack([SCALAR_A, SCALAR_B.T]))
    assert not dg.sigma_contains(sigma, SCALAR_A + 50.0, SCALAR_B)


def test_model_validation():
    with pytest.raises(ValueError):
        dg.SingleModel(np.eye(3), QmiSet(np.eye(5), 2))
    with pytest.raises(ValueError):
        dg.StructuredModel(())


@pytest.mark.parametrize("model", [
    dg.measurement_noise_model(3, 6, 0.2),
    dg.disturbance_model(1, 1, 6, 0.2),
    dg.elementwise_model(3, 4, 0.1),
    dg.instantaneous_model(np.eye(3), 4, dg.box_qmi(0.04, 3, 1)),
    dg.hankel_model(1, 2, 5, dg.box_qmi(0.04, 1, 6)),
    dg.disturbance_measurement_model(1, 1, 4, dg.box_qmi(0.01, 1, 4), dg.box_qmi(0.01, 3, 4)),
])
def test_sampled_perturbations_in_model(model):
    deltas, parts = dg.sample_perturbations(model, 20, seed=3, burn_in=200, parts=True)
    terms = model.terms if isinstance(model, dg.StructuredModel) else None
    for delta, comp in zip(deltas, parts):
        if terms is None:
            assert contains(model.phi_hat, comp[0].T)
            assert np.allclose(delta, model.e @ comp[0])
        else:
            total = sum(t.e @ D @ t.f for t, D in zip(terms, comp))
            assert np.allclose(delta, total)
            assert all(contains(t.phi, D.T) for t, D in zip(terms, comp))


def test_elementwise_entries_bounded():
    model = dg.elementwise_model(3, 5, 0.1)
    for delta in dg.sample_perturbations(model, 30, seed=4, burn_in=100):
        assert np.abs(delta).max() <= 0.1 + 1e-12


def test_metropolis_stays_in_ball():
    out = dg.metropolis_ball(dg.make_rng(5), 4, 2, 3, count=50, burn_in=100, thin=2)
    norms = np.linalg.svd(out.reshape(-1, 2, 3), compute_uv=False)[:, 0]
    assert norms.max() <= 1.0


def test_sample_sigma_members():
    model = dg.measurement_noise_model(7, 20, 1e-2)
    rng = dg.make_rng(6)
    clean = dg.random_data(PRESETS["pendulum"], 20, rng)
    data = dg.perturb(clean, dg.sample_perturbation(model, rng=rng))
    sigma = dg.SigmaSet(data, model)
    N = QmiSet(dg.consistency_matrix(data, model), 3)
    for A, B in dg.sample_sigma(sigma, 50, seed=1):
        assert dg.sigma_contains(sigma, A, B, tol=1e-7)
        assert contains(N, np.vstack([A.T, B.T]), tol=1e-7)


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.5))
def test_sigma_contains_matches_qmi_when_phi22_negative(seed, eps):
    # with E = I and phi22 < 0 the consistent set equals Z(N): two routes must agree
    rng = np.random.default_rng(seed)
    T = 6
    model = dg.measurement_noise_model(3, T, eps)
    clean = dg.random_data(PRESETS["scalar-1d"], T, rng)
    data = dg.perturb(clean, dg.sample_perturbation(model, rng=rng, burn_in=100))
    sigma = dg.SigmaSet(data, model)
    N = QmiSet(dg.consistency_matrix(data, model), 1)
    for _ in range(20):
        A, B = rng.normal(1.2, 1.0, size=(1, 1)), rng.normal(0.6, 1.0, size=(1, 1))
        Z = np.vstack([A, B])
        margin = np.linalg.eigvalsh(N.value(Z))[0] / np.linalg.norm(N.n)
        if abs(margin) < 1e-6:
            continue
        assert dg.sigma_contains(sigma, A, B) == (margin > 0)


def test_sample_qmi_systems_members(rng):
    from conftest import random_ellipsoid
    N = random_ellipsoid(rng, 2, 3, rank=2)
    out = dg.sample_qmi_systems(N, 2, 2, 30, seed=0)
    qs = QmiSet(N, 2)
    for A, B in out:
        assert contains(qs, np.vstack([A.T, B.T]), tol=1e-7)
