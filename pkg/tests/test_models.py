import numpy as np
import pytest

from oracles import logistic_1d_optimum, sigmoid
from sgdlab.models import (DataAtom, ModelError, NoiseCovariance, NoiseOracle, ObjectiveModel,
                           check_cocoercivity, exact_gradient, exact_hessian, exact_third_derivative,
                           load_model, model_from_dict, model_to_toml, noise_covariance,
                           solve_optimum, stochastic_gradient)
from sgdlab.rng import stream


def ls(atoms, lam=0.0):
    return ObjectiveModel("least_squares", [DataAtom(*a) for a in atoms], lam=lam)


def logit(atoms, lam):
    return ObjectiveModel("logistic", [DataAtom(*a) for a in atoms], lam=lam)


# exact_gradient

def test_gradient_single_atom_least_squares():
    m = ls([((1.0,), 0.0, 1.0)])
    assert exact_gradient(m, [0.5]) == pytest.approx([0.5], abs=1e-15)


def test_gradient_vanishes_at_optimum(LMS3):
    assert np.linalg.norm(exact_gradient(LMS3, LMS3.theta_star)) <= 1e-12


def test_gradient_logistic_at_zero(L1):
    # 0.7 * (-sigma(0)) + 0.3 * sigma(0)
    expected = sum(w * (-y * x * sigmoid(-y * x * 0.0)) for x, y, w in [(1, 1, .7), (1, -1, .3)])
    assert exact_gradient(L1, [0.0])[0] == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(-0.2)


def test_gradient_dimension_mismatch(LMS3):
    with pytest.raises(ValueError):
        exact_gradient(LMS3, [1.0, 2.0])


# stochastic_gradient

def test_stochastic_gradient_symmetric_inputs():
    m = ls([((1.0,), 0.0, 0.5), ((-1.0,), 0.0, 0.5)])
    noise = NoiseOracle(m, stream(0))
    for _ in range(20):
        assert stochastic_gradient(m, noise, [1.0])[0] == pytest.approx(1.0, abs=1e-15)


def test_single_atom_gradient_is_exact(L1):
    m = logit([((0.3, -1.2), 1.0, 1.0)], lam=0.2)
    noise = NoiseOracle(m, stream(1))
    th = np.array([0.4, 0.1])
    assert np.allclose(stochastic_gradient(m, noise, th), exact_gradient(m, th), atol=1e-15)


@pytest.mark.parametrize("name", ["q1", "l1", "lms3"])
def test_weighted_atom_gradients_vanish_at_optimum(name, Q1, L1, LMS3):
    m = {"q1": Q1, "l1": L1, "lms3": LMS3}[name]
    G = m.atom_gradients(m.theta_star)
    assert np.linalg.norm(m.w @ G) <= 1e-12


def test_unbiasedness_on_grid(L1, LMS3):
    rng = np.random.default_rng(0)
    for m in (L1, LMS3):
        pts = m.theta_star + 3 * rng.normal(size=(200, m.d))
        G = m.atom_gradients(pts)
        mean = np.einsum("n,pni->pi", m.w, G)
        assert np.max(np.abs(mean - m.gradient(pts))) <= 1e-12


def test_least_squares_sample_gradient_formula(LMS3):
    th = np.array([0.3, -0.2, 0.5])
    for i, a in enumerate(LMS3.atoms):
        x = np.array(a.x)
        assert np.allclose(LMS3.sample_gradients(th, i), x * (x @ th - a.y), atol=1e-15)


# hessian and third derivative

def test_least_squares_derivatives(LMS3):
    for th in (LMS3.theta_star, np.ones(3)):
        assert np.allclose(exact_hessian(LMS3, th), LMS3.sigma, atol=1e-15)
        assert not np.any(exact_third_derivative(LMS3, th))


def test_logistic_hessian_at_zero():
    m = logit([((1.0,), 1.0, 1.0)], lam=1e-300)
    h = 1e-5
    fd = (exact_gradient(m, [h]) - exact_gradient(m, [-h])) / (2 * h)
    assert exact_hessian(m, [0.0])[0, 0] == pytest.approx(0.25, abs=1e-15)
    assert abs(fd[0] - 0.25) <= 1e-6


def test_derivative_consistency_random_logistic():
    from sgdlab.instances import random_logistic
    rng = np.random.default_rng(3)
    m = random_logistic(3, 6, rng)
    h = 1e-5
    for _ in range(5):
        th = rng.normal(size=3)
        H = exact_hessian(m, th)
        F3 = exact_third_derivative(m, th)
        for j in range(3):
            e = np.eye(3)[j]
            fdH = (exact_gradient(m, th + h * e) - exact_gradient(m, th - h * e)) / (2 * h)
            assert np.max(np.abs(fdH - H[:, j])) <= 1e-5 * np.max(np.abs(H))
            fd3 = (exact_hessian(m, th + h * e) - exact_hessian(m, th - h * e)) / (2 * h)
            assert np.max(np.abs(fd3 - F3[:, :, j])) <= 1e-5 * max(1e-3, np.max(np.abs(F3)))


def test_third_derivative_symmetry():
    from sgdlab.instances import random_logistic
    m = random_logistic(3, 5, np.random.default_rng(4))
    F = exact_third_derivative(m, np.array([0.2, -0.1, 0.4]))
    for perm in [(0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]:
        assert np.allclose(F, F.transpose(perm), atol=1e-15)


def test_strong_convexity_on_grid(L1, LMS3):
    rng = np.random.default_rng(5)
    for m in (L1, LMS3):
        for _ in range(200):
            th = m.theta_star + rng.uniform(-3, 3, size=m.d)
            assert np.linalg.eigvalsh(m.hessian(th))[0] >= m.mu_global - 1e-12


# noise covariance

def test_single_atom_zero_covariance():
    for m in (ls([((2.0,), 1.0, 1.0)]), logit([((1.0, 2.0), 1.0, 1.0)], lam=0.1)):
        C = noise_covariance(m, np.full(m.d, 0.3)).C
        assert np.allclose(C, 0, atol=1e-15)


def test_q1_covariance_at_optimum(Q1):
    assert noise_covariance(Q1, Q1.theta_star).C[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_covariance_invariants(L1, LMS3):
    for m in (L1, LMS3):
        NoiseCovariance(m.noise_covariance(m.theta_star + 0.7), m.theta_star + 0.7).check()


def test_covariance_matches_sampled_gradients(LMS3):
    th = LMS3.theta_star + np.array([0.5, -0.3, 0.2])
    rng = stream(7, purpose="test")
    n = 1_000_000
    idx = np.searchsorted(np.cumsum(LMS3.w), rng.random(n), side="right")
    G = LMS3.sample_gradients(th, idx)
    eps = G - LMS3.gradient(th)
    prods = eps[:, :, None] * eps[:, None, :]
    emp = prods.mean(axis=0)
    se = prods.std(axis=0) / np.sqrt(n)
    C = noise_covariance(LMS3, th).C
    assert np.all(np.abs(emp - C) <= 3 * se + 1e-15)


# solve_optimum

def test_optimum_single_point():
    m = ls([((1.0,), 2.0, 1.0)])
    assert solve_optimum(m) == pytest.approx([2.0], abs=1e-14)


def test_optimum_l1_matches_bisection(L1):
    ref = logistic_1d_optimum([(1.0, 1.0, 0.7), (1.0, -1.0, 0.3)], 0.1)
    assert L1.theta_star[0] == pytest.approx(ref, abs=1e-12)
    assert np.linalg.norm(L1.gradient(L1.theta_star)) <= 1e-12 * (1 + abs(ref))


def test_optimum_symmetric_logistic():
    m = logit([((1.0,), 1.0, 0.5), ((1.0,), -1.0, 0.5)], lam=0.3)
    assert solve_optimum(m) == pytest.approx([0.0], abs=1e-14)


def test_newton_failure_is_reported():
    m = logit([((1.0,), 1.0, 1.0)], lam=1e-300)
    with pytest.raises(ModelError):
        solve_optimum(m, max_iter=3)


# validation and constants

def test_invalid_models():
    with pytest.raises(ModelError):
        ls([((1.0,), 0.0, 0.6), ((1.0,), 1.0, 0.6)])
    with pytest.raises(ModelError):
        logit([((1.0,), 1.0, 1.0)], lam=0.0)
    with pytest.raises(ModelError):
        ls([((1.0, 0.0), 1.0, 1.0)])  # singular second moment
    with pytest.raises(ModelError):
        ls([((1.0,), 1.0, 0.0), ((1.0,), 1.0, 1.0)])


def test_declared_constants(L1, Q1):
    assert L1.L == pytest.approx(0.35)
    assert L1.R2 == 1.0
    assert Q1.L == Q1.mu == 1.0
    h = L1.hessian(L1.theta_star)[0, 0]
    assert L1.mu == pytest.approx(h)


@pytest.mark.parametrize("name", ["q1", "l1", "lms3"])
def test_cocoercivity(name, Q1, L1, LMS3):
    m = {"q1": Q1, "l1": L1, "lms3": LMS3}[name]
    assert check_cocoercivity(m, np.random.default_rng(0), n_pairs=10_000) <= 0


def test_model_file_roundtrip(tmp_path, L1):
    p = tmp_path / "m.toml"
    p.write_text(model_to_toml(L1))
    m = load_model(p)
    assert m.kind == "logistic" and m.lam == 0.1
    assert np.allclose(m.theta_star, L1.theta_star, atol=0)


def test_corrupted_model_file(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text('kind = "least_squares"\natoms = [ {x = [1.0], y = 1.0 ')
    with pytest.raises(ModelError):
        load_model(p)
    with pytest.raises(ModelError):
        model_from_dict({"kind": "least_squares", "atoms": [{"x": [1.0], "w": 1.0}]})
    with pytest.raises(ModelError):
        model_from_dict({"kind": "least_squares", "d": 2, "atoms": [{"x": [1.0], "y": 0.0, "w": 1.0}]})
