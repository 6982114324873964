import math

import numpy as np
import pytest

from precondopt import datagen, precond, spectral
from precondopt.errors import InputError, StateError

from oracles import dense_H_inv_apply, dense_H_inv_sqrt, dense_sampled_H


def test_build_full_zero_data_scales_by_rho():
    X = np.zeros((5, 8))
    P = precond.build_full(X, lam=0.2, beta=0.4)
    assert P.rho == pytest.approx(0.5)
    x = np.arange(5.0)
    assert np.allclose(precond.apply(P, x), x / math.sqrt(0.5), atol=1e-14)


def test_rho_is_lam_over_beta():
    X = np.random.default_rng(0).standard_normal((4, 9))
    P = precond.build_full(X, lam=0.3, beta=0.3)
    assert P.rho == pytest.approx(1.0)


def test_apply_matches_dense_inverse_sqrt_oracle():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((8, 30))
    P = precond.build_full(X, lam=1e-2, beta=0.5)
    oracle = dense_H_inv_sqrt(X, P.rho)
    for _ in range(5):
        x = rng.standard_normal(8)
        assert np.allclose(precond.apply(P, x), oracle @ x, atol=1e-9)


def test_apply_acts_as_rho_scaling_on_complement():
    # d > n: data spans only n directions, the complement is scaled by
    # rho^{-1/2} alone.
    rng = np.random.default_rng(2)
    X = rng.standard_normal((30, 8))
    P = precond.build_full(X, lam=1e-2, beta=0.5)
    oracle = dense_H_inv_sqrt(X, P.rho)
    x = rng.standard_normal(30)
    assert np.allclose(precond.apply(P, x), oracle @ x, atol=1e-9)

    # vector orthogonal to the data span
    q, _ = np.linalg.qr(X)
    v = rng.standard_normal(30)
    v -= q @ (q.T @ v)
    assert np.allclose(precond.apply(P, v), v / math.sqrt(P.rho), atol=1e-9)


def test_identity_mode_returns_input():
    P = precond.identity_preconditioner(4)
    x = np.arange(4.0)
    assert precond.apply(P, x) is x or np.array_equal(precond.apply(P, x), x)
    assert np.array_equal(precond.precondition_dataset(P, np.eye(4)), np.eye(4))


def test_apply_dimension_errors():
    X = np.random.default_rng(3).standard_normal((4, 9))
    P = precond.build_full(X, 0.1, 0.5)
    with pytest.raises(InputError):
        precond.apply(P, np.ones(5))
    with pytest.raises(InputError):
        precond.apply(P, np.ones((4, 2)))


def test_build_sampled_parameter_arithmetic():
    X = np.random.default_rng(4).standard_normal((5, 1000))
    P = precond.build_sampled(X, lam=1e-3, beta=0.5, m=100, seed=0)
    assert P.rho == pytest.approx(2e-2)
    assert P.eff_strong_convexity == pytest.approx(0.05)
    assert P.m == 100
    assert len(P.sample_indices) == 100
    assert len(np.unique(P.sample_indices)) == 100


def test_build_sampled_m_equals_n_matches_full():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((6, 40))
    full = precond.build_full(X, 1e-2, 0.5)
    samp = precond.build_sampled(X, 1e-2, 0.5, m=40, seed=0)
    assert samp.rho == pytest.approx(full.rho)
    assert samp.eff_strong_convexity == pytest.approx(full.eff_strong_convexity)
    assert np.array_equal(samp.sample_indices, np.arange(40))
    for _ in range(3):
        x = rng.standard_normal(6)
        assert np.allclose(precond.apply(samp, x), precond.apply(full, x), atol=1e-10)


def test_build_sampled_bounds_m():
    X = np.zeros((3, 10))
    for m in (0, 11):
        with pytest.raises(InputError):
            precond.build_sampled(X, 0.1, 0.5, m=m)


def test_sampled_apply_twice_matches_dense_oracle():
    rng = np.random.default_rng(6)
    for _ in range(10):
        d = int(rng.integers(3, 12))
        n = int(rng.integers(d, 50))
        m = int(rng.integers(1, n + 1))
        X = rng.standard_normal((d, n))
        P = precond.build_sampled(X, 1e-2, 0.7, m=m, seed=int(rng.integers(1000)))
        Hhat = dense_sampled_H(X, P.sample_indices, P.rho)
        x = rng.standard_normal(d)
        twice = precond.apply(P, precond.apply(P, x))
        oracle = np.linalg.solve(Hhat, x)
        assert np.allclose(twice, oracle, rtol=1e-8, atol=1e-10)


def test_sampling_is_seeded_and_reproducible():
    X = np.random.default_rng(7).standard_normal((4, 60))
    a = precond.build_sampled(X, 1e-2, 0.5, m=20, seed=3)
    b = precond.build_sampled(X, 1e-2, 0.5, m=20, seed=3)
    c = precond.build_sampled(X, 1e-2, 0.5, m=20, seed=4)
    assert np.array_equal(a.sample_indices, b.sample_indices)
    assert not np.array_equal(a.sample_indices, c.sample_indices)


def test_apply_H_inv_matches_oracle_and_square():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((7, 25))
    P = precond.build_full(X, 1e-2, 0.5)
    u = rng.standard_normal(7)
    oracle = dense_H_inv_apply(X, P.rho, u)
    assert np.allclose(precond.apply_H_inv(P, u), oracle, atol=1e-9)
    assert np.allclose(precond.apply(P, precond.apply(P, u)),
                       precond.apply_H_inv(P, u), atol=1e-9)


def test_apply_H_inv_null_space_scales_by_rho():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((20, 5))
    P = precond.build_naive(X, 1e-2, 0.5)
    q, _ = np.linalg.qr(X)
    u = rng.standard_normal(20)
    u -= q @ (q.T @ u)
    assert np.allclose(precond.apply_H_inv(P, u), u / P.rho, atol=1e-9)


def test_apply_H_inv_mode_guard():
    X = np.random.default_rng(10).standard_normal((4, 20))
    P = precond.build_sampled(X, 1e-2, 0.5, m=5)
    with pytest.raises(StateError):
        precond.apply_H_inv(P, np.ones(4))


def test_precondition_dataset_matches_columnwise_apply():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((6, 15))
    P = precond.build_full(X, 1e-3, 0.9)
    out = precond.precondition_dataset(P, X)
    for j in range(15):
        assert np.allclose(out[:, j], precond.apply(P, X[:, j]), atol=1e-12)


def test_preconditioned_covariance_spectrum_is_contractive():
    ds = datagen.synth(400, 30, "poly:0.5", seed=12)
    P = precond.build_full(ds.X, 1e-3, 0.5)
    out = precond.precondition_dataset(P, ds.X)
    eig = spectral.covariance_spectrum(out).eigenvalues
    ds_eigs = spectral.covariance_spectrum(ds.X).eigenvalues
    transformed = ds_eigs / (ds_eigs + P.rho)
    assert np.allclose(eig, np.sort(transformed)[::-1], atol=1e-9)
    assert float(eig.max()) <= 1.0 + 1e-9


def test_mean_sq_norm_of_preconditioned_data_is_gamma():
    ds = datagen.synth(300, 25, "poly:0.5", seed=13)
    P = precond.build_full(ds.X, 1e-3, 0.5)
    out = precond.precondition_dataset(P, ds.X)
    mean_sq = float(np.mean(np.sum(out * out, axis=0)))
    spec = spectral.covariance_spectrum(ds.X)
    gamma = spectral.numerical_rank(spec, P.rho)
    assert mean_sq == pytest.approx(gamma, rel=1e-8)


def test_map_back_zero_and_mode_guard():
    X = np.random.default_rng(14).standard_normal((5, 12))
    P = precond.build_full(X, 1e-2, 0.5)
    assert np.allclose(precond.map_back(P, np.zeros(5)), 0.0)
    with pytest.raises(StateError):
        precond.map_back(precond.identity_preconditioner(5), np.ones(5))


def test_sample_size_bound_arithmetic():
    # boundary case mu*gamma = 0
    assert precond.sample_size_bound(0.5, math.log(2.0), 0.0, 0.0, 1) == \
        math.ceil(8 * math.log(2.0))
    # direct arithmetic
    assert precond.sample_size_bound(0.25, 3.0, 9.0, 1.0, 100) == 2434
    # halving delta quadruples the bound (up to ceiling)
    lo = precond.sample_size_bound(0.5, 1.0, 4.0, 1.0, 10)
    hi = precond.sample_size_bound(0.25, 1.0, 4.0, 1.0, 10)
    assert hi == pytest.approx(4 * lo, abs=4)


def test_sample_size_bound_guards():
    with pytest.raises(InputError):
        precond.sample_size_bound(0.6, 1.0, 1.0, 1.0, 10)
    with pytest.raises(InputError):
        precond.sample_size_bound(0.5, 0.0, 1.0, 1.0, 10)


def test_resolve_sample_size_fixed_point():
    ds = datagen.synth(4000, 30, "exp:0.5", seed=15)
    spec = spectral.covariance_spectrum(ds.X, right_factors=True)
    lam, beta = 5e-3, 1.0
    m, rho_hat = precond.resolve_sample_size(spec, lam, beta, delta=0.5, t=3.0)
    assert 1 <= m <= ds.n
    assert rho_hat == pytest.approx((ds.n / m) * lam / beta, rel=1e-12)
    if m < ds.n:
        mug = (spectral.coherence(spec, rho_hat)
               * spectral.numerical_rank(spec, rho_hat))
        assert m >= precond.sample_size_bound(0.5, 3.0, mug, 1.0, ds.d)


def test_woodbury_identity_random_instances():
    rng = np.random.default_rng(16)
    for _ in range(10):
        d = int(rng.integers(3, 41))
        n = int(rng.integers(d, 2 * d + 20))
        m = int(rng.integers(1, n + 1))
        X = rng.standard_normal((d, n))
        lam = float(10 ** rng.uniform(-4, -1))
        beta = float(rng.uniform(0.1, 1.0))
        P = precond.build_sampled(X, lam, beta, m=m, seed=int(rng.integers(10_000)))
        x = rng.standard_normal(d)
        twice = precond.apply(P, precond.apply(P, x))
        oracle = np.linalg.solve(dense_sampled_H(X, P.sample_indices, P.rho), x)
        denom = max(1e-30, float(np.linalg.norm(oracle)))
        assert float(np.linalg.norm(twice - oracle)) / denom < 1e-8


def test_shift_positivity_and_basis_orthonormality():
    rng = np.random.default_rng(17)
    for builder in (lambda X: precond.build_full(X, 1e-3, 0.5),
                    lambda X: precond.build_sampled(X, 1e-3, 0.5, m=7, seed=1)):
        X = rng.standard_normal((6, 20))
        P = builder(X)
        assert np.all(P.shifts >= 0)
        assert np.abs(P.basis.T @ P.basis - np.eye(P.basis.shape[1])).max() < 1e-10


def test_preconditioner_save_load_round_trip(tmp_path):
    X = np.random.default_rng(18).standard_normal((5, 30))
    P = precond.build_sampled(X, 1e-3, 0.5, m=10, seed=2)
    path = tmp_path / "p.npz"
    precond.save_preconditioner(P, path)
    Q = precond.load_preconditioner(path)
    assert Q.mode == P.mode and Q.m == P.m
    assert Q.rho == P.rho
    assert np.array_equal(Q.basis, P.basis)
    assert np.array_equal(Q.shifts, P.shifts)
    assert np.array_equal(Q.sample_indices, P.sample_indices)
    x = np.random.default_rng(19).standard_normal(5)
    assert np.array_equal(precond.apply(P, x), precond.apply(Q, x))
