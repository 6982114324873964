import math

import numpy as np
import pytest

from precondopt import datagen, spectral
from precondopt.errors import InputError, StateError
from precondopt.losses import loss_model

from oracles import dense_cov, dense_H, hadamard_columns

RHO_GRID = [10.0 ** (-k) for k in range(1, 9)]


def _spectrum_from_eigs(eigs, n, d):
    return spectral.Spectrum(
        eigenvalues=np.asarray(eigs, dtype=float),
        left_basis=None, right_factors=None, n=n, d=d,
    )


# ---------------------------------------------------------------------------
# covariance_spectrum
# ---------------------------------------------------------------------------

def test_identity_covariance_gives_unit_eigenvalues():
    d, n = 4, 8
    X = np.sqrt(d) * np.concatenate([np.eye(d), np.eye(d)], axis=1)
    # columns scaled so X X^T / n = I
    assert np.allclose(dense_cov(X), np.eye(d))
    spec = spectral.covariance_spectrum(X)
    assert np.allclose(spec.eigenvalues, 1.0, atol=1e-12)


def test_synth_spectrum_matches_prescription():
    ds = datagen.synth(200, 40, "poly:0.5", seed=2)
    spec = spectral.covariance_spectrum(ds.X)
    want = datagen.prescribed_eigenvalues("poly:0.5", 40)
    assert np.allclose(spec.eigenvalues, want, rtol=1e-10, atol=0)


def test_spectrum_matches_dense_eigensolver_oracle():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((5, 20))
    # SVD route (right factors requested) against the symmetric eigensolver.
    spec = spectral.covariance_spectrum(X, right_factors=True)
    oracle = np.sort(np.linalg.eigvalsh(dense_cov(X)))[::-1]
    assert np.allclose(spec.eigenvalues, oracle, atol=1e-9)


def test_spectrum_routes_agree():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((7, 30))
    a = spectral.covariance_spectrum(X)                      # eigh route
    b = spectral.covariance_spectrum(X, right_factors=True)  # svd route
    assert np.allclose(a.eigenvalues, b.eigenvalues, atol=1e-11)


def test_spectrum_reconstruction_and_orthonormality():
    rng = np.random.default_rng(2)
    for d, n in [(6, 25), (25, 6)]:
        X = rng.standard_normal((d, n))
        spec = spectral.covariance_spectrum(X, right_factors=True)
        U, V, eig = spec.left_basis, spec.right_factors, spec.eigenvalues
        assert np.all(eig[:-1] >= eig[1:]) and np.all(eig >= 0)
        assert np.abs(U.T @ U - np.eye(spec.k)).max() < 1e-10
        assert np.abs(V.T @ V - np.eye(spec.k)).max() < 1e-8
        recon = (U * eig) @ U.T
        assert np.abs(recon - dense_cov(X)).max() <= 1e-8 * eig[0]


def test_spectrum_rejects_bad_input():
    with pytest.raises(InputError):
        spectral.covariance_spectrum(np.array([[1.0, np.nan]]))
    with pytest.raises(InputError):
        spectral.covariance_spectrum(np.ones(3))


# ---------------------------------------------------------------------------
# numerical_rank
# ---------------------------------------------------------------------------

def test_numerical_rank_flat_spectrum():
    spec = _spectrum_from_eigs(np.ones(100), n=200, d=100)
    assert spectral.numerical_rank(spec, 1.0) == pytest.approx(50.0, abs=1e-12)


def test_numerical_rank_vanishes_as_rho_grows():
    spec = _spectrum_from_eigs(datagen.prescribed_eigenvalues("poly:0.5", 50), 100, 50)
    values = [spectral.numerical_rank(spec, rho) for rho in (1e-2, 1.0, 1e2, 1e4, 1e6)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert values[-1] < 1e-4


def test_numerical_rank_matches_direct_summation():
    eigs = datagen.prescribed_eigenvalues("poly:0.5", 100)
    spec = _spectrum_from_eigs(eigs, 1000, 100)
    rho = 1e-5
    oracle = sum(float(s) / (float(s) + rho) for s in eigs)
    assert spectral.numerical_rank(spec, rho) == pytest.approx(oracle, rel=1e-12)


def test_numerical_rank_rejects_nonpositive_rho():
    spec = _spectrum_from_eigs([1.0], 2, 1)
    for rho in (0.0, -1.0):
        with pytest.raises(InputError):
            spectral.numerical_rank(spec, rho)


def test_numerical_rank_strictly_decreasing_in_rho():
    ds = datagen.synth(150, 30, "poly:1", seed=8)
    spec = spectral.covariance_spectrum(ds.X)
    vals = [spectral.numerical_rank(spec, rho) for rho in RHO_GRID]
    # grid is descending in rho, so gamma must be strictly increasing
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_low_rank_data_bounds_numerical_rank():
    rng = np.random.default_rng(3)
    k, d, n = 4, 12, 40
    X = rng.standard_normal((d, k)) @ rng.standard_normal((k, n))
    spec = spectral.covariance_spectrum(X)
    for rho in RHO_GRID:
        assert spectral.numerical_rank(spec, rho) < k


def test_proposition_poly_decay_bound():
    # For sigma_i^2 = i^{-2 tau}: gamma * rho^{1/(2 tau)} stays below the
    # integral constant of the decay over the whole rho grid.
    d = 500
    for tau, bound in [(0.5, math.log(1 + 0.1 * d) + 1.0),
                       (1.0, math.pi / 2 + 0.5)]:
        eigs = datagen.prescribed_eigenvalues(("poly", tau), d)
        spec = _spectrum_from_eigs(eigs, 2 * d, d)
        quantities = [
            spectral.numerical_rank(spec, rho) * rho ** (1.0 / (2 * tau))
            for rho in RHO_GRID
        ]
        assert max(quantities) <= bound


def test_proposition_exp_decay_bound():
    tau = 0.5
    eigs = datagen.prescribed_eigenvalues(("exp", tau), 400)
    spec = _spectrum_from_eigs(eigs, 800, 400)
    for rho in RHO_GRID:
        ratio = spectral.numerical_rank(spec, rho) / math.log(1.0 / rho)
        assert ratio <= (1.0 / tau) * 1.1


# ---------------------------------------------------------------------------
# coherence / leverage
# ---------------------------------------------------------------------------

def test_coherence_is_one_for_flat_factors():
    n, k = 16, 5
    V = hadamard_columns(n, k)
    spec = spectral.Spectrum(
        eigenvalues=np.linspace(2.0, 0.5, k), left_basis=None,
        right_factors=V, n=n, d=k,
    )
    for rho in (1e-6, 1e-2, 1.0, 100.0):
        assert spectral.coherence(spec, rho) == pytest.approx(1.0, abs=1e-9)


def test_coherence_concentrated_factors_reach_n_scale():
    n = 6
    eigs = np.array([1.0, 1e-9, 1e-9, 1e-9, 1e-9, 1e-9])
    spec = spectral.Spectrum(eigenvalues=eigs, left_basis=None,
                             right_factors=np.eye(n), n=n, d=n)
    rho = 1e-3
    # direct evaluation of the definition
    w = eigs / (eigs + rho)
    gamma = w.sum()
    oracle = max(n / gamma * float(w @ (np.eye(n)[i] ** 2)) for i in range(n))
    mu = spectral.coherence(spec, rho)
    assert mu == pytest.approx(oracle, rel=1e-12)
    assert mu > 0.9 * n


def test_coherence_on_synth_matches_direct_evaluation():
    ds = datagen.synth(500, 25, "poly:0.5", seed=4)
    spec = spectral.covariance_spectrum(ds.X, right_factors=True)
    rho = 1e-3
    w = spec.eigenvalues / (spec.eigenvalues + rho)
    gamma = float(w.sum())
    rows = spec.n / gamma * (spec.right_factors ** 2) @ w
    assert spectral.coherence(spec, rho) == pytest.approx(float(rows.max()), rel=1e-12)
    assert spectral.coherence(spec, rho) < 20.0


def test_coherence_range_and_classic_bound():
    for seed in range(4):
        ds = datagen.synth(128, 16, "poly:0.5", seed=seed)
        spec = spectral.covariance_spectrum(ds.X, right_factors=True)
        mu_classic_sq = spec.n * float(np.max(spec.right_factors ** 2))
        for rho in (1e-5, 1e-2, 1.0):
            mu = spectral.coherence(spec, rho)
            assert 1.0 - 1e-9 <= mu <= spec.n + 1e-9
            assert mu <= mu_classic_sq + 1e-9


def test_coherence_requires_right_factors():
    ds = datagen.synth(50, 5, "poly:0.5", seed=1)
    spec = spectral.covariance_spectrum(ds.X)
    with pytest.raises(StateError):
        spectral.coherence(spec, 1.0)


def test_leverage_scores_match_dense_inverse_oracle():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((5, 20))
    spec = spectral.covariance_spectrum(X, right_factors=True)
    rho = 0.37
    scores = spectral.leverage_scores(X, spec, rho)
    oracle = np.diag(X.T @ np.linalg.solve(dense_H(X, rho), X))
    assert np.allclose(scores, oracle, rtol=1e-9, atol=1e-12)


def test_leverage_equal_weight_rows_equal_gamma():
    n, k = 8, 3
    V = hadamard_columns(n, k)
    eigs = np.array([3.0, 1.0, 0.25])
    U = np.eye(5)[:, :k]
    spec = spectral.Spectrum(eigenvalues=eigs, left_basis=U, right_factors=V, n=n, d=5)
    X = np.sqrt(n) * (U * np.sqrt(eigs)) @ V.T
    rho = 0.1
    scores = spectral.leverage_scores(X, spec, rho)
    gamma = spectral.numerical_rank(spec, rho)
    assert np.allclose(scores, gamma, rtol=1e-12)


def test_max_leverage_equals_mu_gamma():
    ds = datagen.synth(300, 20, "poly:0.5", seed=6)
    spec = spectral.covariance_spectrum(ds.X, right_factors=True)
    for rho in (1e-4, 1e-2):
        scores = spectral.leverage_scores(ds.X, spec, rho)
        mug = spectral.coherence(spec, rho) * spectral.numerical_rank(spec, rho)
        assert float(scores.max()) == pytest.approx(mug, rel=1e-8)


# ---------------------------------------------------------------------------
# condition_report
# ---------------------------------------------------------------------------

def test_condition_report_degenerate_when_beta_equals_L():
    ds = datagen.synth(100, 10, "poly:0.5", seed=7)
    report = spectral.condition_report(ds.X, loss_model("square"), lam=1e-3, beta=1.0)
    assert report.degenerate
    assert report.kappa_precond == spectral.KAPPA_FLOOR


def test_condition_report_identity_mode():
    ds = datagen.synth(100, 10, "poly:0.5", seed=7)
    report = spectral.condition_report(ds.X, loss_model("square"), lam=1e-3,
                                       beta=0.5, mode="identity")
    assert report.kappa_precond == report.kappa_original


def test_condition_report_rejects_beta_above_L():
    ds = datagen.synth(100, 10, "poly:0.5", seed=7)
    with pytest.raises(InputError):
        spectral.condition_report(ds.X, loss_model("logistic"), lam=1e-3, beta=0.5)


def test_condition_report_smooth_formulas():
    ds = datagen.synth(400, 20, "poly:0.5", seed=9)
    lam, beta = 1e-4, 0.5
    loss = loss_model("square")
    rep = spectral.condition_report(ds.X, loss, lam, beta)
    assert rep.kappa_original == pytest.approx(loss.L * rep.R_sq / lam, rel=1e-12)
    mug = rep.mu * rep.gamma
    assert rep.kappa_precond == pytest.approx((loss.L - beta) * mug / beta, rel=1e-12)

    m = 40
    rep_s = spectral.condition_report(ds.X, loss, lam, beta, mode="sampled", m=m)
    assert rep_s.rho == pytest.approx(ds.n * lam / (m * beta), rel=1e-12)
    mug_s = rep_s.mu * rep_s.gamma
    beta_hat = m * beta / ds.n
    assert rep_s.kappa_precond == pytest.approx(loss.L * mug_s / beta_hat, rel=1e-12)


def test_condition_report_nonsmooth_formulas():
    from precondopt.losses import LossModel

    ds = datagen.synth(200, 10, "poly:0.5", seed=10)
    hinge_like = LossModel(kind="square", L=1.0, smooth=False)
    lam, beta, r = 1e-3, 0.5, 2.0
    rep = spectral.condition_report(ds.X, hinge_like, lam, beta, r=r)
    assert rep.kappa_original == pytest.approx(hinge_like.L**2 * rep.R_sq / lam, rel=1e-12)
    mug = rep.mu * rep.gamma
    assert rep.kappa_precond == pytest.approx((1 + beta * r) ** 2 * mug / beta, rel=1e-12)


def test_cond2_always_holds():
    # R^2/(mu gamma) >= rho > lam/beta - lam/L, provably, for every instance.
    for seed in range(5):
        ds = datagen.synth(120, 12, "poly:0.5", seed=seed)
        for lam in (1e-6, 1e-3, 1.0):
            rep = spectral.condition_report(ds.X, loss_model("square"), lam, 0.9)
            assert rep.cond2_holds
            assert rep.R_sq / (rep.mu * rep.gamma) >= rep.rho - 1e-12


def test_cond1_flips_at_analytic_threshold():
    # Rank-one data with flat right factors: gamma = s^2/(s^2+rho), mu = 1,
    # R^2 = s^2, so the Lipschitz condition reads
    #   lam (L + beta r)^2 / (beta L^2) < s^2 + lam/beta,
    # which flips exactly at lam* = s^2 beta L^2 / ((L + beta r)^2 - L^2).
    d, n = 6, 32
    u = np.ones(d) / math.sqrt(d)
    X = np.outer(u, np.ones(n))  # s = 1
    loss = loss_model("square")
    beta, r = 0.5, 1.0
    lam_star = beta * loss.L**2 / ((loss.L + beta * r) ** 2 - loss.L**2)
    below = spectral.condition_report(X, loss, 0.5 * lam_star, beta, r=r)
    above = spectral.condition_report(X, loss, 2.0 * lam_star, beta, r=r)
    assert below.cond1_holds
    assert not above.cond1_holds


def test_condition_report_ranges_hold():
    for seed in range(3):
        ds = datagen.synth(150, 15, "poly:0.5", seed=seed)
        for lam, beta, mode, m in [(1e-4, 0.9, "full", None),
                                   (1e-2, 0.3, "sampled", 40),
                                   (1.0, 0.99, "identity", None)]:
            rep = spectral.condition_report(ds.X, loss_model("square"), lam, beta,
                                            mode=mode, m=m)
            assert 0 < rep.gamma <= min(ds.n, ds.d)
            assert 1.0 - 1e-9 <= rep.mu <= ds.n + 1e-9
            assert rep.kappa_original > 0 and rep.kappa_precond > 0


def test_condition_report_default_r_policy():
    ds = datagen.synth(50, 5, "poly:0.5", seed=3)
    lam = 1e-2
    rep = spectral.condition_report(ds.X, loss_model("square"), lam, 0.5)
    assert rep.r == pytest.approx(math.sqrt(rep.R_sq / lam), rel=1e-12)
