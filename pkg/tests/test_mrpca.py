import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.exceptions import ConvergenceWarning

from masked_rpca import mrpca
from masked_rpca.diagnostics import dual_ascent_identity, mrpca_subgradient_violations
from masked_rpca.estimators import auto_rho
from masked_rpca.exceptions import DimensionMismatchError, InvalidInputError
from masked_rpca.mrpca import MrpcaConfig, MrpcaState, solve_mrpca

from oracles import soft_oracle, svt_oracle
from scenes import overlay_scene


def random_state(seed, shape=(6, 4), W=None):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=shape)
    L = rng.uniform(size=shape)
    W = rng.uniform(size=shape) if W is None else W
    U = rng.normal(size=shape)
    return X, MrpcaState(L, W, U)


# ---------------------------------------------------------------- config

@pytest.mark.parametrize("field,value", [
    ("lambda_w", 0.0), ("rho_x", -1.0), ("tau_L", 1.5), ("tau_W", 0.0), ("max_iters", 0),
    ("tol_gap", 0.0),
])
def test_config_validation(field, value):
    with pytest.raises(InvalidInputError):
        MrpcaConfig(**{field: value})


# ---------------------------------------------------------------- gradients

def test_lambda_L_vanishes_on_full_mask():
    X, s = random_state(0, W=np.ones((6, 4)))
    assert np.array_equal(mrpca.lambda_L(s, X, 0.7), np.zeros((6, 4)))


def test_lambda_L_vanishes_at_data_without_dual():
    X, s = random_state(1)
    s = MrpcaState(X.copy(), s.W, np.zeros_like(X))
    assert np.array_equal(mrpca.lambda_L(s, X, 0.7), np.zeros_like(X))


def test_gradients_match_elementwise_oracle():
    X, s = random_state(2)
    rho = 0.3
    L_new = np.random.default_rng(3).uniform(size=X.shape)
    exp_L = np.empty_like(X)
    exp_W = np.empty_like(X)
    for i, j in np.ndindex(X.shape):
        w, l, x, u = s.W[i, j], s.L[i, j], X[i, j], s.U_x[i, j]
        exp_L[i, j] = (1 - w) * ((l - x) * (1 - w) + u / rho)
        lp = L_new[i, j]
        exp_W[i, j] = (x - lp) * ((lp - x) * (1 - w) + u / rho)
    np.testing.assert_allclose(mrpca.lambda_L(s, X, rho), exp_L, rtol=1e-15, atol=1e-15)
    np.testing.assert_allclose(mrpca.lambda_W(s, X, rho, L_new=L_new), exp_W, rtol=1e-15,
                               atol=1e-15)


# ---------------------------------------------------------------- L update

def test_update_L_with_stationary_gradient():
    X, s = random_state(4, W=np.ones((6, 4)))
    cfg = MrpcaConfig(rho_x=2.0)
    np.testing.assert_allclose(mrpca.update_L(s, X, cfg), svt_oracle(s.L, cfg.tau_L / cfg.rho_x),
                               atol=1e-10)


def test_update_L_full_shrink():
    X, s = random_state(5)
    s.U_x[:] = 0.0  # the argument L - tau*grad then no longer depends on rho
    cfg = MrpcaConfig(rho_x=1e-3)
    arg = s.L - cfg.tau_L * mrpca.lambda_L(s, X, cfg.rho_x)
    assert cfg.tau_L / cfg.rho_x > np.linalg.norm(arg, 2)
    assert np.array_equal(mrpca.update_L(s, X, cfg), np.zeros_like(X))


def test_update_L_matches_prox_oracle():
    X, s = random_state(6)
    cfg = MrpcaConfig(rho_x=0.8, tau_L=0.4)
    Y = s.L - cfg.tau_L * mrpca.lambda_L(s, X, cfg.rho_x)
    delta = cfg.tau_L / cfg.rho_x
    got = mrpca.update_L(s, X, cfg)
    np.testing.assert_allclose(got, svt_oracle(Y, delta), atol=1e-8)

    # the result minimizes the linearized subproblem against random competitors
    def sub(Lc):
        return (np.linalg.svd(Lc, compute_uv=False).sum()
                + cfg.rho_x / (2 * cfg.tau_L) * np.sum((Lc - Y) ** 2))

    rng = np.random.default_rng(7)
    best = sub(got)
    for _ in range(100):
        assert best <= sub(got + 0.02 * rng.normal(size=got.shape)) + 1e-12


# ---------------------------------------------------------------- W update

def test_update_W_from_zero_with_zero_gradient():
    X = np.full((4, 3), 0.3)
    s = MrpcaState(X.copy(), np.zeros_like(X), np.zeros_like(X))
    assert np.array_equal(mrpca.update_W(s, X, MrpcaConfig()), np.zeros_like(X))


def test_update_W_clamps_to_one():
    X = np.zeros((2, 2))
    cfg = MrpcaConfig(lambda_w=0.1, rho_x=1.0, tau_W=0.5)
    thr = cfg.lambda_w * cfg.tau_W / cfg.rho_x
    # L = X so the gradient vanishes and the argument is W itself
    s = MrpcaState(X.copy(), np.full((2, 2), 1.0), np.zeros((2, 2)))
    s.W[0, 0] = 1.0 + thr + 0.3
    out = mrpca.update_W(s, X, cfg)
    assert out[0, 0] == 1.0
    assert out[1, 1] == pytest.approx(1.0 - thr)


def test_update_W_matches_per_entry_oracle():
    X, s = random_state(8)
    cfg = MrpcaConfig(lambda_w=0.2, rho_x=0.5, tau_W=0.7)
    L_new = np.random.default_rng(9).uniform(size=X.shape)
    expected = np.empty_like(X)
    for i, j in np.ndindex(X.shape):
        x, w, u, lp = X[i, j], s.W[i, j], s.U_x[i, j], L_new[i, j]
        grad = (x - lp) * ((lp - x) * (1 - w) + u / cfg.rho_x)
        v = soft_oracle(w - cfg.tau_W * grad, cfg.lambda_w * cfg.tau_W / cfg.rho_x)
        expected[i, j] = min(max(v, 0.0), 1.0)
    np.testing.assert_allclose(mrpca.update_W(s, X, cfg, L_new=L_new), expected, rtol=0,
                               atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-4, 10), st.floats(0.01, 1))
def test_update_W_stays_in_unit_box(seed, lam, tau):
    X, s = random_state(seed)
    out = mrpca.update_W(s, X, MrpcaConfig(lambda_w=lam, tau_W=tau))
    assert out.min() >= 0 and out.max() <= 1


# ---------------------------------------------------------------- dual update

def test_update_dual_unchanged_at_feasible_point():
    X, s = random_state(10)
    s = MrpcaState(X.copy(), s.W, s.U_x)
    assert np.array_equal(mrpca.update_dual(s, X, 0.9), s.U_x)


def test_update_dual_zero_penalty():
    X, s = random_state(11)
    assert np.array_equal(mrpca.update_dual(s, X, 0.0), s.U_x)


def test_update_dual_matches_oracle():
    X, s = random_state(12)
    rho = 0.4
    expected = np.empty_like(X)
    for i, j in np.ndindex(X.shape):
        expected[i, j] = s.U_x[i, j] + rho * (1 - s.W[i, j]) * (s.L[i, j] - X[i, j])
    np.testing.assert_allclose(mrpca.update_dual(s, X, rho), expected, rtol=0, atol=1e-15)


# ---------------------------------------------------------------- solver

def test_median_initialization():
    X = np.array([[0.1, 0.5, 0.3], [0.9, 0.2, 0.4]])
    np.testing.assert_array_equal(mrpca.median_init(X), [[0.3] * 3, [0.4] * 3])


def test_rank_one_without_foreground():
    rng = np.random.default_rng(13)
    X = np.outer(rng.uniform(0.2, 0.8, 64), rng.uniform(0.5, 1.0, 20))
    # W = 1, L = 0 is also stationary (and cheaper for this small lambda_w);
    # the data-scaled penalty keeps the iteration on the feasible branch
    cfg = MrpcaConfig(rho_x=auto_rho(X), tol_gap=1e-9, tol_change=1e-9, max_iters=2000)
    res = solve_mrpca(X, cfg)
    assert res.converged
    assert res.W.max() < 1e-3
    assert np.linalg.norm((1 - res.W) * (X - res.L)) < 1e-6
    np.testing.assert_allclose(res.L, X, atol=1e-3)


def test_huge_lambda_gives_empty_mask():
    _, X, _ = overlay_scene(dims=(8, 8, 20))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        res = solve_mrpca(X, MrpcaConfig(lambda_w=1e3, rho_x=0.1, max_iters=200))
    assert np.array_equal(res.W, np.zeros_like(X))


def test_trace_records_every_iteration():
    _, X, _ = overlay_scene(dims=(8, 8, 20))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        res = solve_mrpca(X, MrpcaConfig(rho_x=0.1, max_iters=7, tol_gap=1e-12))
    assert len(res.trace) == res.n_iter == 7
    assert not res.converged


def test_non_convergence_warns():
    _, X, _ = overlay_scene(dims=(8, 8, 20))
    with pytest.warns(ConvergenceWarning):
        res = solve_mrpca(X, MrpcaConfig(rho_x=0.1, max_iters=3))
    assert res.converged is False


def test_runs_are_deterministic():
    _, X, _ = overlay_scene(dims=(8, 8, 20))
    cfg = MrpcaConfig(rho_x=0.1, max_iters=30)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        a, b = solve_mrpca(X, cfg), solve_mrpca(X, cfg)
    assert a.trace.to_csv() == b.trace.to_csv()
    assert np.array_equal(a.W, b.W)


def test_inputs_checked():
    with pytest.raises(DimensionMismatchError):
        solve_mrpca(np.zeros((2, 2, 2)))
    with pytest.raises(InvalidInputError):
        solve_mrpca(np.array([[np.inf, 0.0]]))


def test_invariants_along_a_short_run():
    spec, X, _ = overlay_scene(dims=(16, 16, 20))
    cfg = MrpcaConfig(lambda_w=1e-3, rho_x=0.1, max_iters=60)
    checks = []

    def cb(prev, new):
        assert new.W.min() >= 0 and new.W.max() <= 1
        checks.append((dual_ascent_identity(prev, new, X, cfg).rel_error,
                       *mrpca_subgradient_violations(prev, new, X, cfg)))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        solve_mrpca(X, cfg, callback=cb)
    checks = np.array(checks)
    assert checks[:, 0].max() < 1e-8
    assert checks[:, 1].max() < 1e-6
    assert checks[:, 2].max() < 1e-6


def test_coarse_gap_trend_is_non_increasing():
    _, X, _ = overlay_scene()
    res = solve_mrpca(X, MrpcaConfig(lambda_w=1e-3, rho_x=0.05))
    gaps = res.trace["gap"][9::10]
    assert np.all(np.diff(gaps) <= 1e-12)
