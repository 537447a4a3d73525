import json
import math

import numpy as np
import pytest

from adomian_bsde.exact import blowup_horizon
from adomian_bsde.montecarlo import (
    KLExpansion,
    estimate_exp_quadratic_functional,
    ex1_conditional_bracket,
    ex1_conditional_bracket_mc,
    ex1_discretization_sweep,
    exp_quadratic_closed,
    exponential_equation_residual,
    ito_integral,
    kl_orthogonality_check,
    kl_product_formula,
    map_paths,
    sample_paths,
    stochastic_exponential,
    verify_exponential_equation_ex1,
)


@pytest.fixture(scope="module")
def bundle():
    return sample_paths(T=1.0, n_paths=4000, n_steps=200, seed=2024)


def test_paths_start_at_zero(bundle):
    assert np.all(bundle.W[:, 0] == 0.0) and np.all(bundle.Wperp[:, 0] == 0.0)
    assert bundle.W.shape == (4000, 201)
    assert bundle.increment_check()["passed"]


def test_sample_paths_deterministic_and_partition_free():
    a = sample_paths(0.5, 300, 16, seed=5)
    b = sample_paths(0.5, 300, 16, seed=5)
    c = sample_paths(0.5, 300, 16, seed=5, n_jobs=4)
    assert a.W.tobytes() == b.W.tobytes() == c.W.tobytes()
    assert a.Wperp.tobytes() == c.Wperp.tobytes()
    chunked = map_paths(lambda W, Wp, dt: W, 5, 300, 16, 0.5, chunk=7)
    assert chunked.tobytes() == a.W.tobytes()
    assert sample_paths(0.5, 300, 16, seed=6).W.tobytes() != a.W.tobytes()


def test_single_path_stream_matches_first_driver():
    # a W-only simulation reuses the W half of each path's stream
    two = map_paths(lambda W, Wp, dt: W, 9, 50, 32, 1.0, dims=2)
    one = map_paths(lambda W, dt: W, 9, 50, 32, 1.0, dims=1)
    assert two.tobytes() == one.tobytes()


def test_terminal_variance():
    n = 100_000
    WT = map_paths(lambda W, dt: W[:, -1], 31, n, 2, 1.0, dims=1)
    var = WT.var(ddof=1)
    # 5 sigma for a sample variance of N(0, 1) data
    assert abs(var - 1.0) <= 5 * math.sqrt(2.0 / n)


def test_sample_paths_validation():
    with pytest.raises(ValueError):
        sample_paths(1.0, 10, 1, seed=0)
    with pytest.raises(ValueError):
        sample_paths(1.0, 0, 10, seed=0)


def test_ito_integral_constant_integrand(bundle):
    m = ito_integral(bundle, lambda t, w, wp: 1.0)
    np.testing.assert_allclose(m, bundle.W[:, -1], atol=1e-12)
    mp = ito_integral(bundle, lambda t, w, wp: 1.0, driver="Wperp")
    np.testing.assert_allclose(mp, bundle.Wperp[:, -1], atol=1e-12)
    with pytest.raises(ValueError):
        ito_integral(bundle, lambda t, w, wp: 1.0, driver="B")


def test_ito_formula_identity():
    errs = []
    for n_steps in (50, 200, 800):
        b = sample_paths(1.0, 2000, n_steps, seed=77)
        I = ito_integral(b, lambda t, w, wp: w)
        diff = I - 0.5 * (b.W[:, -1] ** 2 - 1.0)
        errs.append(np.sqrt(np.mean(diff**2)))
        assert abs(I.mean()) < 5 * I.std() / math.sqrt(I.size)
    assert errs[0] > errs[1] > errs[2]


def test_ito_isometry(bundle):
    I = ito_integral(bundle, lambda t, w, wp: (1.0 - t) * w)
    var = I.var(ddof=1)
    # int_0^1 (1-t)^2 t dt = 1/12; sample-variance standard error via fourth moment
    se = math.sqrt(np.var(I**2, ddof=1) / I.size)
    assert abs(var - 1.0 / 12.0) < 5 * se


def test_stochastic_exponential_basics(bundle):
    assert stochastic_exponential(0.0, 0.0) == 1.0
    for kappa in (0.5, 1.0):
        e = stochastic_exponential(kappa * bundle.W[:, -1], kappa**2 * bundle.T)
        assert np.all(e > 0)
        se = e.std(ddof=1) / math.sqrt(e.size)
        assert abs(e.mean() - 1.0) < 5 * se


def test_degenerate_exponential_equation_is_exact(bundle):
    r = exponential_equation_residual(
        bundle, lambda t, w, wp: 0.0, lambda t, w, wp: 0.0, -1.0, 0.0, np.zeros(bundle.n_paths)
    )
    assert np.all(r == 0.0)


def test_exponential_equation_generic_matches_ex1(bundle):
    T = 0.5
    b = sample_paths(T, 500, 100, seed=3)
    s2 = math.sqrt(2)
    phi = lambda t, w, wp: 2 * np.tan(s2 * (T - t)) / s2 * w
    psi = lambda t, w, wp: -2 * np.tanh(s2 * (T - t)) / s2 * wp
    from adomian_bsde.exact import ex1_constant

    eta = np.sum(b.W[:, :-1] ** 2 + b.Wperp[:, :-1] ** 2, axis=1) * b.dt
    r = exponential_equation_residual(b, phi, psi, -1.0, ex1_constant(T), eta)
    report = verify_exponential_equation_ex1(T, 500, 100, seed=3, keep_residuals=True)
    np.testing.assert_allclose(r, report.residuals, atol=1e-12)


def test_exponential_equation_readings_small():
    q = verify_exponential_equation_ex1(0.5, 3000, 400, seed=1, c_reading="quotient")
    p = verify_exponential_equation_ex1(0.5, 3000, 400, seed=1, c_reading="product")
    assert q.passed and not p.passed
    assert abs(p.mean) > 100 * abs(q.mean)
    json.dumps(q.to_dict())


def test_exponential_equation_truncated_series_integrands():
    rep = verify_exponential_equation_ex1(0.5, 2000, 400, seed=4, order=15)
    assert rep.passed


def test_exponential_equation_horizon_guard():
    with pytest.raises(ValueError, match="blow-up"):
        verify_exponential_equation_ex1(1.06, 10, 10, seed=0)
    with pytest.raises(ValueError):
        ex1_discretization_sweep(0.5, 10, steps=(300, 1000), seed=0)


def test_exp_functional_refusals():
    h = blowup_horizon()
    with pytest.raises(ValueError, match="beyond blow-up horizon"):
        estimate_exp_quadratic_functional(2.0, 10, 10, seed=0)
    with pytest.raises(ValueError, match="beyond blow-up horizon"):
        estimate_exp_quadratic_functional(h, 10, 10, seed=0)
    with pytest.raises(ValueError, match="variance"):
        estimate_exp_quadratic_functional(0.95 * h, 10, 10, seed=0)
    assert exp_quadratic_closed(h) == math.inf


def test_exp_functional_small_T():
    assert estimate_exp_quadratic_functional(0.0, 10, 10, seed=0).mean == 1.0
    est = estimate_exp_quadratic_functional(0.05, 2000, 100, seed=0)
    assert est.mean == pytest.approx(1.0, abs=0.01)


def test_exp_functional_moderate_run():
    est = estimate_exp_quadratic_functional(0.5, 20_000, 500, seed=42)
    assert est.target == pytest.approx(1.146894, abs=1e-6)
    assert abs(est.z) < 4


def test_kl_product_formula():
    assert kl_product_formula(0.0, 5) == (1.0, 0.0)
    val, tail = kl_product_formula(0.5, 10_000)
    assert abs(val - exp_quadratic_closed(0.5)) < 1e-4
    assert tail < 1e-4
    one, _ = kl_product_formula(0.5, 1)
    assert one == pytest.approx((1 - 2 * 0.25 * 4 / math.pi**2) ** -0.5, rel=1e-15)
    assert one < val
    with pytest.raises(ValueError, match="blow-up"):
        kl_product_formula(1.2, 10)


def test_kl_tail_bound_covers_truncation():
    T = 0.8
    exact = exp_quadratic_closed(T)
    for n in (10, 100, 1000):
        val, tail = kl_product_formula(T, n)
        assert 0 < exact - val <= tail


def test_kl_eigenpairs():
    kl = KLExpansion(8)
    assert kl.lambdas[0] == pytest.approx(4 / math.pi**2)
    assert np.all(np.diff(kl.lambdas) < 0)
    chk = kl_orthogonality_check(8, 10_000)
    assert chk["max_off_diagonal"] < 1e-8
    assert chk["max_diagonal_error"] < 1e-8
    assert chk["max_eigen_residual"] < 1e-6


def test_conditional_bracket():
    assert ex1_conditional_bracket(0.5 - 1e-9, 0.0, 0.5) < 1e-15
    f0 = ex1_conditional_bracket(0.0, 0.0, 0.5)
    f1 = ex1_conditional_bracket(0.0, 1.0, 0.5)
    f2 = ex1_conditional_bracket(0.0, 2.0, 0.5)
    assert f2 - f0 == pytest.approx(4 * (f1 - f0), rel=1e-12)
    # truncated vs closed-form alpha
    assert ex1_conditional_bracket(0.0, 1.0, 0.5, N=None) == pytest.approx(f1, rel=1e-10)
    with pytest.raises(ValueError):
        ex1_conditional_bracket(0.6, 1.0, 0.5)


def test_conditional_bracket_nested_mc():
    exact = ex1_conditional_bracket(0.0, 1.0, 0.5)
    mean, se = ex1_conditional_bracket_mc(0.0, 1.0, 0.5, 20, n_paths=10_000, n_steps=1000, seed=8)
    assert abs(mean - exact) < 4 * se + 1e-4  # left-point sum bias is O(dt)
