import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from sklearn.base import clone

from gaussvasicek.estimate import (OULSE, VasicekEstimate, VasicekLSE, lse_ou, lse_vasicek,
                                   normalized_errors, scaled_theta_error, vasicek_statistics)
from gaussvasicek.exceptions import (DegenerateDenominatorError, OverflowGuardError,
                                     ValidationError)
from gaussvasicek.kernels import Kernel
from gaussvasicek.simulate import (Grid, GridPath, SdeParams, gaussian_path, gaussian_paths,
                                   linear_sde_path, solve_linear_sde)


def noiseless(theta, mu, T, n):
    grid = Grid(T, n)
    return linear_sde_path(SdeParams(theta, mu), GridPath(grid, np.zeros(n + 1)))


def test_zero_noise_recovery():
    est = lse_vasicek(noiseless(1.0, 0.5, 5.0, 5000))
    assert abs(est.theta_hat - 1.0) <= 1e-3
    assert abs(est.mu_hat - 0.5) <= 1e-3
    assert est.rule == "trapezoid" and est.n == 5000 and est.T == 5.0


def test_zero_path_is_degenerate():
    zero = GridPath(Grid(1.0, 20), np.zeros(21))
    with pytest.raises(DegenerateDenominatorError):
        lse_vasicek(zero)
    with pytest.raises(DegenerateDenominatorError):
        lse_ou(zero)


def test_too_few_points_and_nonfinite():
    with pytest.raises(ValidationError):
        VasicekLSE(t_end=1.0).fit(np.zeros((1, 2)))
    with pytest.raises(ValidationError):
        VasicekLSE(t_end=1.0).fit(np.array([[0.0, np.nan, 1.0]]))


def test_ou_on_exponential_path():
    grid = Grid(10.0, 10_000)
    y = GridPath(grid, np.expm1(grid.times))
    # closed form of Y_T²/(2∫(e^t-1)²dt) for comparison
    T = 10.0
    exact = (math.expm1(T) ** 2) / (2 * (0.5 * math.expm1(2 * T) - 2 * math.expm1(T) + T))
    val = lse_ou(y)
    assert abs(val - 1.0) <= 1e-2
    assert val == pytest.approx(exact, rel=1e-4)


def test_ou_median_on_simulated_paths():
    k = Kernel("ex5", Hp=0.5, K=0.5)
    grid = Grid(10.0, 1000)
    G = gaussian_paths(k, grid, seed=13, n_paths=500)
    Y = solve_linear_sde(1.0, 0.0, G, 10.0)
    theta = OULSE(t_end=10.0).fit(Y).theta_
    assert abs(np.median(theta) - 1.0) <= 0.05


def test_mu_alpha_identity_on_noisy_path():
    noise = gaussian_path(Kernel("ex7", H=0.25), Grid(4.0, 800), seed=2)
    est = lse_vasicek(linear_sde_path(SdeParams(0.8, -0.3), noise))
    assert abs(est.mu_hat * est.theta_hat - est.alpha_hat) <= 1e-12 * (1 + abs(est.alpha_hat))


def test_csv_row():
    est = VasicekEstimate(1.0, 0.5, 0.5, 2.0, 5.0, 100)
    assert VasicekEstimate.CSV_HEADER.split(",") == ["T", "n", "theta_hat", "alpha_hat",
                                                     "mu_hat", "denom"]
    assert est.to_csv_row() == "5,100,1,0.5,0.5,2"


# -- normalized errors ------------------------------------------------------------------

def test_theta_component_zero_when_exact():
    est = VasicekEstimate(1.0, 0.5, 0.5, 1.0, 10.0, 100)
    err = normalized_errors(est, SdeParams(1.0, 0.5), Kernel("ex1", H=0.3), 10.0)
    assert err.theta == 0.0 and err.mu == 0.0 and err.alpha == 0.0


def test_theta_component_arithmetic():
    # 1e-5 * 10^0.7 * e^10, computed by hand
    est = VasicekEstimate(1.0 + 1e-5, 0.0, 0.0, 1.0, 10.0, 100)
    err = normalized_errors(est, SdeParams(1.0, 0.0), Kernel("ex1", H=0.3), 10.0)
    diff = (1.0 + 1e-5) - 1.0
    expected = diff * 10 ** 0.7 * math.exp(10)
    assert err.theta == pytest.approx(expected, rel=1e-12)
    assert err.theta == pytest.approx(1.10394, rel=1e-4)
    assert err.log_abs_theta == pytest.approx(math.log(expected), rel=1e-12)


def test_mu_component_arithmetic():
    est = VasicekEstimate(1.0, 0.7, 0.7, 1.0, 10.0, 100)
    err = normalized_errors(est, SdeParams(1.0, 0.5), Kernel("ex1", H=0.3), 10.0)
    assert err.mu == pytest.approx(0.2 * 10 ** 0.7, rel=1e-12)
    assert err.mu == pytest.approx(1.00237, rel=1e-5)


def test_overflow_guard():
    with pytest.raises(OverflowGuardError):
        scaled_theta_error(2.0, 1.0, 0.0, 800.0)


# -- scikit-learn wrappers ------------------------------------------------------------

def test_transformer_api():
    k = Kernel("ex4", H=0.25)
    grid = Grid(5.0, 500)
    G = gaussian_paths(k, grid, seed=3, n_paths=8)
    X = solve_linear_sde(1.0, 0.4, G, 5.0)
    lse = VasicekLSE(t_end=5.0)
    out = lse.fit_transform(X)
    assert out.shape == (8, 3)
    for i in range(8):
        est = lse_vasicek(GridPath(grid, X[i]))
        assert out[i, 0] == pytest.approx(est.theta_hat, rel=1e-12)
        assert out[i, 2] == pytest.approx(est.mu_hat, rel=1e-12)
    assert clone(lse).get_params() == {"t_end": 5.0}
    with pytest.raises(ValidationError):
        VasicekLSE().fit(X)
    path_fit = VasicekLSE().fit(GridPath(grid, X[0]))
    assert path_fit.theta_[0] == pytest.approx(out[0, 0], rel=1e-12)


# -- properties -------------------------------------------------------------------------

@given(st.floats(0.2, 2.0), st.floats(-1.0, 1.0), st.integers(0, 50))
def test_identity_mu_theta_alpha(theta, mu, seed):
    noise = gaussian_path(Kernel("ex2", Hp=0.5, K=0.5), Grid(3.0, 300), seed=seed)
    path = linear_sde_path(SdeParams(theta, mu), noise)
    try:
        est = lse_vasicek(path)
    except DegenerateDenominatorError:
        assume(False)
    assert abs(est.mu_hat * est.theta_hat - est.alpha_hat) <= 1e-12 * (1 + abs(est.alpha_hat))


@given(st.floats(0.2, 2.0), st.floats(-1, 1), st.floats(0.1, 10))
def test_theta_invariant_under_path_scaling(theta, mu, scale):
    # scaling the whole path scales alpha but leaves theta unchanged
    x = noiseless(theta, mu if abs(mu) > 0.05 else 0.5, 2.0, 400).values
    th1, a1, _, _ = vasicek_statistics(x[None, :], 2.0)
    th2, a2, _, _ = vasicek_statistics(scale * x[None, :], 2.0)
    assert th2[0] == pytest.approx(th1[0], rel=1e-9)
    assert a2[0] == pytest.approx(scale * a1[0], rel=1e-9)


def test_consistency_trend():
    k = Kernel("ex1", H=0.3)
    med = []
    for T in (4.0, 7.0, 10.0):
        grid = Grid(T, int(200 * T))
        G = gaussian_paths(k, grid, seed=19, n_paths=200)
        X = solve_linear_sde(1.0, 0.5, G, T)
        theta = VasicekLSE(t_end=T).fit(X).theta_
        med.append(np.median(np.abs(theta - 1.0)))
    assert med[0] > med[1] > med[2]


def test_quadrature_stability():
    k = Kernel("ex5", Hp=0.5, K=0.5)
    fine = gaussian_path(k, Grid(5.0, 2048), seed=4)
    vals = []
    for n in (256, 512, 1024, 2048):
        noise = GridPath(Grid(5.0, n), fine.values[:: 2048 // n])
        vals.append(lse_vasicek(linear_sde_path(SdeParams(1.0, 0.5), noise)).theta_hat)
    gaps = np.abs(np.diff(vals))
    assert gaps[-1] < gaps[0]
