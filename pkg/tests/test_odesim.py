import numpy as np
import pytest

from odecal.odesim import (
    InvalidDim,
    NoiseSpec,
    NonFiniteState,
    OdeProblem,
    design2_init,
    design2_rhs,
    integrate,
    make_design1,
    make_design2,
    philox_stream,
    sample_panel,
)


def test_exponential_solution():
    prob = OdeProblem(order=1, dim=1, rhs=lambda z: z[..., :1].copy(), init=[[1.0]])
    truth = integrate(prob, step=1e-3)
    assert truth.deriv([1.0], 0)[0, 0] == pytest.approx(np.e, abs=1e-8)


def test_harmonic_solution():
    prob = OdeProblem(order=2, dim=1, rhs=lambda z: -z[..., :1], init=[[0.0], [1.0]])
    truth = integrate(prob, step=1e-3)
    assert truth.deriv([1.0], 0)[0, 0] == pytest.approx(np.sin(1.0), abs=1e-8)


def test_design2_x3_polynomial_exact():
    _, _, truth = make_design2(50, 0.3, 4)
    init = design2_init()
    t = np.linspace(0, 1, 101)
    want = init[0, 2] + init[1, 2] * t + t ** 2
    assert np.max(np.abs(truth.deriv(t, 0)[:, 2] - want)) < 1e-10
    assert np.min(truth.deriv(t, 0)[:, 2]) > 0.5


def test_rk4_order_four_self_convergence():
    prob, _, _ = make_design2(10, 0.0, 0)
    ends = [integrate(prob, step=s).state([1.0]) for s in (2e-3, 1e-3, 5e-4)]
    ratio = np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2])
    assert 10.0 <= ratio <= 22.0


def test_step_precondition():
    prob = OdeProblem(order=1, dim=1, rhs=lambda z: z, init=[[1.0]])
    with pytest.raises(ValueError):
        integrate(prob, step=0.05)


def test_design1_row_sparsity_and_shared_support():
    prob, _, _ = make_design1(12, 30, 9)
    base = prob.rhs(np.zeros(12))
    cols = np.zeros((12, 12))
    for j in range(12):
        e = np.zeros(12)
        e[j] = 1.0
        cols[:, j] = prob.rhs(e) - base
    nz = np.abs(cols) > 1e-12
    assert np.all(nz.sum(axis=1) == 5)
    # One shared index set across rows.
    support = np.flatnonzero(nz[0])
    assert all(np.array_equal(np.flatnonzero(nz[i]), support) for i in range(12))


def test_design1_noise_is_unit_variance():
    _, panel, truth = make_design1(5, 400, 21)
    resid = np.concatenate([
        panel.values[j] - truth.deriv(panel.times[j], 0)[:, j]
        for j in range(5)
    ])
    assert np.std(resid) == pytest.approx(1.0, abs=0.1)


def test_design1_determinism_and_dim_guard():
    _, p1, _ = make_design1(6, 25, 42)
    _, p2, _ = make_design1(6, 25, 42)
    assert all(np.array_equal(a, b) for a, b in zip(p1.values, p2.values))
    with pytest.raises(InvalidDim):
        make_design1(4, 25, 0)


@pytest.mark.parametrize("sigma", [0.2, 0.5, 0.8])
@pytest.mark.parametrize("n", [100, 200])
def test_design2_accepts_paper_grid(sigma, n):
    _, panel, _ = make_design2(n, sigma, 0)
    assert panel.n_components == 8
    assert all(len(t) == n for t in panel.times)


def test_design2_noiseless_panel_equals_truth():
    _, panel, truth = make_design2(60, 0.0, 13)
    for j in range(8):
        want = truth.deriv(panel.times[j], 0)[:, j]
        assert np.array_equal(panel.values[j], want)


def test_design2_divisor_guard():
    z = np.ones(16)
    z[2] = 0.05
    with pytest.raises(NonFiniteState):
        design2_rhs(z)
    with pytest.raises(ValueError):
        make_design2(50, -0.1, 0)


def test_nonfinite_state_detected():
    # x' = x^2 from x(0)=2 blows up inside [0, 1].
    prob = OdeProblem(order=1, dim=1, rhs=lambda z: z[..., :1] ** 2, init=[[2.0]])
    with pytest.raises(NonFiniteState):
        integrate(prob, step=1e-3)


def test_noise_cross_component_independence():
    # Empirical lag-0 covariance between component noises shrinks with the
    # number of replications.
    covs = []
    for rep in range(40):
        _, panel, truth = make_design1(5, 50, 1000 + rep)
        e = np.stack([
            panel.values[j] - truth.deriv(panel.times[j], 0)[:, j]
            for j in range(5)
        ])
        covs.append(np.mean(e[0] * e[1]))
    assert abs(np.mean(covs)) < 3.0 / np.sqrt(40 * 50)


def test_philox_streams_are_independent_and_stable():
    a = philox_stream(7, 1).standard_normal(5)
    b = philox_stream(7, 1).standard_normal(5)
    c = philox_stream(7, 2).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sample_panel_user_times():
    prob = OdeProblem(order=1, dim=2, rhs=lambda z: 0.0 * z, init=[[1.0, 2.0]])
    truth = integrate(prob, step=1e-2)
    times = [np.array([0.1, 0.4, 0.9]), np.array([0.2, 0.8])]
    panel = sample_panel(truth, NoiseSpec(sigmas=0.0, sizes=[3, 2], seed=0,
                                          times=times))
    assert np.allclose(panel.values[0], 1.0)
    assert np.allclose(panel.values[1], 2.0)
    assert panel.sizes == [3, 2]


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(sigmas=-1.0, sizes=10)
    with pytest.raises(ValueError):
        NoiseSpec(sigmas=1.0, sizes=1)
