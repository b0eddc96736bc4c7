import numpy as np
import pytest

from odecal.evaluation import (
    CompositionalSpec,
    GridMismatch,
    MetricReport,
    intrinsic,
    metrics,
    metrics_from_values,
    rate_bound,
)
from odecal.odesim import OdeProblem, integrate
from odecal.smoother import TrajectoryEstimate


def linear_spec(nu_d):
    """Single-layer structure of a homogeneous linear system."""
    return CompositionalSpec(depth=0, widths=(nu_d, 1), active=(nu_d,),
                             smoothness=(np.inf,))


def additive_spec(beta_h, beta_g, nu_d):
    """Three-layer additive structure: coordinate maps, sum, then a link."""
    return CompositionalSpec(depth=2, widths=(nu_d, nu_d, 1, 1),
                             active=(1, nu_d, 1),
                             smoothness=(beta_h, np.inf, beta_g))


def test_intrinsic_linear_system():
    beta, r = intrinsic(linear_spec(6))
    assert np.isinf(beta)
    assert r == 6


@pytest.mark.parametrize("beta_h,beta_g", [(2.5, 1.7), (1.2, 0.8), (0.6, 3.0)])
def test_intrinsic_additive_model(beta_h, beta_g):
    beta, r = intrinsic(additive_spec(beta_h, beta_g, 8))
    assert beta == pytest.approx(min(beta_h, beta_g))
    assert r == 1


def test_intrinsic_single_layer_empty_product():
    spec = CompositionalSpec(depth=0, widths=(3, 1), active=(3,), smoothness=(2.0,))
    assert intrinsic(spec) == (2.0, 3)


def test_intrinsic_tie_breaks_to_smaller_index():
    spec = CompositionalSpec(depth=1, widths=(2, 2, 1), active=(2, 2),
                             smoothness=(1.0, 1.0))
    beta, r = intrinsic(spec)
    # Both layers give ratio 1/2; the first one wins.
    assert (beta, r) == (1.0, 2)


def test_compositional_spec_validation():
    with pytest.raises(ValueError):
        CompositionalSpec(depth=0, widths=(3, 2), active=(3,), smoothness=(1.0,))
    with pytest.raises(ValueError):
        CompositionalSpec(depth=0, widths=(3, 1), active=(4,), smoothness=(1.0,))
    with pytest.raises(ValueError):
        CompositionalSpec(depth=0, widths=(3, 1), active=(3,), smoothness=(-1.0,))


def test_rate_bound_infinite_smoothness_reduces_to_two_terms():
    spec = linear_spec(4)
    L, N, k, nu = 3, 8, 4, 2
    for n in (100, 10000):
        got = rate_bound(L, N, n, k, nu, spec)
        want = ((1 + N ** L) * n ** (-2 * (k - nu) / (2 * k + 1))
                + (L * N * np.log(n) + L ** 2 * N * np.log(L * N)) / n)
        assert got == pytest.approx(want, rel=1e-12)


def test_rate_bound_strictly_decreasing_in_n():
    spec = additive_spec(1.5, 2.0, 4)
    vals = [rate_bound(2, 6, n, 3, 1, spec) for n in (50, 100, 1000, 100000)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_rate_bound_with_growing_width_and_depth():
    spec = additive_spec(1.5, 2.0, 4)
    vals = []
    for n in (10 ** 3, 10 ** 6):
        L = max(1, int(round(np.log(n) ** 0.5)))
        N = max(2, int(round(np.exp(np.log(n) ** 0.25))))
        vals.append(rate_bound(L, N, n, 3, 1, spec))
    assert vals[1] < vals[0]


def test_rate_bound_validation():
    with pytest.raises(ValueError):
        rate_bound(0, 4, 100, 3, 1, linear_spec(2))


def _toy_truth(d=2):
    A = np.array([[0.0, 0.4], [-0.3, 0.0]])[:d, :d]
    prob = OdeProblem(order=1, dim=d, rhs=lambda z: z @ A.T + 1.0,
                      init=[[0.5] * d])
    return prob, integrate(prob, step=1e-2)


def _estimate_from(truth, grid, jitter=0.0):
    vals = truth.deriv(grid, 0).T + jitter
    return TrajectoryEstimate(grid=grid, values=vals, derivs={1: truth.deriv(grid, 1).T})


def test_metrics_zero_for_exact_fit():
    prob, truth = _toy_truth()
    grid = np.linspace(0, 1, 128)
    est = _estimate_from(truth, grid)
    report = metrics(prob.rhs, prob.rhs, truth, est)
    assert report.m1 == report.m2 == report.m3 == report.m4 == 0.0


def test_metrics_single_component_norms_coincide():
    prob, truth = _toy_truth(d=1)
    grid = np.linspace(0, 1, 64)
    est = _estimate_from(truth, grid, jitter=0.01)
    fhat = lambda z: prob.rhs(z) + 0.25
    report = metrics(fhat, prob.rhs, truth, est)
    assert report.m1 == pytest.approx(report.m3)
    assert report.m2 == pytest.approx(report.m4)


def test_metrics_constant_offset():
    prob, truth = _toy_truth()
    grid = np.linspace(0, 1, 256)
    est = _estimate_from(truth, grid)
    offset = np.array([0.7, 0.0])

    def fhat(z):
        return prob.rhs(z) + offset

    report = metrics(fhat, prob.rhs, truth, est)
    assert report.m1 == pytest.approx(0.7, abs=1e-12)
    assert report.m3 == pytest.approx(0.7, abs=1e-12)


def test_metric_norm_inequalities():
    rng = np.random.default_rng(3)
    grid = np.linspace(0, 1, 97)
    d = 4
    a = rng.normal(size=(97, d))
    c = rng.normal(size=(97, d))
    f0 = rng.normal(size=(97, d))
    report = metrics_from_values(a, c, f0, grid)
    per_comp = np.trapezoid(np.abs(a - f0), grid, axis=0)
    assert report.m3 <= np.sum(per_comp) + 1e-12
    assert report.m1 <= np.sqrt(d) * np.max(
        np.trapezoid(np.max(np.abs(a - f0), axis=1), grid)) + 1e-9
    assert min(report.m1, report.m2, report.m3, report.m4) >= 0.0


def test_metrics_trim_flag():
    grid = np.linspace(0, 1, 101)
    a = np.zeros((101, 1))
    a[:5] = 100.0  # junk near the left edge only
    f0 = np.zeros((101, 1))
    full = metrics_from_values(a, a, f0, grid)
    trimmed = metrics_from_values(a, a, f0, grid, trim=0.1)
    assert trimmed.m1 == 0.0
    assert full.m1 > 0.0
    assert trimmed.trim == 0.1


def test_metrics_grid_mismatch():
    grid = np.linspace(0, 1, 32)
    a = np.zeros((32, 2))
    with pytest.raises(GridMismatch):
        metrics_from_values(a, a[:, :1], np.zeros((32, 2)), grid)
    prob, truth = _toy_truth()
    est = TrajectoryEstimate(grid=grid, values=np.zeros((2, 32)),
                             derivs={1: np.zeros((2, 32)),
                                     2: np.zeros((2, 32))})
    with pytest.raises(GridMismatch):
        metrics(prob.rhs, prob.rhs, truth, est)


def test_metric_report_validation():
    with pytest.raises(ValueError):
        MetricReport(m1=-0.1, m2=0, m3=0, m4=0, grid_size=10)
    with pytest.raises(ValueError):
        MetricReport(m1=np.nan, m2=0, m3=0, m4=0, grid_size=10)
