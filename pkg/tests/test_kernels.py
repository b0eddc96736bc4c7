import math

import numpy as np
import pytest

from odecal.kernels import (
    InvalidOrder,
    KernelFamily,
    build_kernel,
    eval_kernel,
    kernel_cdf,
    kernel_moment,
)

GRID = [(kappa, k, q)
        for kappa in (0, 1, 2)
        for k in (kappa + 2, kappa + 3)
        for q in (0.3, 0.6, 1.0)]


def expected_moment(kappa, j):
    return (-1.0) ** kappa * math.factorial(kappa) if j == kappa else 0.0


def test_epanechnikov_recovered():
    # Hand-solved 4x4 moment/boundary system at (kappa=0, k=2, q=1):
    # 0.75 * (1 - x^2), cubic coefficient exactly zero.
    ker = build_kernel(0, 2, 1.0)
    assert np.allclose(ker.coeffs, [0.75, 0.0, -0.75, 0.0], atol=1e-12)
    assert kernel_moment(ker, 0) == pytest.approx(1.0, abs=1e-12)
    assert kernel_moment(ker, 1) == pytest.approx(0.0, abs=1e-12)


def test_first_derivative_kernel_hand_solution():
    # Odd ansatz solution -(105/16) x (1 - x^2)^2 derived from the
    # constraint system by hand.
    ker = build_kernel(1, 3, 1.0)
    want = np.array([0.0, -105 / 16, 0.0, 210 / 16, 0.0, -105 / 16, 0.0])
    assert np.allclose(ker.coeffs, want, atol=1e-10)
    assert kernel_moment(ker, 0) == pytest.approx(0.0, abs=1e-10)
    assert kernel_moment(ker, 1) == pytest.approx(-1.0, abs=1e-10)
    assert kernel_moment(ker, 2) == pytest.approx(0.0, abs=1e-10)


def test_shrunk_support_keeps_moments():
    ker = build_kernel(0, 2, 0.5)
    assert (ker.lo, ker.hi) == (-1.0, 0.5)
    assert kernel_moment(ker, 0) == pytest.approx(1.0, abs=1e-10)
    assert kernel_moment(ker, 1) == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("kappa,k,q", GRID)
def test_moment_conditions_on_grid(kappa, k, q):
    ker = build_kernel(kappa, k, q)
    for j in range(k):
        got = kernel_moment(ker, j)
        assert got == pytest.approx(expected_moment(kappa, j), abs=1e-8)


def test_kth_moment_bounded_over_q():
    worst = 0.0
    for kappa in (0, 1, 2):
        for k in (kappa + 2, kappa + 3):
            for q in np.arange(0.3, 1.001, 0.05):
                worst = max(worst, abs(build_kernel(kappa, k, q).moment_k))
    assert worst < 1e3


def test_eval_outside_support_is_zero():
    ker = build_kernel(1, 3, 0.7)
    assert eval_kernel(ker, -2.0) == 0.0
    assert eval_kernel(ker, 5.0) == 0.0
    assert abs(eval_kernel(ker, ker.hi)) <= 1e-10
    assert abs(eval_kernel(ker, ker.lo)) <= 1e-10


def test_eval_center_positive():
    assert eval_kernel(build_kernel(0, 2, 1.0), 0.0) == pytest.approx(0.75)


def test_base_kernel_conditions():
    # At (kappa=0, q=1) the kernel integrates to 1, has finite L2 norm,
    # and vanishes at both support endpoints.
    ker = build_kernel(0, 2, 1.0)
    xs = np.linspace(-1, 1, 2001)
    vals = eval_kernel(ker, xs)
    assert np.trapezoid(vals, xs) == pytest.approx(1.0, abs=1e-6)
    assert np.isfinite(np.trapezoid(vals ** 2, xs))
    assert eval_kernel(ker, -1.0) == pytest.approx(0.0, abs=1e-12)
    assert eval_kernel(ker, 1.0) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("kappa,k", [(0, 2), (1, 3), (2, 4)])
def test_boundary_kernel_converges_to_interior(kappa, k):
    full = build_kernel(kappa, k, 1.0).coeffs
    dists = [np.max(np.abs(build_kernel(kappa, k, q).coeffs - full))
             for q in (0.9, 0.99, 0.999)]
    assert dists[0] > dists[1] > dists[2]
    assert dists[2] < 0.1 * dists[0]


@pytest.mark.parametrize("c", [0.5, 2.0])
@pytest.mark.parametrize("kappa,k", [(0, 2), (1, 3), (2, 4)])
def test_scaling_consistency(c, kappa, k):
    # A support radius of c rescales the unit kernel: K_c(x) = K_1(x/c) / c^(kappa+1).
    base = build_kernel(kappa, k, 0.7, support_radius=1.0)
    scaled = build_kernel(kappa, k, 0.7, support_radius=c)
    xs = np.linspace(-c, 0.7 * c, 100)
    ref = eval_kernel(base, xs / c) / c ** (kappa + 1)
    assert np.allclose(eval_kernel(scaled, xs), ref, atol=1e-8)


def test_invalid_order_raises():
    with pytest.raises(InvalidOrder):
        build_kernel(2, 3, 1.0)
    with pytest.raises(InvalidOrder):
        KernelFamily(1, 2)
    with pytest.raises(ValueError):
        build_kernel(0, 2, 1.5)


def test_mirror_preserves_moment_identities():
    ker = build_kernel(1, 3, 0.4).mirror()
    assert (ker.lo, ker.hi) == (-0.4, 1.0)
    assert kernel_moment(ker, 0) == pytest.approx(0.0, abs=1e-10)
    assert kernel_moment(ker, 1) == pytest.approx(-1.0, abs=1e-10)
    assert kernel_moment(ker, 2) == pytest.approx(0.0, abs=1e-10)


def test_cdf_matches_quadrature():
    ker = build_kernel(0, 3, 0.8)
    xs = np.linspace(-1.2, 1.0, 23)
    for x in xs:
        grid = np.linspace(ker.lo, min(max(x, ker.lo), ker.hi), 5001)
        want = np.trapezoid(eval_kernel(ker, grid), grid)
        assert kernel_cdf(ker, x) == pytest.approx(want, abs=1e-6)


def test_family_snaps_to_grid_and_caches():
    fam = KernelFamily(0, 2)
    a = fam.at(0.503)
    b = fam.at(0.5)
    assert a is b
    assert a.q == pytest.approx(0.5)
    m = fam.mirrored(0.499)
    assert m is fam.mirrored(0.5)
    assert fam.at(1.0).q == 1.0
