"""Boundary-corrected polynomial kernels for derivative estimation.

A kernel of derivative order ``kappa`` and moment order ``k`` is a polynomial
supported on ``[-tau, q*tau]`` whose monomial moments vanish for every power
``j < k`` except ``j = kappa``, where the moment equals ``(-1)^kappa * kappa!``.
Shrinking ``q`` below 1 gives the asymmetric-support variants used near the
left edge of the observation interval; mirrored copies handle the right edge.

The kernel and its derivatives up to order ``kappa`` vanish at both support
endpoints, so each kernel is a legitimate ``kappa``-th derivative-order kernel
and the resulting estimates stay continuous across the boundary band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

__all__ = [
    "BoundaryKernel",
    "KernelFamily",
    "InvalidOrder",
    "SingularMomentSystem",
    "build_kernel",
    "eval_kernel",
    "kernel_cdf",
    "kernel_moment",
]

# Condition-number ceiling for the constraint system.
MAX_CONDITION = 1e12

# Default spacing of the memoized q grid.
Q_GRID_STEP = 0.01


class InvalidOrder(ValueError):
    """Moment order too small for the requested derivative order."""


class SingularMomentSystem(RuntimeError):
    """The moment/boundary constraint system is numerically singular."""


@dataclass(frozen=True)
class BoundaryKernel:
    """Polynomial kernel on ``[lo, hi]`` with prescribed monomial moments.

    ``coeffs`` are ascending-power polynomial coefficients valid inside the
    support; the kernel is zero outside.  ``cdf_coeffs`` is the antiderivative
    pinned to zero at ``lo``.  ``moment_k`` is the free k-th moment (the
    constant left unconstrained by the moment conditions).

    Direct kernels have support ``[-tau, q*tau]``; kernels produced by
    :meth:`mirror` have support ``[-q*tau, tau]`` and carry ``mirrored=True``.
    """

    deriv_order: int
    moment_order: int
    q: float
    support_radius: float
    coeffs: np.ndarray
    cdf_coeffs: np.ndarray
    lo: float
    hi: float
    moment_k: float
    mirrored: bool = False

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def cdf_total(self) -> float:
        """Integral of the kernel over its whole support."""
        return float(npoly.polyval(self.hi, self.cdf_coeffs))

    def __call__(self, x):
        return eval_kernel(self, x)

    def mirror(self) -> "BoundaryKernel":
        """Right-edge counterpart ``(-1)^kappa * K(-x)`` on ``[-hi, -lo]``.

        The sign keeps the full set of moment identities intact on the
        flipped support.
        """
        kappa = self.deriv_order
        n = np.arange(len(self.coeffs))
        coeffs = (-1.0) ** (kappa + n) * self.coeffs
        kernel = object.__new__(BoundaryKernel)
        cdf = npoly.polyint(coeffs)
        cdf[0] = -npoly.polyval(-self.hi, cdf)
        object.__setattr__(kernel, "deriv_order", kappa)
        object.__setattr__(kernel, "moment_order", self.moment_order)
        object.__setattr__(kernel, "q", self.q)
        object.__setattr__(kernel, "support_radius", self.support_radius)
        object.__setattr__(kernel, "coeffs", coeffs)
        object.__setattr__(kernel, "cdf_coeffs", cdf)
        object.__setattr__(kernel, "lo", -self.hi)
        object.__setattr__(kernel, "hi", -self.lo)
        object.__setattr__(kernel, "moment_k", (-1.0) ** (kappa + self.moment_order) * self.moment_k)
        object.__setattr__(kernel, "mirrored", not self.mirrored)
        return kernel


def build_kernel(deriv_order: int, moment_order: int, q: float = 1.0,
                 support_radius: float = 1.0) -> BoundaryKernel:
    """Construct the minimal-degree polynomial kernel ``K_{kappa,q}``.

    The polynomial satisfies, on support ``[-tau, q*tau]``:

    * moment constraints for ``j = 0..k-1``: all zero except the moment of
      order ``kappa`` which equals ``(-1)^kappa * kappa!``;
    * vanishing of the polynomial and its derivatives up to order ``kappa``
      at both support endpoints.

    That is ``k + 2*(kappa+1)`` linear constraints, met exactly by a
    polynomial of degree ``k + 2*kappa + 1``.

    Raises
    ------
    InvalidOrder
        If ``moment_order < deriv_order + 2``.
    SingularMomentSystem
        If the constraint matrix has condition number above ``1e12``.
    """
    kappa = int(deriv_order)
    k = int(moment_order)
    if kappa < 0:
        raise InvalidOrder("derivative order must be nonnegative")
    if k < kappa + 2:
        raise InvalidOrder(
            f"moment order k={k} must be at least deriv order + 2 = {kappa + 2}"
        )
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    tau = float(support_radius)
    if tau <= 0:
        raise ValueError("support_radius must be positive")

    lo, hi = -tau, q * tau
    n_constraints = k + 2 * (kappa + 1)
    degree = n_constraints - 1
    powers = np.arange(degree + 1)

    rows = []
    rhs = []
    # Moment constraints: integral of x^(i+j) over [lo, hi].
    for j in range(k):
        p = powers + j + 1
        rows.append((hi ** p - lo ** p) / p)
        rhs.append((-1.0) ** kappa * math.factorial(kappa) if j == kappa else 0.0)
    # Endpoint constraints: m-th derivative vanishes at both endpoints.
    for m in range(kappa + 1):
        fall = np.zeros(degree + 1)
        idx = powers >= m
        fall[idx] = np.array(
            [math.perm(int(i), m) for i in powers[idx]], dtype=float
        )
        for x0 in (lo, hi):
            row = np.zeros(degree + 1)
            row[idx] = fall[idx] * x0 ** (powers[idx] - m)
            rows.append(row)
            rhs.append(0.0)

    mat = np.array(rows)
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularMomentSystem(
            f"constraint system for (kappa={kappa}, k={k}, q={q}) has "
            f"condition number {cond:.3e}"
        )
    coeffs = np.linalg.solve(mat, np.array(rhs))

    # Free k-th moment, computed from the closed-form monomial integrals.
    p = powers + k + 1
    moment_k = float(np.dot(coeffs, (hi ** p - lo ** p) / p))

    cdf = npoly.polyint(coeffs)
    cdf[0] = -npoly.polyval(lo, cdf)
    return BoundaryKernel(
        deriv_order=kappa,
        moment_order=k,
        q=float(q),
        support_radius=tau,
        coeffs=coeffs,
        cdf_coeffs=cdf,
        lo=lo,
        hi=hi,
        moment_k=moment_k,
    )


def eval_kernel(kernel: BoundaryKernel, x):
    """Kernel value: the polynomial inside the support, zero outside."""
    x = np.asarray(x, dtype=float)
    inside = (x >= kernel.lo) & (x <= kernel.hi)
    out = np.where(inside, npoly.polyval(x, kernel.coeffs), 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def kernel_cdf(kernel: BoundaryKernel, x):
    """Antiderivative ``A(x) = int_lo^x K(u) du``, clamped outside support."""
    x = np.asarray(x, dtype=float)
    val = npoly.polyval(np.clip(x, kernel.lo, kernel.hi), kernel.cdf_coeffs)
    out = np.where(x <= kernel.lo, 0.0, np.where(x >= kernel.hi, kernel.cdf_total, val))
    if out.ndim == 0:
        return float(out)
    return out


def kernel_moment(kernel: BoundaryKernel, j: int) -> float:
    """j-th monomial moment by Gauss-Legendre quadrature over the support.

    The node count makes the rule exact for the degree of ``x^j * K(x)``,
    so this serves as an independent check on the linear-system construction.
    """
    if j < 0:
        raise ValueError("moment index must be nonnegative")
    npts = (kernel.degree + j) // 2 + 2
    nodes, weights = np.polynomial.legendre.leggauss(npts)
    half = (kernel.hi - kernel.lo) / 2.0
    mid = (kernel.hi + kernel.lo) / 2.0
    x = mid + half * nodes
    vals = npoly.polyval(x, kernel.coeffs) * x ** j
    return float(half * np.dot(weights, vals))


class KernelFamily:
    """Memoized access to ``K_{kappa,q}`` over a fixed q grid.

    Kernels are built on demand at the nearest grid point (step 0.01 by
    default) and cached, bounding memory while keeping runs reproducible.
    Instances are safe to share across threads once populated; construction
    of an individual kernel is single-threaded.
    """

    def __init__(self, deriv_order: int, moment_order: int,
                 support_radius: float = 1.0, q_step: float = Q_GRID_STEP):
        if moment_order < deriv_order + 2:
            raise InvalidOrder(
                f"moment order k={moment_order} must be at least "
                f"deriv order + 2 = {deriv_order + 2}"
            )
        self.deriv_order = int(deriv_order)
        self.moment_order = int(moment_order)
        self.support_radius = float(support_radius)
        self.q_step = float(q_step)
        self.n_grid = int(round(1.0 / self.q_step))
        self._cache: dict[tuple[int, bool], BoundaryKernel] = {}

    def snap_index(self, q: float) -> int:
        """Index of the nearest q-grid point, clamped to [0, 1]."""
        return min(max(int(round(q / self.q_step)), 0), self.n_grid)

    def at(self, q: float) -> BoundaryKernel:
        """Kernel with support ``[-tau, q*tau]`` at the snapped q."""
        idx = self.snap_index(q)
        key = (idx, False)
        if key not in self._cache:
            self._cache[key] = build_kernel(
                self.deriv_order, self.moment_order,
                q=idx * self.q_step, support_radius=self.support_radius,
            )
        return self._cache[key]

    def mirrored(self, q: float) -> BoundaryKernel:
        """Right-edge kernel with support ``[-q*tau, tau]`` at the snapped q."""
        idx = self.snap_index(q)
        key = (idx, True)
        if key not in self._cache:
            self._cache[key] = self.at(q).mirror()
        return self._cache[key]
