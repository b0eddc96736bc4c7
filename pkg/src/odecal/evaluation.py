"""Fit metrics, compositional-structure utilities, and the rate diagnostic.

The four benchmark metrics compare a fitted right-hand side against the
truth along the trajectory: M1/M2 integrate the Euclidean norm of the
deviation over time, M3/M4 take the worst component of the integrated
absolute deviation.  M1/M3 feed the network the true states; M2/M4 feed it
the estimated states, so they also absorb the Stage-1 error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CompositionalSpec",
    "GridMismatch",
    "MetricReport",
    "METRIC_GRID_SIZE",
    "intrinsic",
    "metrics",
    "metrics_from_values",
    "rate_bound",
]

METRIC_GRID_SIZE = 512


class GridMismatch(ValueError):
    """Metric input arrays do not share a common grid."""


@dataclass(frozen=True)
class CompositionalSpec:
    """Composition chain g_depth o ... o g_0 with per-layer structure.

    ``widths`` has length depth+2 and ends in 1; ``active`` gives how many
    inputs each layer's coordinate functions actually use; ``smoothness``
    holds Holder orders (``inf`` allowed); ``bounds`` the Holder constants.
    """

    depth: int
    widths: tuple
    active: tuple
    smoothness: tuple
    domain_lo: tuple = ()
    domain_hi: tuple = ()
    bounds: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(float(r) for r in self.widths))
        object.__setattr__(self, "active", tuple(float(r) for r in self.active))
        object.__setattr__(self, "smoothness", tuple(float(b) for b in self.smoothness))
        if self.depth < 0:
            raise ValueError("depth must be nonnegative")
        if len(self.widths) != self.depth + 2:
            raise ValueError("widths must have depth + 2 entries")
        if self.widths[-1] != 1:
            raise ValueError("the final width must be 1")
        if len(self.active) != self.depth + 1:
            raise ValueError("active must have depth + 1 entries")
        if len(self.smoothness) != self.depth + 1:
            raise ValueError("smoothness must have depth + 1 entries")
        if any(a > r for a, r in zip(self.active, self.widths[:-1])):
            raise ValueError("active variable counts cannot exceed layer widths")
        if any(b <= 0 for b in self.smoothness):
            raise ValueError("smoothness orders must be positive")
        if not self.bounds:
            object.__setattr__(self, "bounds", tuple(1.0 for _ in self.active))
        if len(self.bounds) != self.depth + 1:
            raise ValueError("bounds must have depth + 1 entries")


def intrinsic(spec: CompositionalSpec):
    """Intrinsic smoothness and dimension of a compositional function.

    Layer i carries effective smoothness ``beta_i * prod_{s>i}(beta_s ^ 1)``
    (empty product = 1); the layer minimizing effective smoothness per
    active variable wins, ties going to the smallest index.
    """
    beta = np.asarray(spec.smoothness, dtype=float)
    active = np.asarray(spec.active, dtype=float)
    n = beta.size
    eff = np.empty(n)
    for i in range(n):
        prod = 1.0
        for s in range(i + 1, n):
            prod *= min(beta[s], 1.0)
        eff[i] = beta[i] * prod
    ratio = eff / active
    i_star = int(np.argmin(ratio))  # argmin returns the first minimizer
    return float(eff[i_star]), int(active[i_star])


def rate_bound(L: int, N: int, n: int, k: int, nu: int,
               spec: CompositionalSpec) -> float:
    """Convergence-rate expression for the two-stage estimator.

    Four terms: Stage-1 noise amplified through the network, two
    approximation terms (zero when the intrinsic smoothness is infinite),
    and the estimation-complexity term.
    """
    if min(L, N, n, k, nu) <= 0:
        raise ValueError("L, N, n, k, nu must all be positive")
    beta_star, r_star = intrinsic(spec)
    term1 = (1.0 + float(N) ** L) * float(n) ** (-2.0 * (k - nu) / (2.0 * k + 1.0))
    if np.isinf(beta_star):
        term2 = 0.0
        term3 = 0.0
    else:
        exponent = 2.0
        for b in spec.smoothness[1:]:
            exponent *= min(b, 1.0)
        term2 = (N * 2.0 ** (-L)) ** exponent
        term3 = float(N) ** (-2.0 * beta_star / r_star)
    term4 = (L * N * np.log(n) + L ** 2 * N * np.log(L * N)) / n
    return float(term1 + term2 + term3 + term4)


@dataclass
class MetricReport:
    """The four deviation metrics plus the grid settings they used."""

    m1: float
    m2: float
    m3: float
    m4: float
    grid_size: int
    trim: float = 0.0

    def __post_init__(self):
        for name in ("m1", "m2", "m3", "m4"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative")

    def as_dict(self) -> dict:
        return {"M1": self.m1, "M2": self.m2, "M3": self.m3, "M4": self.m4}


def metrics_from_values(fhat_true, fhat_est, f0_true, grid,
                        trim: float = 0.0) -> MetricReport:
    """Metrics from pre-evaluated arrays sharing a common time grid."""
    fhat_true = np.asarray(fhat_true, dtype=float)
    fhat_est = np.asarray(fhat_est, dtype=float)
    f0_true = np.asarray(f0_true, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if not (fhat_true.shape == fhat_est.shape == f0_true.shape):
        raise GridMismatch("metric arrays must share one shape")
    if fhat_true.ndim != 2 or fhat_true.shape[0] != grid.size:
        raise GridMismatch("metric arrays must have one row per grid point")
    keep = slice(None)
    if trim > 0:
        inside = (grid >= trim) & (grid <= 1.0 - trim)
        if inside.sum() < 2:
            raise ValueError("trim leaves fewer than two grid points")
        keep = inside
    g = grid[keep]
    a = fhat_true[keep] - f0_true[keep]
    c = fhat_est[keep] - f0_true[keep]
    m1 = float(np.trapezoid(np.linalg.norm(a, axis=1), g))
    m2 = float(np.trapezoid(np.linalg.norm(c, axis=1), g))
    m3 = float(np.max(np.trapezoid(np.abs(a), g, axis=0)))
    m4 = float(np.max(np.trapezoid(np.abs(c), g, axis=0)))
    return MetricReport(m1=m1, m2=m2, m3=m3, m4=m4, grid_size=g.size, trim=trim)


def metrics(fhat, f0, truth, estimate, trim: float = 0.0) -> MetricReport:
    """Evaluate the four metrics on the estimate's grid.

    ``fhat`` maps stacked state rows to derivative rows (a trained network
    works directly); ``f0`` is the true right-hand side; ``truth`` is the
    dense solved trajectory; ``estimate`` a TrajectoryEstimate whose grid
    becomes the integration grid.
    """
    grid = estimate.grid
    z_true = truth.inputs(grid)
    z_est = estimate.design_matrix()
    if z_est.shape != z_true.shape:
        raise GridMismatch(
            f"estimate provides inputs of shape {z_est.shape}, truth "
            f"{z_true.shape}; orders or dimensions disagree"
        )
    f0_true = f0(z_true)
    return metrics_from_values(fhat(z_true), fhat(z_est), f0_true, grid, trim=trim)
