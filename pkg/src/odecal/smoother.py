"""Gasser-Muller trajectory and derivative estimation from noisy samples.

Estimates for component ``j`` at time ``t``::

    xhat_j^(kappa)(t) = h^-(kappa+1) * sum_i [ int_{s_{i-1}}^{s_i}
                        K_{kappa,q}((t - u) / h) du ] * y_ji

where ``s_0 = 0 <= s_1 <= ... <= s_n = 1`` partitions the unit interval
around the observation times.  Segment integrals come from closed-form
polynomial antiderivatives, never numeric quadrature.  Within a distance
``tau*h`` of either edge the kernel is swapped for the boundary-corrected
member of the family (shrunk support toward the edge, mirrored on the right),
which removes the boundary bias that otherwise dominates derivative
estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .kernels import KernelFamily, kernel_cdf

__all__ = [
    "BandwidthTooLarge",
    "EmptyCandidateSet",
    "GasserMullerSmoother",
    "SmootherConfig",
    "TimeSeriesPanel",
    "TrajectoryEstimate",
    "default_bandwidth_grid",
    "gm_estimate",
    "loo_cv_score",
    "partition_points",
    "select_bandwidth",
    "smooth_panel",
]


class BandwidthTooLarge(ValueError):
    """Bandwidth times support radius reaches half the unit interval."""


class EmptyCandidateSet(ValueError):
    """Bandwidth selection was given no candidates."""


def _as_times(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ValueError("need a 1-d array of at least two time points")
    if np.any(np.diff(t) <= 0):
        raise ValueError("time points must be strictly increasing")
    if t[0] < 0.0 or t[-1] > 1.0:
        raise ValueError("time points must lie in [0, 1]")
    return t


@dataclass
class TimeSeriesPanel:
    """Noisy observations of a d-dimensional trajectory on [0, 1].

    Components may have different sample sizes and different (asynchronous)
    time stamps; each series must be strictly increasing in time.
    """

    times: list
    values: list

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValueError("times and values must have one entry per component")
        if not self.times:
            raise ValueError("panel needs at least one component")
        self.times = [_as_times(t) for t in self.times]
        vals = []
        for t, y in zip(self.times, self.values):
            y = np.asarray(y, dtype=float)
            if y.shape != t.shape:
                raise ValueError("values must align with times per component")
            if not np.all(np.isfinite(y)):
                raise ValueError("observed values must be finite")
            vals.append(y)
        self.values = vals

    @property
    def n_components(self) -> int:
        return len(self.times)

    @property
    def sizes(self) -> list:
        return [len(t) for t in self.times]

    def component(self, j: int):
        return self.times[j], self.values[j]


@dataclass
class TrajectoryEstimate:
    """Grid-evaluated trajectory and derivative estimates.

    ``values`` has shape (d, G); ``derivs`` maps each derivative order
    ``1..max_deriv`` to an array of the same shape.
    """

    grid: np.ndarray
    values: np.ndarray
    derivs: dict

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[1] != self.grid.size:
            raise ValueError("values must have one column per grid point")
        for kappa, arr in self.derivs.items():
            if arr.shape != self.values.shape:
                raise ValueError(f"derivative order {kappa} has inconsistent shape")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("estimate contains non-finite values")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def max_deriv(self) -> int:
        return max(self.derivs) if self.derivs else 0

    def deriv(self, kappa: int) -> np.ndarray:
        return self.values if kappa == 0 else self.derivs[kappa]

    def design_matrix(self) -> np.ndarray:
        """Stacked network inputs (x, x^(1), ..., x^(nu-1)), shape (G, nu*d)."""
        nu = self.max_deriv
        blocks = [self.values.T] + [self.derivs[k].T for k in range(1, nu)]
        return np.hstack(blocks)

    def response(self) -> np.ndarray:
        """Highest-order derivative, shape (G, d): the regression target."""
        return self.derivs[self.max_deriv].T


@dataclass
class SmootherConfig:
    """Settings for panel smoothing.

    ``bandwidth=None`` selects one bandwidth per component by leave-one-out
    cross validation at derivative order zero; the same bandwidth is reused
    for every derivative order of that component.
    """

    max_deriv: int = 1
    moment_order: int | None = None
    bandwidth: float | None = None
    candidates: np.ndarray | None = None
    eval_grid: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 200))
    support_radius: float = 1.0
    partition: str = "midpoint"

    def __post_init__(self):
        if self.max_deriv < 1:
            raise ValueError("max_deriv must be a positive integer")
        if self.moment_order is None:
            self.moment_order = self.max_deriv + 2
        if self.moment_order < self.max_deriv + 2:
            raise ValueError("moment_order must be at least max_deriv + 2")
        self.eval_grid = np.asarray(self.eval_grid, dtype=float)
        if np.any(self.eval_grid < 0) or np.any(self.eval_grid > 1):
            raise ValueError("eval_grid must lie within [0, 1]")
        if np.any(np.diff(self.eval_grid) <= 0):
            raise ValueError("eval_grid must be strictly increasing")
        if self.partition != "midpoint":
            raise ValueError(f"unknown partition rule {self.partition!r}")
        if self.bandwidth is not None and not 0 < self.bandwidth <= 1:
            raise ValueError("bandwidth must lie in (0, 1]")


def partition_points(times) -> np.ndarray:
    """Partition bounds s_0..s_n: endpoints of [0, 1] and cell midpoints."""
    t = _as_times(times)
    s = np.empty(t.size + 1)
    s[0] = 0.0
    s[-1] = 1.0
    s[1:-1] = 0.5 * (t[:-1] + t[1:])
    return s


def default_bandwidth_grid(n: int, support_radius: float = 1.0,
                           num: int = 20) -> np.ndarray:
    """Log-spaced candidate bandwidths from under- to over-smoothing."""
    lo = 1.5 / n
    hi = 0.45 / support_radius
    if lo >= hi:
        return np.array([hi])
    return np.geomspace(lo, hi, num)


def _check_bandwidth(h: float, support_radius: float):
    if h * support_radius >= 0.5:
        raise BandwidthTooLarge(
            f"h * tau = {h * support_radius:.3f} must stay below 1/2 so the "
            "two boundary bands cannot overlap"
        )
    if h <= 0:
        raise ValueError("bandwidth must be positive")


def _group_codes(family: KernelFamily, tgrid: np.ndarray, h: float) -> np.ndarray:
    """Integer code per eval point identifying the boundary kernel it needs.

    Code ``n_grid`` means the interior kernel; smaller nonnegative codes are
    left-edge q indices, negative codes are right-edge (mirrored) q indices.
    """
    tau_h = family.support_radius * h
    codes = np.full(tgrid.size, family.n_grid, dtype=np.int64)
    left = tgrid < tau_h
    right = tgrid > 1.0 - tau_h
    if np.any(left):
        idx = np.array([family.snap_index(q) for q in tgrid[left] / tau_h])
        codes[left] = idx
    if np.any(right):
        idx = np.array([family.snap_index(q) for q in (1.0 - tgrid[right]) / tau_h])
        codes[right] = np.where(idx == family.n_grid, family.n_grid, -idx - 1)
    return codes


def _kernel_for_code(family: KernelFamily, code: int):
    if code >= 0:
        return family.at(code * family.q_step)
    return family.mirrored((-code - 1) * family.q_step)


def gm_estimate(times, values, family: KernelFamily, h: float, t):
    """Gasser-Muller estimate of the ``family.deriv_order``-th derivative.

    ``t`` may be a scalar or an array of evaluation points in [0, 1].
    Weights are exact segment integrals of the kernel over the partition
    cells, computed from the polynomial antiderivative.
    """
    times = _as_times(times)
    values = np.asarray(values, dtype=float)
    _check_bandwidth(h, family.support_radius)
    scalar = np.isscalar(t) or np.ndim(t) == 0
    tgrid = np.atleast_1d(np.asarray(t, dtype=float))
    s = partition_points(times)
    out = _estimate_on_grid(s, values, family, h, tgrid)
    return float(out[0]) if scalar else out


def _estimate_on_grid(s: np.ndarray, values: np.ndarray, family: KernelFamily,
                      h: float, tgrid: np.ndarray) -> np.ndarray:
    kappa = family.deriv_order
    codes = _group_codes(family, tgrid, h)
    out = np.empty(tgrid.size)
    for code in np.unique(codes):
        kern = _kernel_for_code(family, code)
        rows = codes == code
        u = (tgrid[rows, None] - s[None, :]) / h
        a = kernel_cdf(kern, u)
        out[rows] = (a[:, :-1] - a[:, 1:]) @ values / h ** kappa
    return out


def loo_cv_score(times, values, family0: KernelFamily, h: float) -> float:
    """Leave-one-out CV score at derivative order zero.

    Dropping observation ``i`` collapses its partition cell: both of its
    bounds are replaced by their midpoint, so the neighboring cells absorb
    the gap and the weights remain a partition of [0, 1].  At the first and
    last observation the whole cell merges into the single neighbor.
    """
    times = _as_times(times)
    values = np.asarray(values, dtype=float)
    _check_bandwidth(h, family0.support_radius)
    if family0.deriv_order != 0:
        raise ValueError("cross validation runs at derivative order zero")
    n = times.size
    s = partition_points(times)
    mids = 0.5 * (s[:-1] + s[1:])
    codes = _group_codes(family0, times, h)

    full = np.empty(n)
    a_own = np.empty(n)      # A((t_p - s_p) / h)
    a_next = np.empty(n)     # A((t_p - s_{p+1}) / h)
    a_mid = np.empty(n)      # A((t_p - mid_p) / h)
    for code in np.unique(codes):
        kern = _kernel_for_code(family0, code)
        rows = np.flatnonzero(codes == code)
        u = (times[rows, None] - s[None, :]) / h
        a = kernel_cdf(kern, u)
        full[rows] = (a[:, :-1] - a[:, 1:]) @ values
        r = np.arange(rows.size)
        a_own[rows] = a[r, rows]
        a_next[rows] = a[r, rows + 1]
        a_mid[rows] = kernel_cdf(kern, (times[rows] - mids[rows]) / h)

    y = values
    delta = np.empty(n)
    # Interior: left neighbor extends to the midpoint, right neighbor begins there.
    p = np.arange(1, n - 1)
    delta[p] = ((a_own[p] - a_mid[p]) * y[p - 1]
                + (a_mid[p] - a_next[p]) * y[p + 1]
                - (a_own[p] - a_next[p]) * y[p])
    # Edges: the dropped cell is absorbed whole by the only neighbor.
    u0 = kernel_cdf(_kernel_for_code(family0, codes[0]), (times[0] - s[0]) / h)
    delta[0] = (u0 - a_next[0]) * (y[1] - y[0])
    un = kernel_cdf(_kernel_for_code(family0, codes[-1]), (times[-1] - s[-1]) / h)
    delta[-1] = (a_own[-1] - un) * (y[-2] - y[-1])

    loo = full + delta
    return float(np.sum((y - loo) ** 2))


def select_bandwidth(times, values, family0: KernelFamily, candidates) -> float:
    """Candidate bandwidth minimizing the leave-one-out CV score."""
    candidates = np.atleast_1d(np.asarray(candidates, dtype=float))
    if candidates.size == 0:
        raise EmptyCandidateSet("no candidate bandwidths supplied")
    scores = [loo_cv_score(times, values, family0, h) for h in candidates]
    return float(candidates[int(np.argmin(scores))])


def smooth_panel(panel: TimeSeriesPanel, config: SmootherConfig,
                 families: dict | None = None) -> TrajectoryEstimate:
    """Estimate every component and derivative order 0..max_deriv on a grid.

    One bandwidth per component, chosen by LOO cross validation at order
    zero unless ``config.bandwidth`` pins it, then reused for all orders.
    """
    nu = config.max_deriv
    if families is None:
        families = {}
    for kappa in range(nu + 1):
        families.setdefault(
            kappa,
            KernelFamily(kappa, config.moment_order, config.support_radius),
        )

    d = panel.n_components
    grid = config.eval_grid
    values = np.empty((d, grid.size))
    derivs = {kappa: np.empty((d, grid.size)) for kappa in range(1, nu + 1)}
    bandwidths = np.empty(d)
    for j in range(d):
        t, y = panel.component(j)
        if config.bandwidth is not None:
            h = config.bandwidth
        else:
            cands = config.candidates
            if cands is None:
                cands = default_bandwidth_grid(t.size, config.support_radius)
            h = select_bandwidth(t, y, families[0], cands)
        bandwidths[j] = h
        s = partition_points(t)
        for kappa in range(nu + 1):
            est = _estimate_on_grid(s, y, families[kappa], h, grid)
            if kappa == 0:
                values[j] = est
            else:
                derivs[kappa][j] = est
    result = TrajectoryEstimate(grid=grid, values=values, derivs=derivs)
    result.bandwidths = bandwidths
    return result


class GasserMullerSmoother(BaseEstimator):
    """Panel smoother with the scikit-learn estimator surface.

    Parameters
    ----------
    max_deriv : int
        Highest derivative order to estimate (the ODE order).
    moment_order : int or None
        Kernel moment order; defaults to ``max_deriv + 2``.
    bandwidth : float or None
        Fixed bandwidth for every component, or None for per-component
        leave-one-out cross validation.
    candidates : array-like or None
        CV candidate bandwidths; defaults to 20 log-spaced values.
    support_radius : float
        Kernel support radius tau.

    Attributes
    ----------
    bandwidths_ : ndarray of shape (d,)
        Selected bandwidth per component.
    """

    def __init__(self, max_deriv=1, moment_order=None, bandwidth=None,
                 candidates=None, support_radius=1.0):
        self.max_deriv = max_deriv
        self.moment_order = moment_order
        self.bandwidth = bandwidth
        self.candidates = candidates
        self.support_radius = support_radius

    def _config(self, eval_grid) -> SmootherConfig:
        return SmootherConfig(
            max_deriv=self.max_deriv,
            moment_order=self.moment_order,
            bandwidth=self.bandwidth,
            candidates=self.candidates,
            eval_grid=eval_grid,
            support_radius=self.support_radius,
        )

    def fit(self, panel: TimeSeriesPanel, y=None):
        """Select one bandwidth per component (no-op when fixed)."""
        if not isinstance(panel, TimeSeriesPanel):
            panel = TimeSeriesPanel(*panel)
        self.panel_ = panel
        k = self.moment_order if self.moment_order is not None else self.max_deriv + 2
        self._families = {
            kappa: KernelFamily(kappa, k, self.support_radius)
            for kappa in range(self.max_deriv + 1)
        }
        if self.bandwidth is not None:
            _check_bandwidth(self.bandwidth, self.support_radius)
            self.bandwidths_ = np.full(panel.n_components, float(self.bandwidth))
        else:
            hs = []
            for j in range(panel.n_components):
                t, v = panel.component(j)
                cands = self.candidates
                if cands is None:
                    cands = default_bandwidth_grid(t.size, self.support_radius)
                hs.append(select_bandwidth(t, v, self._families[0], cands))
            self.bandwidths_ = np.array(hs)
        return self

    def transform(self, eval_grid) -> TrajectoryEstimate:
        """Evaluate the fitted smoother on ``eval_grid``."""
        if not hasattr(self, "bandwidths_"):
            raise RuntimeError("call fit before transform")
        grid = np.asarray(eval_grid, dtype=float)
        panel = self.panel_
        nu = self.max_deriv
        d = panel.n_components
        values = np.empty((d, grid.size))
        derivs = {kappa: np.empty((d, grid.size)) for kappa in range(1, nu + 1)}
        for j in range(d):
            t, v = panel.component(j)
            s = partition_points(t)
            for kappa in range(nu + 1):
                est = _estimate_on_grid(s, v, self._families[kappa],
                                        self.bandwidths_[j], grid)
                if kappa == 0:
                    values[j] = est
                else:
                    derivs[kappa][j] = est
        result = TrajectoryEstimate(grid=grid, values=values, derivs=derivs)
        result.bandwidths = self.bandwidths_.copy()
        return result

    def fit_transform(self, panel, eval_grid):
        return self.fit(panel).transform(eval_grid)
