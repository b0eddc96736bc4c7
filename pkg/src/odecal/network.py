"""Sparse ReLU feedforward networks trained on derivative regression.

The network computes ``W_L s_{v_L} ... W_1 s_{v_1} W_0 z`` where
``s_v(x) = max(x - v, 0)`` is the shifted ReLU; there is no bias on the
output layer.  Two constraint classes are supported:

* F1: every layer satisfies ``max|W_l| + max|v_l| <= 1`` (``v_0`` is zero);
* F2: additionally the total number of nonzero parameters is capped and the
  output is clamped into ``[-F, F]`` componentwise.

Training minimizes the trapezoid discretization of the integrated squared
residual between the network output and the target derivative curve, with
projected adaptive-moment descent; the F2 sparsity budget is enforced by
one-shot magnitude pruning partway through training followed by fine-tuning
with the mask frozen.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .odesim import philox_stream

__all__ = [
    "ClassSpec",
    "Diverged",
    "ReluNetwork",
    "ShapeMismatch",
    "SparseReluRegressor",
    "TrainConfig",
    "check_architecture",
    "forward",
    "grad",
    "init_network",
    "load_checkpoint",
    "loss",
    "loss_and_grad",
    "project",
    "save_checkpoint",
    "train",
]


class ShapeMismatch(ValueError):
    """Input, target, or parameter shapes are inconsistent."""


class Diverged(RuntimeError):
    """The training loss became non-finite."""


@dataclass(frozen=True)
class ClassSpec:
    """Constraint class: F1 (bounded parameters) or F2 (plus sparsity/clamp)."""

    class_id: str = "F1"
    sparsity_budget: int | None = None
    sup_bound: float | None = None

    def __post_init__(self):
        if self.class_id not in ("F1", "F2"):
            raise ValueError("class_id must be 'F1' or 'F2'")
        if self.class_id == "F2":
            if self.sparsity_budget is None or self.sparsity_budget < 1:
                raise ValueError("F2 needs a positive sparsity budget")
            if self.sup_bound is None or self.sup_bound <= 0:
                raise ValueError("F2 needs a positive sup bound")


@dataclass
class TrainConfig:
    """Optimization settings for the derivative regression.

    ``grid_size`` is the number of quadrature points the pipeline evaluates
    the smoother on before training; training itself uses whatever grid the
    inputs carry.
    """

    hidden: tuple = (64, 64, 64)
    epochs: int = 2000
    base_lr: float = 1e-2
    schedule: str = "cosine"
    prune_fraction: float = 0.6
    seed: int = 0
    grid_size: int | None = None

    def __post_init__(self):
        self.hidden = tuple(int(p) for p in self.hidden)
        if not self.hidden or any(p < 1 for p in self.hidden):
            raise ValueError("hidden widths must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError("schedule must be 'cosine' or 'constant'")
        if not 0.0 < self.prune_fraction < 1.0:
            raise ValueError("prune_fraction must lie in (0, 1)")
        if self.grid_size is not None and self.grid_size < 32:
            raise ValueError("grid_size must be at least 32")


class ReluNetwork:
    """Weights, shifted biases, and optional constraint class."""

    def __init__(self, weights, biases, class_spec: ClassSpec | None = None):
        weights = [np.asarray(w, dtype=float) for w in weights]
        biases = [np.asarray(v, dtype=float) for v in biases]
        if len(biases) != len(weights) - 1:
            raise ShapeMismatch("need exactly one bias vector per hidden layer")
        for l in range(len(weights) - 1):
            if weights[l + 1].shape[1] != weights[l].shape[0]:
                raise ShapeMismatch(
                    f"layer {l + 1} expects input {weights[l + 1].shape[1]}, "
                    f"layer {l} outputs {weights[l].shape[0]}"
                )
            if biases[l].shape != (weights[l].shape[0],):
                raise ShapeMismatch(f"bias {l + 1} does not match layer width")
        self.weights = weights
        self.biases = biases
        self.class_spec = class_spec

    @property
    def depth(self) -> int:
        """Number of hidden layers L."""
        return len(self.weights) - 1

    @property
    def widths(self) -> tuple:
        return tuple([self.weights[0].shape[1]]
                     + [w.shape[0] for w in self.weights])

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "ReluNetwork":
        return ReluNetwork([w.copy() for w in self.weights],
                           [v.copy() for v in self.biases], self.class_spec)

    def num_params(self) -> int:
        return (sum(w.size for w in self.weights)
                + sum(v.size for v in self.biases))

    def num_nonzero(self) -> int:
        return (sum(int(np.count_nonzero(w)) for w in self.weights)
                + sum(int(np.count_nonzero(v)) for v in self.biases))

    def layer_bound(self, l: int) -> float:
        """max|W_l| + max|v_l| for layer l (v_0 is identically zero)."""
        wmax = float(np.max(np.abs(self.weights[l]))) if self.weights[l].size else 0.0
        vmax = 0.0
        if l >= 1:
            vmax = float(np.max(np.abs(self.biases[l - 1]))) if self.biases[l - 1].size else 0.0
        return wmax + vmax

    def forward(self, z):
        return forward(self, z)

    def __call__(self, z):
        return forward(self, z)


def forward(net: ReluNetwork, z):
    """Network output; accepts a single input vector or a batch of rows.

    Under an F2 class spec the output is clamped into ``[-F, F]``.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    a = np.atleast_2d(z)
    if a.shape[1] != net.in_dim:
        raise ShapeMismatch(f"input dim {a.shape[1]}, network expects {net.in_dim}")
    a = a @ net.weights[0].T
    for l in range(1, len(net.weights)):
        a = np.maximum(a - net.biases[l - 1], 0.0)
        a = a @ net.weights[l].T
    spec = net.class_spec
    if spec is not None and spec.class_id == "F2":
        a = np.clip(a, -spec.sup_bound, spec.sup_bound)
    return a[0] if single else a


def project(net: ReluNetwork, spec: ClassSpec) -> ReluNetwork:
    """Project into the constraint class; idempotent on feasible networks.

    F1: any layer whose parameter bound exceeds 1 has its (W_l, v_l) pair
    rescaled jointly onto the boundary, which only rescales the network
    output.  F2 additionally keeps the ``sparsity_budget`` largest-magnitude
    parameters and zeroes the rest.
    """
    out = net.copy()
    out.class_spec = spec
    if spec.class_id == "F2":
        _apply_mask(out, _magnitude_mask(out, spec.sparsity_budget))
    _project_f1_inplace(out)
    return out


def _magnitude_mask(net: ReluNetwork, budget: int):
    """Boolean masks keeping the globally largest ``budget`` parameters."""
    flat = np.concatenate([np.abs(w).ravel() for w in net.weights]
                          + [np.abs(v).ravel() for v in net.biases])
    if budget >= flat.size:
        keep_threshold = -1.0
    else:
        keep_threshold = np.partition(flat, flat.size - budget)[flat.size - budget]
    w_masks, v_masks, kept = [], [], 0
    for w in net.weights:
        m = np.abs(w) > keep_threshold
        w_masks.append(m)
        kept += int(m.sum())
    for v in net.biases:
        m = np.abs(v) > keep_threshold
        v_masks.append(m)
        kept += int(m.sum())
    # Ties at the threshold: admit them in a fixed order until the budget fills.
    for group, masks in ((net.weights, w_masks), (net.biases, v_masks)):
        for arr, m in zip(group, masks):
            if kept >= budget:
                break
            tie = (np.abs(arr) == keep_threshold) & ~m
            idx = np.flatnonzero(tie.ravel())[:budget - kept]
            m.ravel()[idx] = True
            kept += idx.size
    return w_masks, v_masks


def _apply_mask(net: ReluNetwork, masks):
    w_masks, v_masks = masks
    for w, m in zip(net.weights, w_masks):
        w *= m
    for v, m in zip(net.biases, v_masks):
        v *= m


def _project_f1_inplace(net: ReluNetwork):
    for l in range(len(net.weights)):
        bound = net.layer_bound(l)
        # Repeat on the rare float rounding that leaves the bound just above 1.
        while bound > 1.0:
            net.weights[l] /= bound
            if l >= 1:
                net.biases[l - 1] /= bound
            bound = net.layer_bound(l)


def _trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    w = np.empty(grid.size)
    w[0] = (grid[1] - grid[0]) / 2.0
    w[-1] = (grid[-1] - grid[-2]) / 2.0
    w[1:-1] = (grid[2:] - grid[:-2]) / 2.0
    return w


def _check_training_arrays(net, inputs, targets, grid):
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if inputs.ndim != 2 or targets.ndim != 2:
        raise ShapeMismatch("inputs and targets must be 2-d arrays")
    if inputs.shape[0] != targets.shape[0]:
        raise ShapeMismatch("inputs and targets must share the grid axis")
    if inputs.shape[0] < 2:
        raise ShapeMismatch("need at least two grid points for the trapezoid rule")
    if net is not None:
        if inputs.shape[1] != net.in_dim or targets.shape[1] != net.out_dim:
            raise ShapeMismatch("arrays do not match the network dimensions")
    if grid is None:
        grid = np.linspace(0.0, 1.0, inputs.shape[0])
    else:
        grid = np.asarray(grid, dtype=float)
        if grid.shape != (inputs.shape[0],):
            raise ShapeMismatch("grid must have one entry per input row")
    return inputs, targets, grid


def loss(net: ReluNetwork, inputs, targets, grid=None) -> float:
    """Trapezoid rule for the integrated squared residual over [0, 1]."""
    inputs, targets, grid = _check_training_arrays(net, inputs, targets, grid)
    resid = forward(net, inputs) - targets
    w = _trapezoid_weights(grid)
    return float(np.sum(w[:, None] * resid ** 2))


def loss_and_grad(net: ReluNetwork, inputs, targets, grid=None):
    """Loss plus its exact reverse-mode gradient in the parameters.

    ReLU kinks use the zero subgradient (strict positivity mask); a
    saturated F2 output clamp likewise contributes zero gradient.
    """
    inputs, targets, grid = _check_training_arrays(net, inputs, targets, grid)
    w = _trapezoid_weights(grid)

    acts = [inputs @ net.weights[0].T]
    hidden = []
    for l in range(1, len(net.weights)):
        h = np.maximum(acts[-1] - net.biases[l - 1], 0.0)
        hidden.append(h)
        acts.append(h @ net.weights[l].T)
    out = acts[-1]
    spec = net.class_spec
    if spec is not None and spec.class_id == "F2":
        clipped = np.clip(out, -spec.sup_bound, spec.sup_bound)
        pass_mask = np.abs(out) <= spec.sup_bound
        resid = clipped - targets
        upstream = 2.0 * w[:, None] * resid * pass_mask
    else:
        resid = out - targets
        upstream = 2.0 * w[:, None] * resid
    value = float(np.sum(w[:, None] * resid ** 2))

    d_weights = [None] * len(net.weights)
    d_biases = [None] * len(net.biases)
    for l in range(len(net.weights) - 1, 0, -1):
        d_weights[l] = upstream.T @ hidden[l - 1]
        back = upstream @ net.weights[l]
        mask = acts[l - 1] - net.biases[l - 1] > 0.0
        back = back * mask
        d_biases[l - 1] = -back.sum(axis=0)
        upstream = back
    d_weights[0] = upstream.T @ inputs
    return value, d_weights, d_biases


def grad(net: ReluNetwork, inputs, targets, grid=None):
    """Gradient of :func:`loss`; see :func:`loss_and_grad`."""
    _, dw, dv = loss_and_grad(net, inputs, targets, grid)
    return dw, dv


def init_network(widths, seed: int = 0,
                 class_spec: ClassSpec | None = None) -> ReluNetwork:
    """Symmetric uniform init scaled by fan-in, projected into F1."""
    rng = philox_stream(seed, 0)
    weights, biases = [], []
    for l in range(len(widths) - 1):
        fan_in = widths[l]
        scale = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-scale, scale, size=(widths[l + 1], widths[l])))
        if l >= 1:
            biases.append(rng.uniform(-scale, scale, size=widths[l]))
    net = ReluNetwork(weights, biases, None)
    return project(net, ClassSpec("F1")) if class_spec is None else project(net, class_spec)


def _cosine_lr(base: float, epoch: int, total: int) -> float:
    return base * 0.5 * (1.0 + np.cos(np.pi * epoch / total))


def train(inputs, targets, spec: ClassSpec, cfg: TrainConfig,
          grid=None) -> ReluNetwork:
    """Fit the derivative regression by projected adaptive-moment descent.

    Every step is followed by the F1 projection.  Under F2, one-shot
    magnitude pruning fires at ``prune_fraction`` of the epochs and the
    remaining epochs fine-tune with the sparsity mask frozen; the returned
    network is the feasible iterate with the lowest loss (so for F2 only
    post-pruning iterates qualify).

    Raises :class:`Diverged` if the loss becomes non-finite.
    """
    inputs, targets, grid = _check_training_arrays(None, inputs, targets, grid)
    widths = (inputs.shape[1],) + cfg.hidden + (targets.shape[1],)
    net = init_network(widths, seed=cfg.seed)

    params = net.weights + net.biases
    m_state = [np.zeros_like(p) for p in params]
    u_state = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    masks = None
    flat_masks = None
    prune_epoch = None
    if spec.class_id == "F2":
        prune_epoch = max(1, int(np.floor(cfg.prune_fraction * cfg.epochs)))
    best_loss, best_net = np.inf, None

    for epoch in range(cfg.epochs):
        value, d_w, d_v = loss_and_grad(net, inputs, targets, grid)
        if not np.isfinite(value):
            raise Diverged(f"loss became non-finite at epoch {epoch}")
        feasible = masks is not None or spec.class_id == "F1"
        if feasible and value < best_loss:
            best_loss, best_net = value, net.copy()

        lr = (_cosine_lr(cfg.base_lr, epoch, cfg.epochs)
              if cfg.schedule == "cosine" else cfg.base_lr)
        grads = d_w + d_v
        if flat_masks is not None:
            grads = [g * mk for g, mk in zip(grads, flat_masks)]
        t = epoch + 1
        for i, (p, g) in enumerate(zip(params, grads)):
            m_state[i] = beta1 * m_state[i] + (1 - beta1) * g
            u_state[i] = beta2 * u_state[i] + (1 - beta2) * g ** 2
            mhat = m_state[i] / (1 - beta1 ** t)
            uhat = u_state[i] / (1 - beta2 ** t)
            p -= lr * mhat / (np.sqrt(uhat) + eps)
        if masks is not None:
            _apply_mask(net, masks)
        _project_f1_inplace(net)

        if prune_epoch is not None and epoch + 1 == prune_epoch:
            masks = _magnitude_mask(net, spec.sparsity_budget)
            flat_masks = list(masks[0]) + list(masks[1])
            _apply_mask(net, masks)
            net.class_spec = spec
            for i in range(len(params)):
                m_state[i] *= flat_masks[i]
                u_state[i] *= flat_masks[i]

    final = loss(net, inputs, targets, grid)
    if not np.isfinite(final):
        raise Diverged("final loss is non-finite")
    if best_net is None or final < best_loss:
        best_loss, best_net = final, net.copy()
    best_net.class_spec = spec
    best_net.final_loss = best_loss
    return best_net


def save_checkpoint(net: ReluNetwork, path, seed: int | None = None):
    """Serialize a network as JSON: widths, row-major weights, biases, spec."""
    spec = net.class_spec
    payload = {
        "widths": list(net.widths),
        "weights": [w.ravel().tolist() for w in net.weights],
        "biases": [v.tolist() for v in net.biases],
        "class_spec": None if spec is None else {
            "class_id": spec.class_id,
            "sparsity_budget": spec.sparsity_budget,
            "sup_bound": spec.sup_bound,
        },
        "seed": seed,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> ReluNetwork:
    with open(path) as fh:
        payload = json.load(fh)
    widths = payload["widths"]
    weights = [
        np.asarray(flat, dtype=float).reshape(widths[l + 1], widths[l])
        for l, flat in enumerate(payload["weights"])
    ]
    biases = [np.asarray(v, dtype=float) for v in payload["biases"]]
    spec = payload.get("class_spec")
    class_spec = ClassSpec(**spec) if spec else None
    return ReluNetwork(weights, biases, class_spec)


def check_architecture(widths, comp_spec) -> float:
    """Warn when the minimum hidden width misses the consistency lower bound.

    The bound is ``6 * eta * max_i((beta_i + 1)^r~_i  v  (C_i + 1) e^r~_i)``
    with ``eta = max_i r_{i+1} (r~_i + ceil(beta_i))``.  Infinite smoothness
    makes the bound infinite, in which case the warning reports it as
    unattainable.  Returns the bound.
    """
    widths = tuple(widths)
    hidden = widths[1:-1]
    n_min = min(hidden)
    beta = np.asarray(comp_spec.smoothness, dtype=float)
    r = np.asarray(comp_spec.widths, dtype=float)
    r_act = np.asarray(comp_spec.active, dtype=float)
    c = np.asarray(comp_spec.bounds, dtype=float)
    eta = np.max(r[1:] * (r_act + np.ceil(np.where(np.isinf(beta), 0.0, beta))))
    with np.errstate(over="ignore"):
        term = np.maximum((beta + 1.0) ** r_act, (c + 1.0) * np.exp(r_act))
    bound = float(6.0 * eta * np.max(term))
    if n_min < bound:
        warnings.warn(
            f"minimum hidden width {n_min} is below the consistency lower "
            f"bound {bound:.3g} for this compositional structure",
            RuntimeWarning,
            stacklevel=2,
        )
    return bound


class SparseReluRegressor(BaseEstimator, RegressorMixin):
    """Derivative regression network with the scikit-learn estimator surface.

    Fits the integrated-squared-error objective on a time grid rather than
    the usual mean squared error; with the default uniform grid the two
    coincide up to endpoint weights.

    Parameters mirror :class:`TrainConfig` and :class:`ClassSpec`; passing a
    ``sparsity_budget`` selects class F2 (with output clamp ``sup_bound``),
    otherwise the fit stays in F1.

    Attributes
    ----------
    network_ : ReluNetwork
        The trained network (lowest-loss feasible iterate).
    loss_ : float
        Final training loss.
    """

    def __init__(self, hidden=(64, 64, 64), epochs=2000, base_lr=1e-2,
                 schedule="cosine", prune_fraction=0.6, sparsity_budget=None,
                 sup_bound=None, seed=0):
        self.hidden = hidden
        self.epochs = epochs
        self.base_lr = base_lr
        self.schedule = schedule
        self.prune_fraction = prune_fraction
        self.sparsity_budget = sparsity_budget
        self.sup_bound = sup_bound
        self.seed = seed

    def fit(self, X, y, grid=None):
        X = check_array(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self._y_was_1d = y.ndim == 1
        if self._y_was_1d:
            y = y[:, None]
        if self.sparsity_budget is None:
            spec = ClassSpec("F1")
        else:
            sup = self.sup_bound
            if sup is None:
                # Default clamp wide enough that it never binds on the data.
                sup = 2.0 * float(np.max(np.abs(y))) + 1e-12
            spec = ClassSpec("F2", sparsity_budget=self.sparsity_budget,
                             sup_bound=sup)
        self.class_spec_ = spec
        cfg = TrainConfig(hidden=tuple(self.hidden), epochs=self.epochs,
                          base_lr=self.base_lr, schedule=self.schedule,
                          prune_fraction=self.prune_fraction, seed=self.seed)
        self.network_ = train(X, y, spec, cfg, grid=grid)
        self.loss_ = self.network_.final_loss
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=float)
        out = forward(self.network_, X)
        return out[:, 0] if self._y_was_1d else out
