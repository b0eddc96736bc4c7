import numpy as np
import pytest

from odecal.evaluation import CompositionalSpec
from odecal.network import (
    ClassSpec,
    Diverged,
    ReluNetwork,
    ShapeMismatch,
    SparseReluRegressor,
    TrainConfig,
    check_architecture,
    forward,
    grad,
    init_network,
    load_checkpoint,
    loss,
    loss_and_grad,
    project,
    save_checkpoint,
    train,
)
from odecal.odesim import philox_stream


def zero_net(in_dim=3, hidden=4, out_dim=2):
    return ReluNetwork([np.zeros((hidden, in_dim)), np.zeros((out_dim, hidden))],
                       [np.zeros(hidden)])


def test_forward_zero_weights():
    assert np.allclose(forward(zero_net(), np.array([1.0, -2.0, 3.0])), 0.0)


def test_forward_relu_kills_negative():
    net = ReluNetwork([np.array([[1.0]]), np.array([[1.0]])], [np.array([0.0])])
    assert forward(net, np.array([-3.0])) == pytest.approx(0.0)


def test_forward_hand_example():
    net = ReluNetwork([np.eye(2), np.array([[1.0, 1.0]])],
                      [np.array([1.0, 1.0])])
    out = forward(net, np.array([2.0, 3.0]))
    assert out == pytest.approx([3.0])


def test_forward_shape_guard():
    with pytest.raises(ShapeMismatch):
        forward(zero_net(), np.ones(5))
    with pytest.raises(ShapeMismatch):
        ReluNetwork([np.zeros((4, 3)), np.zeros((2, 5))], [np.zeros(4)])


def test_forward_clamps_under_f2():
    net = ReluNetwork([np.array([[1.0]]), np.array([[1.0]])], [np.array([-5.0])],
                      ClassSpec("F2", sparsity_budget=3, sup_bound=2.0))
    assert forward(net, np.array([10.0])) == pytest.approx(2.0)


def test_project_feasible_unchanged():
    net = ReluNetwork([np.array([[0.3, -0.2]]), np.array([[0.5]])],
                      [np.array([0.4])])
    out = project(net, ClassSpec("F1"))
    assert all(np.array_equal(a, b) for a, b in zip(out.weights, net.weights))


def test_project_scales_layer_to_boundary():
    net = ReluNetwork([np.array([[2.0, -1.0]]), np.array([[1.0]])],
                      [np.array([0.0])])
    out = project(net, ClassSpec("F1"))
    assert np.allclose(out.weights[0], [[1.0, -0.5]])
    assert out.layer_bound(0) <= 1.0


def test_project_keeps_top_magnitudes():
    net = ReluNetwork(
        [np.array([[0.9, -0.8, 0.02], [0.7, 0.01, 0.03]]),
         np.array([[0.6, -0.05]])],
        [np.array([0.04, 0.02])],
    )
    out = project(net, ClassSpec("F2", sparsity_budget=3, sup_bound=10.0))
    assert out.num_nonzero() == 3
    kept = sorted(np.abs(np.concatenate([w.ravel() for w in out.weights]
                                        + [v for v in out.biases])))[-3:]
    assert kept == pytest.approx([0.7, 0.8, 0.9])


def test_loss_examples():
    net = zero_net()
    Z = philox_stream(0, 0).uniform(-1, 1, (50, 3))
    Y = np.full((50, 2), 1.7)
    assert loss(net, Z, Y) == pytest.approx(1.7 ** 2 * 2)
    assert loss(net, Z, 2 * Y) / loss(net, Z, Y) == pytest.approx(4.0)
    student = init_network((3, 4, 2), seed=0)
    Yfit = forward(student, Z)
    assert loss(student, Z, Yfit) == pytest.approx(0.0, abs=1e-15)


def test_zero_residual_zero_gradient():
    net = init_network((3, 6, 2), seed=1)
    Z = philox_stream(1, 0).uniform(-1, 1, (30, 3))
    Y = forward(net, Z)
    dw, dv = grad(net, Z, Y)
    assert all(np.allclose(g, 0.0) for g in dw + dv)


def _activation_masks(net, Z):
    a = Z @ net.weights[0].T
    out = []
    for l in range(1, len(net.weights)):
        pre = a - net.biases[l - 1]
        out.append(pre > 0)
        a = np.maximum(pre, 0) @ net.weights[l].T
    return out


def finite_difference_check(seed, n_coords=10, eps=1e-5):
    rng = philox_stream(seed, 9)
    net = init_network((3, 8, 8, 2), seed=seed)
    Z = rng.uniform(-1, 1, (40, 3))
    Y = rng.uniform(-1, 1, (40, 2))
    _, dw, dv = loss_and_grad(net, Z, Y)
    params = net.weights + net.biases
    grads = dw + dv
    worst, checked, tries = 0.0, 0, 0
    while checked < n_coords and tries < 500:
        tries += 1
        pi = int(rng.integers(len(params)))
        flat = params[pi].ravel()
        ci = int(rng.integers(flat.size))
        old = flat[ci]
        flat[ci] = old + eps
        m_plus = _activation_masks(net, Z)
        lp = loss(net, Z, Y)
        flat[ci] = old - eps
        m_minus = _activation_masks(net, Z)
        lm = loss(net, Z, Y)
        flat[ci] = old
        if not all(np.array_equal(a, b) for a, b in zip(m_plus, m_minus)):
            continue  # the perturbation crossed a ReLU kink
        fd = (lp - lm) / (2 * eps)
        an = grads[pi].ravel()[ci]
        if max(abs(fd), abs(an)) < 1e-8:
            continue
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))
        checked += 1
    assert checked == n_coords
    return worst


def test_gradient_matches_finite_differences():
    worst = max(finite_difference_check(seed) for seed in range(3))
    assert worst <= 1e-4


def test_train_is_deterministic():
    Z = philox_stream(2, 0).uniform(-1, 1, (60, 3))
    Y = philox_stream(2, 1).uniform(-1, 1, (60, 2))
    cfg = TrainConfig(hidden=(8, 8), epochs=40, seed=5)
    a = train(Z, Y, ClassSpec("F1"), cfg)
    b = train(Z, Y, ClassSpec("F1"), cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert all(np.array_equal(x, y) for x, y in zip(a.biases, b.biases))
    assert a.final_loss == b.final_loss


def test_train_f2_constraints_hold_exactly():
    rng = philox_stream(3, 0)
    Z = rng.uniform(-1, 1, (80, 4))
    Y = rng.uniform(-2, 2, (80, 2))
    spec = ClassSpec("F2", sparsity_budget=30, sup_bound=1.5)
    net = train(Z, Y, spec, TrainConfig(hidden=(10, 10), epochs=60, seed=3))
    assert net.num_nonzero() <= 30
    for l in range(len(net.weights)):
        assert net.layer_bound(l) <= 1.0
    probe = rng.uniform(-5, 5, (200, 4))
    assert np.max(np.abs(forward(net, probe))) <= 1.5 + 1e-12


def test_pruned_coordinates_stay_zero():
    rng = philox_stream(4, 0)
    Z = rng.uniform(-1, 1, (50, 3))
    Y = rng.uniform(-1, 1, (50, 2))
    spec = ClassSpec("F2", sparsity_budget=12, sup_bound=5.0)
    cfg = TrainConfig(hidden=(6,), epochs=50, prune_fraction=0.2, seed=0)
    net = train(Z, Y, spec, cfg)
    # 0.2 * 50 = epoch 10 prune; 40 masked fine-tune epochs follow.
    assert net.num_nonzero() <= 12


def test_train_returns_best_feasible_iterate():
    rng = philox_stream(5, 0)
    Z = rng.uniform(-1, 1, (40, 2))
    Y = rng.uniform(-1, 1, (40, 1))
    net = train(Z, Y, ClassSpec("F1"), TrainConfig(hidden=(6,), epochs=30, seed=1))
    assert net.final_loss == pytest.approx(loss(net, Z, Y))


def test_train_diverged_detection():
    Z = np.linspace(0, 1, 40).reshape(-1, 1)
    Y = np.full((40, 1), 1e200)
    with pytest.raises(Diverged):
        train(Z, Y, ClassSpec("F1"), TrainConfig(hidden=(4,), epochs=5, seed=0))


def test_final_layer_positive_homogeneity():
    net = init_network((3, 6, 2), seed=7)
    Z = philox_stream(7, 1).uniform(-1, 1, (20, 3))
    base = forward(net, Z)
    scaled = net.copy()
    scaled.weights[-1] = 3.0 * scaled.weights[-1]
    assert np.allclose(forward(scaled, Z), 3.0 * base)


def test_teacher_student_smoke():
    trng = philox_stream(0, 77)
    widths = (4, 8, 8, 2)
    teacher = project(ReluNetwork(
        [trng.uniform(-0.7, 0.7, (widths[l + 1], widths[l])) for l in range(3)],
        [trng.uniform(-0.2, 0.2, widths[l]) for l in (1, 2)],
    ), ClassSpec("F1"))
    tgrid = np.linspace(0, 1, 200)
    Z = np.column_stack([np.sin(2 * np.pi * tgrid), np.cos(3 * tgrid),
                         tgrid, np.sin(5 * tgrid + 1)])
    Y = forward(teacher, Z)
    student = train(Z, Y, ClassSpec("F1"),
                    TrainConfig(hidden=(32, 32), epochs=1500, seed=0),
                    grid=tgrid)
    w = np.full(200, 1 / 199.0)
    w[0] = w[-1] = 0.5 / 199.0
    var = float(np.sum(w[:, None] * (Y - (w[:, None] * Y).sum(0)) ** 2))
    assert student.final_loss <= 1e-2 * var


def test_architecture_guard_warns_only_when_too_narrow():
    spec = CompositionalSpec(depth=0, widths=(1, 1), active=(1,),
                             smoothness=(0.5,), bounds=(0.1,))
    with pytest.warns(RuntimeWarning):
        check_architecture((1, 8, 1), spec)
    import warnings as _warnings
    with _warnings.catch_warnings():
        _warnings.simplefilter("error")
        bound = check_architecture((1, 64, 1), spec)
    assert bound < 64


def test_architecture_guard_infinite_smoothness():
    spec = CompositionalSpec(depth=0, widths=(4, 1), active=(4,),
                             smoothness=(np.inf,))
    with pytest.warns(RuntimeWarning):
        bound = check_architecture((4, 64, 1), spec)
    assert np.isinf(bound)


def test_checkpoint_roundtrip(tmp_path):
    net = train(
        philox_stream(8, 0).uniform(-1, 1, (30, 3)),
        philox_stream(8, 1).uniform(-1, 1, (30, 2)),
        ClassSpec("F2", sparsity_budget=20, sup_bound=3.0),
        TrainConfig(hidden=(5, 5), epochs=25, seed=2),
    )
    path = tmp_path / "net.json"
    save_checkpoint(net, path, seed=2)
    loaded = load_checkpoint(path)
    Z = philox_stream(8, 2).uniform(-1, 1, (10, 3))
    assert np.allclose(forward(loaded, Z), forward(net, Z))
    assert loaded.class_spec == net.class_spec


def test_sklearn_regressor_surface():
    from sklearn.base import clone

    rng = philox_stream(9, 0)
    Z = rng.uniform(-1, 1, (60, 3))
    Y = Z @ np.array([[0.5], [-0.2], [0.1]])
    reg = SparseReluRegressor(hidden=(8, 8), epochs=300, seed=0)
    assert clone(reg).get_params() == reg.get_params()
    reg.fit(Z, Y[:, 0])
    pred = reg.predict(Z)
    assert pred.shape == (60,)
    assert np.mean((pred - Y[:, 0]) ** 2) < np.var(Y[:, 0])
    reg2 = SparseReluRegressor(hidden=(8,), epochs=50, sparsity_budget=20, seed=0)
    reg2.fit(Z, Y)
    assert reg2.network_.num_nonzero() <= 20


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(hidden=())
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(grid_size=16)
    with pytest.raises(ValueError):
        ClassSpec("F2", sparsity_budget=None, sup_bound=1.0)
    with pytest.raises(ValueError):
        ClassSpec("F3")
