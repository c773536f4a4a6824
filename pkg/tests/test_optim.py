import numpy as np
import pytest

from ramdqn.agents import build_architecture
from ramdqn.optim import q_loss_grad, rmsprop_state_for, rmsprop_step
from ramdqn.tensor_core import ShapeError


def tiny_net():
    return build_architecture("just_ram", 2, rng=np.random.default_rng(0),
                              dtype=np.float64)


def zero_grads_like(params):
    return [None if p is None else {k: np.zeros_like(v) for k, v in p.items()}
            for p in params]


def test_zero_gradient_leaves_params_and_decays_acc():
    net = tiny_net()
    state = rmsprop_state_for(net)
    state.mean_square[1]["W"][...] = 1.0
    before = {i: {k: v.copy() for k, v in p.items()}
              for i, p in enumerate(net.params) if p is not None}
    rmsprop_step(net.params, zero_grads_like(net.params), state)
    for i, p in enumerate(net.params):
        if p is None:
            continue
        for k, v in p.items():
            np.testing.assert_array_equal(v, before[i][k])
    np.testing.assert_allclose(state.mean_square[1]["W"], 0.95)


def test_fresh_state_step_magnitude():
    # acc=0, rho=0.95, lr=0.0002, g=1 -> step 0.0002/sqrt(0.05+1e-6)
    net = tiny_net()
    state = rmsprop_state_for(net, learning_rate=0.0002)
    before = net.params[1]["W"].copy()
    grads = zero_grads_like(net.params)
    grads[1]["W"][...] = 1.0
    rmsprop_step(net.params, grads, state)
    step = before - net.params[1]["W"]
    expected = 0.0002 / np.sqrt(0.05 + 1e-6)
    np.testing.assert_allclose(step, expected, rtol=1e-12)
    assert abs(expected - 8.94e-4) < 1e-6


def test_rmsprop_deterministic():
    results = []
    for _ in range(2):
        net = tiny_net()
        state = rmsprop_state_for(net)
        grads = zero_grads_like(net.params)
        grads[1]["W"][...] = 0.3
        grads[2]["b"][...] = -1.5
        rmsprop_step(net.params, grads, state)
        results.append(net.params[1]["W"].copy())
    np.testing.assert_array_equal(results[0], results[1])


def test_rmsprop_opposes_gradient_sign():
    net = tiny_net()
    state = rmsprop_state_for(net)
    rng = np.random.default_rng(3)
    grads = zero_grads_like(net.params)
    grads[1]["W"][...] = rng.standard_normal(grads[1]["W"].shape)
    before = net.params[1]["W"].copy()
    rmsprop_step(net.params, grads, state)
    delta = net.params[1]["W"] - before
    moved = grads[1]["W"] != 0
    assert np.all(np.sign(delta[moved]) == -np.sign(grads[1]["W"][moved]))


def test_rmsprop_shape_mismatch():
    net = tiny_net()
    state = rmsprop_state_for(net)
    grads = zero_grads_like(net.params)
    grads[1]["W"] = np.zeros((2, 2))
    with pytest.raises(ShapeError):
        rmsprop_step(net.params, grads, state)


def test_q_loss_perfect_fit():
    q = np.array([[1.0, 5.0], [2.0, -3.0]])
    loss, grad = q_loss_grad(q, [1, 0], [5.0, 2.0])
    assert loss == 0.0
    np.testing.assert_array_equal(grad, np.zeros_like(q))


def test_q_loss_hand_differentiation():
    loss, grad = q_loss_grad(np.array([[0.0, 0.0]]), [0], [2.0])
    assert loss == 4.0
    np.testing.assert_array_equal(grad, [[-4.0, 0.0]])


def test_q_loss_nonchosen_entries_zero():
    rng = np.random.default_rng(0)
    q = rng.standard_normal((8, 5))
    actions = rng.integers(0, 5, size=8)
    _, grad = q_loss_grad(q, actions, rng.standard_normal(8))
    mask = np.ones_like(q, dtype=bool)
    mask[np.arange(8), actions] = False
    np.testing.assert_array_equal(grad[mask], 0.0)


def test_q_loss_index_out_of_range():
    with pytest.raises(IndexError):
        q_loss_grad(np.zeros((1, 3)), [3], [0.0])


def test_q_loss_nonnegative_and_zero_iff_fit():
    rng = np.random.default_rng(1)
    q = rng.standard_normal((6, 4))
    actions = rng.integers(0, 4, size=6)
    targets = rng.standard_normal(6)
    loss, _ = q_loss_grad(q, actions, targets)
    assert loss > 0.0


def test_q_loss_grad_matches_finite_differences():
    rng = np.random.default_rng(2)
    q = rng.standard_normal((4, 3))
    actions = rng.integers(0, 3, size=4)
    targets = rng.standard_normal(4)
    _, grad = q_loss_grad(q, actions, targets)
    h = 1e-6
    for i in range(4):
        for j in range(3):
            qp, qm = q.copy(), q.copy()
            qp[i, j] += h
            qm[i, j] -= h
            lp, _ = q_loss_grad(qp, actions, targets)
            lm, _ = q_loss_grad(qm, actions, targets)
            fd = (lp - lm) / (2 * h)
            assert abs(fd - grad[i, j]) <= 1e-8 * max(1.0, abs(fd))
