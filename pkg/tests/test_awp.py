"""Weight perturbation: projection arithmetic, ball containment, ascent direction."""

import numpy as np
import pytest

from qad import awp
from qad.errors import UsageError
from qad.nn import Tensor, cross_entropy, forward, init_params, no_grad
from qad.nn.layers import Conv2d, Dense, Flatten, MaxPool2d, ModelSpec, ParameterSet, Relu
from qad.util import frob_norm, rng

NET = ModelSpec(
    input_shape=(1, 8, 8),
    layers=(Conv2d(4, 3, padding=1), Relu(), MaxPool2d(2), Flatten(), Dense(8), Relu(), Dense(2)),
    tap_layers=(),
)


def grads_of(params, x, y):
    params.zero_grad()
    loss = cross_entropy(forward(NET, params, x).logits, y)
    loss.backward()
    return {name: t.grad.copy() for name, t in params.items()}, loss.item()


def test_zero_gradient_leaves_phi_unchanged():
    params = init_params(NET, seed=0)
    state = awp.zero_state(params, gamma=0.01, eta=0.01)
    grads = {name: np.zeros_like(t.data) for name, t in params.items()}
    awp.awp_ascent(params, grads, state)
    for p in state.phi.values():
        assert np.all(p == 0.0)


def test_single_scalar_parameter_hand_arithmetic():
    theta = ParameterSet({"w": Tensor(np.array([2.0], dtype=np.float32), requires_grad=True)})
    state = awp.zero_state(theta, gamma=0.01, eta=0.01)
    awp.awp_ascent(theta, {"w": np.array([1.0], dtype=np.float32)}, state)
    # unprojected step 0.01 * 1 * 2 = 0.02 lands exactly on gamma * |theta| = 0.02
    assert state.phi["w"][0] == pytest.approx(0.02, rel=1e-6)


def test_ball_containment_after_ascent_random_nets():
    for seed in range(10):
        params = init_params(NET, seed=seed)
        x = rng(seed, 1).standard_normal((4, 1, 8, 8)).astype(np.float32)
        y = rng(seed, 2).integers(0, 2, size=4)
        grads, _ = grads_of(params, x, y)
        state = awp.zero_state(params, gamma=0.002, eta=0.01)
        awp.awp_ascent(params, grads, state)
        assert awp.containment_violation(params, state) <= 1e-12
        norms = params.frobenius_norms()
        for name, p in state.phi.items():
            assert frob_norm(p) <= 0.002 * norms[name] * (1 + 1e-9)


def test_project_inside_ball_is_identity():
    params = init_params(NET, seed=1)
    phi = {name: 1e-9 * rng(2, i).standard_normal(t.data.shape).astype(np.float32)
           for i, (name, t) in enumerate(params.items())}
    before = {name: p.copy() for name, p in phi.items()}
    awp.project(phi, params, gamma=0.5)
    for name in phi:
        assert np.array_equal(phi[name], before[name])


def test_project_boundary_overshoot_halved():
    theta = ParameterSet({"w": Tensor(np.array([3.0, 4.0], dtype=np.float32), requires_grad=True)})
    gamma = 0.1
    # ||theta|| = 5, ball radius 0.5; phi at norm 1.0 must halve
    phi = {"w": np.array([0.6, 0.8], dtype=np.float32)}
    awp.project(phi, theta, gamma)
    assert np.allclose(phi["w"], [0.3, 0.4], atol=1e-7)


def test_project_norm_is_min_of_norms():
    gen = rng(5)
    for _ in range(20):
        theta = ParameterSet({"w": Tensor(gen.standard_normal(12), requires_grad=True)})
        phi = {"w": gen.standard_normal(12)}
        gamma = float(gen.uniform(0.01, 2.0))
        want = min(frob_norm(phi["w"]), gamma * frob_norm(theta["w"].data))
        awp.project(phi, theta, gamma)
        assert frob_norm(phi["w"]) == pytest.approx(want, rel=1e-12)


def test_apply_zero_phi_is_bit_exact():
    params = init_params(NET, seed=2)
    before = {name: t.data.copy() for name, t in params.items()}
    state = awp.zero_state(params, gamma=0.01, eta=0.01)
    awp.apply(params, state)
    for name, t in params.items():
        assert np.array_equal(t.data, before[name])
    awp.revert(params, state)


def test_apply_revert_round_trip_within_one_ulp():
    params = init_params(NET, seed=3)
    before = {name: t.data.copy() for name, t in params.items()}
    x = rng(3, 1).standard_normal((4, 1, 8, 8)).astype(np.float32)
    y = rng(3, 2).integers(0, 2, size=4)
    grads, _ = grads_of(params, x, y)
    state = awp.zero_state(params, gamma=0.002, eta=0.01)
    awp.awp_ascent(params, grads, state)
    awp.apply(params, state)
    awp.revert(params, state)
    for name, t in params.items():
        denom = np.maximum(np.abs(before[name]), np.finfo(np.float32).tiny)
        assert np.max(np.abs(t.data - before[name]) / denom) <= 2.0 ** -20


def test_apply_revert_protocol_errors():
    params = init_params(NET, seed=4)
    state = awp.zero_state(params, gamma=0.01, eta=0.01)
    with pytest.raises(UsageError):
        awp.revert(params, state)
    awp.apply(params, state)
    with pytest.raises(UsageError):
        awp.apply(params, state)
    awp.revert(params, state)


def test_scale_covariance_of_unprojected_step():
    # multiplying theta by c scales the (unprojected) step by c
    base = np.array([1.0, -2.0, 0.5], dtype=np.float64)
    g = np.array([0.3, 0.1, -0.2], dtype=np.float64)
    steps = {}
    for c in (1.0, 3.0):
        theta = ParameterSet({"w": Tensor(c * base, requires_grad=True)})
        state = awp.zero_state(theta, gamma=1e9, eta=0.05)  # gamma huge: projection inactive
        awp.awp_ascent(theta, {"w": g}, state)
        steps[c] = state.phi["w"].copy()
    assert np.allclose(steps[3.0], 3.0 * steps[1.0], rtol=1e-12)


def test_global_scope_normalizes_with_whole_vector_norms():
    params = init_params(NET, seed=5)
    x = rng(5, 1).standard_normal((4, 1, 8, 8)).astype(np.float32)
    y = rng(5, 2).integers(0, 2, size=4)
    grads, _ = grads_of(params, x, y)
    state = awp.zero_state(params, gamma=1e9, eta=0.01)
    awp.awp_ascent(params, grads, state, scope="global")
    gnorm = np.sqrt(sum(np.sum(g.astype(np.float64) ** 2) for g in grads.values()))
    tnorm = np.sqrt(sum(n * n for n in params.frobenius_norms().values()))
    for name, g in grads.items():
        assert np.allclose(state.phi[name], 0.01 * tnorm / gnorm * g, rtol=1e-5)


def test_one_ascent_increases_loss_on_most_draws():
    wins = 0
    trials = 100
    for seed in range(trials):
        params = init_params(NET, seed=seed)
        x = rng(seed, 11).standard_normal((8, 1, 8, 8)).astype(np.float32) * 2
        y = rng(seed, 12).integers(0, 2, size=8)
        grads, loss_before = grads_of(params, x, y)
        state = awp.zero_state(params, gamma=0.002, eta=0.01)
        awp.awp_ascent(params, grads, state)
        awp.apply(params, state)
        with no_grad():
            loss_after = cross_entropy(forward(NET, params, x).logits, y).item()
        awp.revert(params, state)
        wins += loss_after >= loss_before
    assert wins >= 90


def test_ascent_counters_audit_one_step():
    params = init_params(NET, seed=6)
    x = rng(6, 1).standard_normal((4, 1, 8, 8)).astype(np.float32)
    y = rng(6, 2).integers(0, 2, size=4)
    grads, _ = grads_of(params, x, y)
    state = awp.zero_state(params, gamma=0.002, eta=0.01)
    awp.awp_ascent(params, grads, state)
    assert state.n_ascents == 1 and state.n_projections == 1
