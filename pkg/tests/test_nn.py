import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedmutual import nn
from fedmutual.nn import LossSpec, ModelParameters, ShapeError


def single(w, b):
    return ModelParameters([np.array(w, dtype=float)], [np.array(b, dtype=float)])


def small_net(seed=0, dims=(4, 6, 5, 1), dropout=(0.2, 0.2)):
    return nn.init_params(list(dims), dropout, seed=seed)


# -- forward -----------------------------------------------------------------

def test_zero_network_outputs_half():
    p = nn.init_params([3, 4, 1], (0.0,), seed=1)
    p = ModelParameters([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])
    out, _ = nn.forward(p, np.random.default_rng(0).normal(size=(7, 3)))
    assert np.all(out == 0.5)


def test_single_unit_at_origin():
    out, _ = nn.forward(single([[1.0]], [0.0]), np.array([[0.0]]))
    assert out[0] == 0.5


def test_single_layer_known_value():
    out, _ = nn.forward(single([[2.0, -1.0]], [0.5]), np.array([[1.0, 1.0]]))
    assert out[0] == pytest.approx(1 / (1 + math.exp(-1.5)), abs=1e-12)
    assert out[0] == pytest.approx(0.817574, abs=1e-6)


def test_forward_rejects_wrong_width():
    with pytest.raises(ShapeError, match="expecting 4 columns"):
        nn.forward(small_net(), np.zeros((2, 3)))


def test_forward_rejects_non_finite():
    x = np.zeros((2, 4))
    x[1, 2] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        nn.forward(small_net(), x)


def test_train_mode_needs_rng_when_dropout_active():
    with pytest.raises(ValueError, match="rng"):
        nn.forward(small_net(), np.zeros((2, 4)), mode="train")


def test_eval_is_bitwise_deterministic():
    p = small_net(3)
    x = np.random.default_rng(5).normal(size=(50, 4))
    a, _ = nn.forward(p, x)
    b, _ = nn.forward(p.copy(), x.copy())
    assert a.tobytes() == b.tobytes()


def test_inverted_dropout_preserves_expected_logit():
    # one hidden layer keeps the logit linear in the mask, so the mean is exact
    p = nn.init_params([3, 8, 1], (0.3,), seed=2)
    x = np.random.default_rng(1).normal(size=(5, 3))
    _, cache = nn.forward(p, x)
    eval_logit = cache["pre"][-1][:, 0]
    rng = np.random.default_rng(11)
    total = np.zeros(5)
    n = 20_000
    for _ in range(n):
        _, c = nn.forward(p, x, mode="train", rng=rng)
        total += c["pre"][-1][:, 0]
    mean = total / n
    assert np.all(np.abs(mean - eval_logit) <= 0.02 * np.abs(eval_logit) + 1e-3)


def test_parameter_invariants_enforced():
    with pytest.raises(ShapeError, match="exactly one output"):
        ModelParameters([np.zeros((2, 3))], [np.zeros(2)])
    with pytest.raises(ShapeError, match="expects"):
        ModelParameters([np.zeros((4, 3)), np.zeros((1, 5))], [np.zeros(4), np.zeros(1)])
    with pytest.raises(ValueError, match="non-finite"):
        ModelParameters([np.array([[np.inf]])], [np.zeros(1)])


def test_init_uses_glorot_bounds():
    p = nn.init_params([10, 32, 16, 1], seed=4)
    for w, b in zip(p.weights, p.biases):
        fan_out, fan_in = w.shape
        assert np.abs(w).max() <= math.sqrt(6 / (fan_in + fan_out))
        assert not b.any()
    assert nn.init_params([10, 32, 1], seed=4).flat().tobytes() == nn.init_params([10, 32, 1], seed=4).flat().tobytes()


# -- losses ------------------------------------------------------------------

def test_bce_examples():
    assert nn.bce_loss(np.array([0.5]), np.array([1])) == pytest.approx(math.log(2), abs=1e-12)
    assert nn.bce_loss(np.array([1 - 1e-7]), np.array([1])) == pytest.approx(0.0, abs=2e-7)
    assert nn.bce_loss(np.array([0.5, 0.5]), np.array([0, 1])) == pytest.approx(math.log(2))


def test_bce_length_mismatch():
    with pytest.raises(ShapeError):
        nn.bce_loss(np.array([0.5, 0.5]), np.array([1]))


def test_kl_examples():
    assert nn.kl_divergence((0.5, 0.5), (0.5, 0.5)) == 0.0
    assert nn.kl_divergence((0.7, 0.3), (0.7, 0.3)) == 0.0
    assert nn.kl_divergence((0.8, 0.2), (0.5, 0.5)) == pytest.approx(
        0.8 * math.log(1.6) + 0.2 * math.log(0.4), abs=1e-12)
    assert nn.kl_divergence((0.8, 0.2), (0.5, 0.5)) == pytest.approx(0.192745, abs=1e-6)


def test_kl_handles_zero_probabilities():
    v = nn.kl_divergence((1.0, 0.0), (0.0, 1.0))
    assert math.isfinite(v) and v > 0


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_kl_non_negative_property(p, q):
    v = nn.kl_divergence((p, 1 - p), (q, 1 - q))
    assert v >= 0
    if nn.clamp(p) == nn.clamp(q):
        assert v == 0


def test_kld_avg_examples():
    assert nn.kld_avg(np.array([0.6]), [np.array([0.5])]) == pytest.approx(0.020136, abs=1e-6)
    both = nn.kld_avg(np.array([0.6]), [np.array([0.5]), np.array([0.7])])
    assert both == pytest.approx(0.021359, abs=1e-6)
    own = np.array([0.2, 0.9, 0.4])
    assert nn.kld_avg(own, [own.copy(), own.copy()]) == 0.0


def test_kld_avg_needs_peers():
    with pytest.raises(ValueError, match="at least one peer"):
        nn.kld_avg(np.array([0.5]), [])


def test_kld_avg_reverse_direction():
    rev = nn.kld_avg(np.array([0.6]), [np.array([0.5])], direction="reverse")
    assert rev == pytest.approx(nn.kl_divergence((0.5, 0.5), (0.6, 0.4)), abs=1e-12)


def test_mutual_loss_sums():
    assert nn.mutual_loss(0.3, 0.2) == pytest.approx(0.5)
    assert nn.mutual_loss(0.7, 0.0) == 0.7
    assert nn.mutual_loss(0.693147, 0.192745) == pytest.approx(0.885892, abs=1e-9)


def test_kld_zero_reduces_mutual_to_bce():
    p = np.array([0.3, 0.8])
    y = np.array([0, 1])
    total, bce, kld = nn.loss_terms(p, y, LossSpec("bce+kld", [p.copy()]))
    assert kld == 0.0 and total == bce == nn.bce_loss(p, y)


# -- gradients ---------------------------------------------------------------

def test_logistic_gradient_closed_form():
    p = single([[0.3]], [0.0])
    x, y = np.array([[2.0]]), np.array([1])
    _, g = nn.compute_gradients(p, x, y, LossSpec(), mode="eval")
    prob = 1 / (1 + math.exp(-0.6))
    assert g.weights[0][0, 0] == pytest.approx((prob - 1) * 2.0, abs=1e-12)
    assert g.biases[0][0] == pytest.approx(prob - 1, abs=1e-12)


def test_gradient_vanishes_at_saturated_optimum():
    p = single([[40.0]], [0.0])
    x, y = np.array([[1.0]]), np.array([1])
    peer = nn.predict(p, x)
    _, g = nn.compute_gradients(p, x, y, LossSpec("bce+kld", [peer]), mode="eval")
    assert g.norm() < 1e-6


@pytest.mark.parametrize("direction", ["paper", "reverse"])
@pytest.mark.parametrize("mode", ["bce", "bce+kld"])
def test_finite_differences(mode, direction):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(16, 4))
    y = rng.integers(0, 2, 16)
    peers = [rng.uniform(0.05, 0.95, 16) for _ in range(2)] if mode == "bce+kld" else []
    spec = LossSpec(mode, peers, kl_direction=direction, kl_coefficient=0.7)
    assert nn.finite_difference_check(small_net(1), x, y, spec, rng=np.random.default_rng(3)) < 1e-4


def test_finite_differences_linear_model():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(10, 3))
    y = rng.integers(0, 2, 10)
    assert nn.finite_difference_check(nn.init_params([3, 1], seed=0), x, y, LossSpec()) < 1e-4


def test_finite_difference_sampled_coordinates():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(8, 4))
    y = rng.integers(0, 2, 8)
    err = nn.finite_difference_check(small_net(2), x, y, LossSpec(), max_coords=20)
    assert err < 1e-4


@pytest.mark.parametrize("h", [0.0, 1e-8, 1e-2])
def test_finite_difference_rejects_bad_step(h):
    with pytest.raises(ValueError, match="step"):
        nn.finite_difference_check(small_net(), np.zeros((2, 4)), np.array([0, 1]), LossSpec(), h=h)


def test_peer_gradient_does_not_flow_into_peers():
    p = small_net(4)
    x = np.random.default_rng(0).normal(size=(6, 4))
    peers = [np.full(6, 0.3)]
    spec = LossSpec("bce+kld", peers)
    nn.compute_gradients(p, x, np.ones(6), spec, mode="eval")
    assert np.all(peers[0] == 0.3)


# -- sgd ---------------------------------------------------------------------

def test_sgd_zero_gradient_identity():
    p = small_net()
    g = nn.GradientSet([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])
    assert nn.sgd_step(p, g, 0.1).flat().tobytes() == p.flat().tobytes()


def test_sgd_arithmetic_and_purity():
    p = single([[2.0]], [0.0])
    g = nn.GradientSet([np.array([[0.5]])], [np.array([0.0])])
    q = nn.sgd_step(p, g, 1.0)
    assert q.weights[0][0, 0] == 1.5
    assert p.weights[0][0, 0] == 2.0
    r = nn.sgd_step(nn.sgd_step(p, g, 0.25), g, 0.25)
    assert r.weights[0][0, 0] == pytest.approx(2.0 - 2 * 0.25 * 0.5)


def test_sgd_shape_mismatch():
    p = single([[2.0]], [0.0])
    g = nn.GradientSet([np.zeros((1, 2))], [np.zeros(1)])
    with pytest.raises(ShapeError):
        nn.sgd_step(p, g, 0.1)


def test_sgd_monotone_on_logistic_regression():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 3))
    y = (x @ np.array([1.0, -2.0, 0.5]) + 0.3 * rng.normal(size=200) > 0).astype(int)
    p = nn.init_params([3, 1], seed=0)
    losses = []
    for _ in range(100):
        loss, g = nn.compute_gradients(p, x, y, LossSpec(), mode="eval")
        losses.append(loss)
        p = nn.sgd_step(p, g, 0.05)
    assert all(b <= a for a, b in zip(losses, losses[1:]))
