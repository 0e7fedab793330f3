import numpy as np
import pytest

from uorolab import rnn
from uorolab.errors import ShapeError, SizeGuardError
from uorolab.exact import bptt_gradient, episode_tensors, rtrl_jacobians
from uorolab.rnn import CutVertex, RnnParams, SoftmaxHead, run_episode, vjp_params

from helpers import (
    finite_difference_gradient,
    finite_difference_loss_at_cut,
    make_instance,
)


class LastStateHead:
    """L = sum of h; gives a simple analytic loss for the linear cell."""

    def loss_and_grad(self, h, target):
        if target is None:
            return 0.0, np.zeros_like(h)
        return float(np.sum(h)), np.ones_like(h)


class TestBptt:
    def test_single_step_has_no_recursion(self):
        rng = np.random.default_rng(21)
        params, inputs, targets, head = make_instance(rng, length=1)
        tape = run_episode(params, inputs, targets, head)
        grad = bptt_gradient(tape).g
        direct = vjp_params(tape.caches[0], tape.loss_grad_full(0))
        np.testing.assert_allclose(grad, direct, atol=1e-14)

    def test_scalar_linear_cell_analytic_value(self):
        # h_t = w h_{t-1} + x_t, h_0 = 1, x = 0, w = 0.5, loss = h_2:
        # dL/dw = h_1 + w h_0 = 1.0
        params = RnnParams(np.array([[0.5, 0.0, 0.0]]), rnn.VANILLA_LINEAR, 1, 1)
        inputs = np.zeros((2, 1))
        targets = [None, 1.0]
        tape = run_episode(params, inputs, targets, LastStateHead(),
                           initial_state=np.array([1.0]))
        grad = bptt_gradient(tape).g
        assert grad[0] == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("cell", [rnn.VANILLA_TANH, rnn.LSTM])
    def test_matches_finite_differences(self, cell):
        rng = np.random.default_rng(22)
        params, inputs, targets, head = make_instance(
            rng, cell_kind=cell, hidden=6 if cell != rnn.LSTM else 3, length=10
        )
        tape = run_episode(params, inputs, targets, head)
        grad = bptt_gradient(tape).g
        fd = finite_difference_gradient(params, inputs, targets, head)
        scale = max(np.linalg.norm(fd), 1e-12)
        assert np.linalg.norm(grad - fd) / scale < 1e-5

    def test_empty_tape_rejected(self):
        rng = np.random.default_rng(23)
        params, inputs, targets, head = make_instance(rng, length=1)
        tape = run_episode(params, inputs, targets, head)
        tape.caches = []
        with pytest.raises(ShapeError):
            bptt_gradient(tape)


class TestRtrl:
    def test_first_jacobian_is_immediate_influence(self):
        rng = np.random.default_rng(24)
        params, inputs, targets, head = make_instance(rng, length=1)
        tape = run_episode(params, inputs, targets, head)
        jacobians, _ = rtrl_jacobians(tape)
        cache = tape.caches[0]
        expected = rnn.dense_cut_jacobian(cache, CutVertex.PREACTIVATION) @ \
            rnn.dense_theta_jacobian(cache, CutVertex.PREACTIVATION)
        np.testing.assert_allclose(jacobians[0], expected, atol=1e-12)

    def test_agrees_with_bptt(self):
        rng = np.random.default_rng(25)
        params, inputs, targets, head = make_instance(rng, hidden=6, length=10)
        tape = run_episode(params, inputs, targets, head)
        _, fwd = rtrl_jacobians(tape)
        rev = bptt_gradient(tape)
        scale = max(np.linalg.norm(rev.g), 1e-12)
        assert np.linalg.norm(fwd.g - rev.g) / scale < 1e-8

    def test_zero_weights_leave_only_immediate_term(self):
        params = RnnParams(np.zeros((3, 6)), rnn.VANILLA_TANH, 3, 2)
        rng = np.random.default_rng(26)
        inputs = rng.standard_normal((4, 2))
        targets = [int(rng.integers(3)) for _ in range(4)]
        head = SoftmaxHead(rng.standard_normal((3, 4)))
        tape = run_episode(params, inputs, targets, head)
        jacobians, _ = rtrl_jacobians(tape)
        for t, jac in enumerate(jacobians):
            # tanh'(0) = 1, so the influence is exactly the Kronecker block
            expected = np.kron(np.eye(3), tape.caches[t].a[None, :])
            np.testing.assert_allclose(jac, expected, atol=1e-12)


class TestEpisodeTensors:
    def test_causality_zero_block(self):
        rng = np.random.default_rng(27)
        params, inputs, targets, head = make_instance(rng, length=5)
        tape = run_episode(params, inputs, targets, head)
        tensors = episode_tensors(tape, CutVertex.PREACTIVATION)
        for t in range(5):
            for s in range(t + 1, 5):
                np.testing.assert_array_equal(tensors.b[t, s], np.zeros(4))

    def test_diagonal_is_single_step_chain(self):
        rng = np.random.default_rng(28)
        params, inputs, targets, head = make_instance(rng, length=4)
        tape = run_episode(params, inputs, targets, head)
        tensors = episode_tensors(tape, CutVertex.PREACTIVATION)
        for t in range(4):
            expected = rnn.vjp_to_cut(
                tape.caches[t], CutVertex.PREACTIVATION, tape.loss_grad_full(t)
            )
            np.testing.assert_allclose(tensors.b[t, t], expected, atol=1e-14)

    @pytest.mark.parametrize("cut", [CutVertex.PREACTIVATION, CutVertex.STATE])
    def test_finite_difference_spot_checks(self, cut):
        rng = np.random.default_rng(29)
        params, inputs, targets, head = make_instance(rng, hidden=3, length=6)
        tape = run_episode(params, inputs, targets, head)
        tensors = episode_tensors(tape, cut)
        pairs = [(5, 2), (4, 4), (3, 0), (2, 1), (5, 5)]
        for t, s in pairs:
            direction = rng.standard_normal(tensors.cut_dim)
            fd = finite_difference_loss_at_cut(tape, cut, t, s, direction, head)
            assert tensors.b[t, s] @ direction == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_total_gradient_identity(self):
        rng = np.random.default_rng(30)
        params, inputs, targets, head = make_instance(rng, hidden=3, length=7)
        tape = run_episode(params, inputs, targets, head)
        tensors = episode_tensors(tape, CutVertex.PREACTIVATION)
        exact = bptt_gradient(tape).g
        total = tensors.total_gradient()
        scale = max(np.linalg.norm(exact), 1e-12)
        assert np.linalg.norm(total - exact) / scale < 1e-8

    def test_state_cut_dense_jacobians_stored(self):
        rng = np.random.default_rng(31)
        params, inputs, targets, head = make_instance(rng, hidden=3, length=3)
        tape = run_episode(params, inputs, targets, head)
        tensors = episode_tensors(tape, CutVertex.STATE)
        assert tensors.j_dense is not None
        exact = bptt_gradient(tape).g
        np.testing.assert_allclose(
            tensors.total_gradient(), exact, atol=1e-10 * max(np.linalg.norm(exact), 1)
        )

    def test_size_guard(self):
        rng = np.random.default_rng(32)
        params, inputs, targets, head = make_instance(rng, hidden=3, length=4)
        tape = run_episode(params, inputs, targets, head)
        tape.caches = tape.caches * 40000  # absurd tape length
        with pytest.raises(SizeGuardError):
            episode_tensors(tape, CutVertex.PREACTIVATION)


class TestCrossEngineAgreement:
    def test_twenty_random_instances(self):
        rng = np.random.default_rng(33)
        for i in range(20):
            hidden = int(rng.choice([2, 6]))
            length = int(rng.choice([1, 5, 20]))
            params, inputs, targets, head = make_instance(
                rng, hidden=hidden, length=length
            )
            tape = run_episode(params, inputs, targets, head)
            rev = bptt_gradient(tape).g
            _, fwd = rtrl_jacobians(tape)
            scale = max(np.linalg.norm(rev), 1e-12)
            assert np.linalg.norm(fwd.g - rev) / scale < 1e-8, f"instance {i}"
