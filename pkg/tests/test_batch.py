"""The vectorized minibatch kernels must reproduce the per-episode code to
roundoff; these are the equality checks that license the fast training path."""

import numpy as np
import pytest

from uorolab import batch as batch_mod
from uorolab import rnn
from uorolab.estimators import FIXED_ALPHA, GIR, ScalingSchedule, run_preuoro, run_uoro
from uorolab.exact import bptt_gradient
from uorolab.noise import episode_noise
from uorolab.rnn import BernoulliHead, CutVertex, RnnParams, run_episode
from uorolab.variance import alpha_to_beta_gamma


def queue_like_batch(rng, batch=3, length=7, hidden=5):
    params = RnnParams(
        0.6 * rng.standard_normal((hidden, hidden + 2)) / np.sqrt(hidden + 2),
        rnn.VANILLA_TANH, hidden, 1,
    )
    inputs = rng.integers(0, 2, size=(batch, length, 1)).astype(float)
    bits = rng.integers(0, 2, size=(length, batch)).astype(float)
    mask = np.array([t >= 2 for t in range(length)])
    head = BernoulliHead(0.4 * rng.standard_normal((1, hidden + 1)))
    targets = [
        [None if not mask[t] else np.array([bits[t, b]]) for t in range(length)]
        for b in range(batch)
    ]
    return params, inputs, bits, mask, head, targets


def tapes_for(params, inputs, targets, head):
    return [
        run_episode(params, inputs[b], targets[b], head)
        for b in range(inputs.shape[0])
    ]


class TestForwardAndLosses:
    def test_forward_matches_per_episode(self):
        rng = np.random.default_rng(120)
        params, inputs, bits, mask, head, targets = queue_like_batch(rng)
        tape = batch_mod.forward_batch(params, inputs)
        singles = tapes_for(params, inputs, targets, head)
        for b, single in enumerate(singles):
            for t in range(tape.length):
                np.testing.assert_allclose(tape.a[t, b], single.caches[t].a, atol=0)
                np.testing.assert_allclose(tape.h[t, b], single.caches[t].h, atol=0)
                np.testing.assert_allclose(tape.d[t, b], single.caches[t].d, atol=0)

    def test_bernoulli_losses_match(self):
        rng = np.random.default_rng(121)
        params, inputs, bits, mask, head, targets = queue_like_batch(rng)
        tape = batch_mod.forward_batch(params, inputs)
        batch_mod.attach_bernoulli_losses(tape, head.weights, bits, mask)
        singles = tapes_for(params, inputs, targets, head)
        for b, single in enumerate(singles):
            np.testing.assert_allclose(tape.losses[:, b], single.losses, atol=1e-12)
            np.testing.assert_allclose(
                tape.loss_grads[:, b], single.loss_grads, atol=1e-12
            )

    def test_softmax_losses_match(self):
        rng = np.random.default_rng(122)
        hidden, batch, length = 4, 3, 5
        params = RnnParams(
            0.5 * rng.standard_normal((hidden, hidden + 3)) / np.sqrt(hidden + 3),
            rnn.VANILLA_TANH, hidden, 2,
        )
        inputs = rng.standard_normal((batch, length, 2))
        labels = rng.integers(0, 10, size=batch)
        head = rnn.SoftmaxHead(0.3 * rng.standard_normal((10, hidden + 1)))
        tape = batch_mod.forward_batch(params, inputs)
        batch_mod.attach_softmax_losses(tape, head.weights, labels)
        for b in range(batch):
            targets = [int(labels[b])] * length
            single = run_episode(params, inputs[b], targets, head)
            np.testing.assert_allclose(tape.losses[:, b], single.losses, atol=1e-12)
            np.testing.assert_allclose(
                tape.loss_grads[:, b], single.loss_grads, atol=1e-12
            )


class TestGradientKernels:
    def test_bptt_batch_matches(self):
        rng = np.random.default_rng(123)
        params, inputs, bits, mask, head, targets = queue_like_batch(rng)
        tape = batch_mod.forward_batch(params, inputs)
        batch_mod.attach_bernoulli_losses(tape, head.weights, bits, mask)
        grads = batch_mod.bptt_batch(params, tape)
        for b, single in enumerate(tapes_for(params, inputs, targets, head)):
            exact = bptt_gradient(single).g
            np.testing.assert_allclose(grads[b].reshape(-1), exact, atol=1e-12)

    @pytest.mark.parametrize("mode", ["gir", "fixed"])
    def test_uoro_batch_matches(self, mode):
        rng = np.random.default_rng(124)
        params, inputs, bits, mask, head, targets = queue_like_batch(rng)
        length, batch = inputs.shape[1], inputs.shape[0]
        tape = batch_mod.forward_batch(params, inputs)
        batch_mod.attach_bernoulli_losses(tape, head.weights, bits, mask)
        noises = [episode_noise(7, j, length, params.hidden_size) for j in range(batch)]
        u = np.stack([n.u for n in noises], axis=1)
        abg = alpha_to_beta_gamma(np.ones(length)) if mode == "fixed" else None
        estimates, _, _ = batch_mod.uoro_batch(params, tape, u, mode=mode,
                                               alpha_beta_gamma=abg)
        for b, single in enumerate(tapes_for(params, inputs, targets, head)):
            if mode == "gir":
                schedule = ScalingSchedule(GIR)
            else:
                schedule = ScalingSchedule(FIXED_ALPHA, alpha=np.ones(length))
            ref = run_uoro(single, CutVertex.PREACTIVATION, noises[b], schedule)
            np.testing.assert_allclose(
                estimates[b].reshape(-1), ref.estimate, atol=1e-12,
            )

    @pytest.mark.parametrize("mode", ["gir", "fixed"])
    def test_preuoro_batch_matches(self, mode):
        rng = np.random.default_rng(125)
        params, inputs, bits, mask, head, targets = queue_like_batch(rng)
        length, batch = inputs.shape[1], inputs.shape[0]
        tape = batch_mod.forward_batch(params, inputs)
        batch_mod.attach_bernoulli_losses(tape, head.weights, bits, mask)
        noises = [episode_noise(9, j, length, params.hidden_size) for j in range(batch)]
        tau = np.stack([n.tau for n in noises], axis=1)
        abg = alpha_to_beta_gamma(np.ones(length)) if mode == "fixed" else None
        estimates, _, _ = batch_mod.preuoro_batch(params, tape, tau, mode=mode,
                                                  alpha_beta_gamma=abg)
        for b, single in enumerate(tapes_for(params, inputs, targets, head)):
            if mode == "gir":
                schedule = ScalingSchedule(GIR)
            else:
                schedule = ScalingSchedule(FIXED_ALPHA, alpha=np.ones(length))
            ref = run_preuoro(single, noises[b], schedule)
            np.testing.assert_allclose(
                estimates[b].reshape(-1), ref.estimate, atol=1e-12,
            )
