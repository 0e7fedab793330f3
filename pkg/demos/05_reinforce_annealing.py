#!/usr/bin/env python3
"""Perturbed-state score-function estimation anneals to the rank-one sketch.

Adding Gaussian noise sigma*u_t to the hidden state makes the network a
stochastic policy whose score-function (REINFORCE) gradient can be computed
online.  With a noise-free baseline, the estimate converges to the plain
rank-one sketch on the same noise as sigma -> 0 (difference O(sigma));
without a baseline its variance blows up as 1/sigma^2.  This script measures
both power laws.
"""

import numpy as np

from uorolab.estimators import (
    FIXED_ALPHA,
    ScalingSchedule,
    reinforce_episode,
    run_uoro,
)
from uorolab.noise import episode_noise
from uorolab.rnn import CutVertex, RnnParams, SoftmaxHead, run_episode

rng = np.random.default_rng(3)
hidden, inputs_dim, length = 4, 2, 6
params = RnnParams(0.5 * rng.standard_normal((hidden, hidden + inputs_dim + 1)),
                   "vanilla-tanh", hidden, inputs_dim)
inputs = rng.standard_normal((length, inputs_dim))
targets = [int(rng.integers(3)) for _ in range(length)]
head = SoftmaxHead(rng.standard_normal((3, hidden + 1)))
tape = run_episode(params, inputs, targets, head)
schedule = ScalingSchedule(FIXED_ALPHA, alpha=np.ones(length))

sigmas = [1e-1, 1e-2, 1e-3]
n = 400
print(f"{'sigma':>8s} {'|mean difference|':>18s} {'no-baseline variance':>21s}")
mean_diffs, variances = [], []
for sigma in sigmas:
    diff = np.zeros(params.num_params)
    nb = np.empty((n, params.num_params))
    for i in range(n):
        noise = episode_noise(600, i, length, hidden)  # shared across sigmas
        corrected = reinforce_episode(params, inputs, targets, head, sigma,
                                      noise, baseline=tape.losses)
        sketch = run_uoro(tape, CutVertex.STATE, noise, schedule)
        diff += corrected.estimate - sketch.estimate
        nb[i] = reinforce_episode(params, inputs, targets, head, sigma, noise,
                                  baseline="none").estimate
    mean_diffs.append(np.linalg.norm(diff / n))
    variances.append(float(np.mean(np.var(nb, axis=0))))
    print(f"{sigma:8.0e} {mean_diffs[-1]:18.3e} {variances[-1]:21.3e}")

logs = np.log10(sigmas)
print(f"\nlog-log slope of the difference: "
      f"{np.polyfit(logs, np.log10(mean_diffs), 1)[0]:+.3f}   (theory: +1)")
print(f"log-log slope of the variance:   "
      f"{np.polyfit(logs, np.log10(variances), 1)[0]:+.3f}   (theory: -2)")
