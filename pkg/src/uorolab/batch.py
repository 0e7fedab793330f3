"""Vectorized minibatch evaluation for vanilla cells (preactivation cut).

The training loop evaluates minibatch episodes concurrently by stacking them
along a batch axis; reductions use numpy's fixed pairwise order so runs are
reproducible.  These kernels compute exactly what the per-episode code in
exact.py / estimators.py computes (tested to roundoff); LSTM, streaming,
spatial and score-function paths use the per-episode implementations.
"""

from dataclasses import dataclass

import numpy as np

from .rnn import RnnParams, _sigmoid


@dataclass
class BatchTape:
    """Stacked per-step forward records: leading axis is time, then batch."""

    a: np.ndarray  # (T, B, A)
    d: np.ndarray  # (T, B, H) activation derivatives
    h: np.ndarray  # (T, B, H)
    losses: np.ndarray | None = None  # (T, B)
    loss_grads: np.ndarray | None = None  # (T, B, H)
    supervised: np.ndarray | None = None  # (T, B) 0/1 mask

    @property
    def length(self) -> int:
        return self.a.shape[0]

    @property
    def batch(self) -> int:
        return self.a.shape[1]


def forward_batch(params: RnnParams, inputs: np.ndarray) -> BatchTape:
    """inputs (B, T, X) -> stacked caches.  Vanilla tanh cell only."""
    if params.cell_kind != "vanilla-tanh":
        raise ValueError("batched forward covers the vanilla tanh cell")
    b, t_len, _ = inputs.shape
    h_size = params.hidden_size
    w = params.weights
    h = np.zeros((b, h_size))
    a_all = np.empty((t_len, b, params.augmented_size))
    d_all = np.empty((t_len, b, h_size))
    h_all = np.empty((t_len, b, h_size))
    ones = np.ones((b, 1))
    for t in range(t_len):
        a = np.concatenate([h, inputs[:, t], ones], axis=1)
        z = a @ w.T
        h = np.tanh(z)
        a_all[t] = a
        d_all[t] = 1.0 - h * h
        h_all[t] = h
    return BatchTape(a=a_all, d=d_all, h=h_all)


def attach_bernoulli_losses(tape: BatchTape, head_weights: np.ndarray,
                            targets: np.ndarray, mask: np.ndarray):
    """Per-bit cross-entropy for a (1, H+1) head.  targets (T, B) bits;
    mask (T,) marks supervised steps.  Returns the mean head gradient."""
    t_len, b, h_size = tape.h.shape
    wh, bias = head_weights[0, :h_size], head_weights[0, h_size]
    losses = np.zeros((t_len, b))
    grads = np.zeros((t_len, b, h_size))
    head_grad = np.zeros_like(head_weights)
    supervised = np.zeros((t_len, b))
    for t in range(t_len):
        if not mask[t]:
            continue
        logits = tape.h[t] @ wh + bias
        y = targets[t]
        losses[t] = np.maximum(logits, 0) - logits * y + np.log1p(np.exp(-np.abs(logits)))
        err = _sigmoid(logits) - y
        grads[t] = err[:, None] * wh[None, :]
        head_grad[0, :h_size] += err @ tape.h[t]
        head_grad[0, h_size] += err.sum()
        supervised[t] = 1.0
    tape.losses = losses
    tape.loss_grads = grads
    tape.supervised = supervised
    return head_grad / max(supervised.sum(), 1.0)


def attach_softmax_losses(tape: BatchTape, head_weights: np.ndarray,
                          labels: np.ndarray):
    """Softmax cross-entropy at every step for a (K, H+1) head; labels (B,)."""
    t_len, b, h_size = tape.h.shape
    wh, bias = head_weights[:, :h_size], head_weights[:, h_size]
    losses = np.zeros((t_len, b))
    grads = np.zeros((t_len, b, h_size))
    head_grad = np.zeros_like(head_weights)
    idx = np.arange(b)
    for t in range(t_len):
        logits = tape.h[t] @ wh.T + bias
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        probs = e / e.sum(axis=1, keepdims=True)
        losses[t] = -np.log(np.maximum(probs[idx, labels], 1e-300))
        err = probs.copy()
        err[idx, labels] -= 1.0
        grads[t] = err @ wh
        head_grad[:, :h_size] += err.T @ tape.h[t]
        head_grad[:, h_size] += err.sum(axis=0)
    tape.losses = losses
    tape.loss_grads = grads
    tape.supervised = np.ones((t_len, b))
    return head_grad / (t_len * b)


def bptt_batch(params: RnnParams, tape: BatchTape) -> np.ndarray:
    """Exact per-episode gradients, shape (B, N_z, A)."""
    t_len, b, h_size = tape.d.shape
    w_hh = params.weights[:, :h_size]
    delta = np.zeros((b, h_size))
    grads = np.zeros((b, h_size, params.augmented_size))
    for t in range(t_len - 1, -1, -1):
        delta = delta + tape.loss_grads[t]
        gz = delta * tape.d[t]
        grads += np.einsum("bh,ba->bha", gz, tape.a[t])
        delta = gz @ w_hh
    return grads


def _ratio_or_one_vec(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    good = (num > 0) & (den > 0) & np.isfinite(num) & np.isfinite(den)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(num / den)
    return np.where(good, out, 1.0)


def uoro_batch(params: RnnParams, tape: BatchTape, u: np.ndarray,
               mode: str = "gir", alpha_beta_gamma=None, gir_scale: float = 1.0):
    """Rank-one estimates for a minibatch, identity Q0, preactivation cut.

    u has shape (T, B, H).  Returns (estimates (B, N_z, A),
    realized gamma (T, B), realized beta (T, B)).
    """
    t_len, b, h_size = tape.d.shape
    w_hh = params.weights[:, :h_size]
    h_tilde = np.zeros((b, h_size))
    w_tilde = np.zeros((b, h_size, params.augmented_size))
    estimates = np.zeros_like(w_tilde)
    gammas = np.empty((t_len, b))
    betas = np.empty((t_len, b))
    for t in range(t_len):
        fwd = (h_tilde @ w_hh.T) * tape.d[t]
        sp_in = tape.d[t] * u[t]
        if mode == "gir":
            w_norm = np.sqrt(np.sum(w_tilde**2, axis=(1, 2)))
            gamma = _ratio_or_one_vec(w_norm, np.linalg.norm(fwd, axis=1)) * gir_scale
            out_norm = np.linalg.norm(u[t], axis=1) * np.linalg.norm(tape.a[t], axis=1)
            beta = _ratio_or_one_vec(out_norm, np.linalg.norm(sp_in, axis=1)) * gir_scale
        else:
            beta_arr, gamma_arr = alpha_beta_gamma
            gamma = np.full(b, 1.0 if t == 0 else gamma_arr[t - 1])
            beta = np.full(b, beta_arr[t])
        h_tilde = gamma[:, None] * fwd + beta[:, None] * sp_in
        w_tilde = w_tilde / gamma[:, None, None] + \
            np.einsum("bh,ba->bha", u[t], tape.a[t]) / beta[:, None, None]
        s = np.sum(tape.loss_grads[t] * h_tilde, axis=1)
        estimates += s[:, None, None] * w_tilde
        gammas[t] = gamma
        betas[t] = beta
    return estimates, gammas, betas


def preuoro_batch(params: RnnParams, tape: BatchTape, tau: np.ndarray,
                  mode: str = "gir", alpha_beta_gamma=None, gir_scale: float = 1.0):
    """Projection-free estimates for a minibatch; tau has shape (T, B)."""
    t_len, b, h_size = tape.d.shape
    w_hh = params.weights[:, :h_size]
    big_h = np.zeros((b, h_size, h_size))
    w_tilde = np.zeros((b, params.augmented_size))
    estimates = np.zeros((b, h_size, params.augmented_size))
    gammas = np.empty((t_len, b))
    betas = np.empty((t_len, b))
    diag = np.arange(h_size)
    for t in range(t_len):
        fwd = tape.d[t][:, :, None] * np.matmul(w_hh, big_h)
        if mode == "gir":
            gamma = _ratio_or_one_vec(
                np.linalg.norm(w_tilde, axis=1),
                np.sqrt(np.sum(fwd**2, axis=(1, 2))),
            ) * gir_scale
            beta = _ratio_or_one_vec(
                np.linalg.norm(tape.a[t], axis=1), np.linalg.norm(tape.d[t], axis=1)
            ) * gir_scale
        else:
            beta_arr, gamma_arr = alpha_beta_gamma
            gamma = np.full(b, 1.0 if t == 0 else gamma_arr[t - 1])
            beta = np.full(b, beta_arr[t])
        big_h = gamma[:, None, None] * fwd
        big_h[:, diag, diag] += (beta * tau[t])[:, None] * tape.d[t]
        w_tilde = w_tilde / gamma[:, None] + (tau[t] / beta)[:, None] * tape.a[t]
        r = np.einsum("bh,bhk->bk", tape.loss_grads[t], big_h)
        estimates += np.einsum("bk,ba->bka", r, w_tilde)
        gammas[t] = gamma
        betas[t] = beta
    return estimates, gammas, betas
