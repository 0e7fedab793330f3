"""Ground-truth differentiation over an episode tape.

Two exact engines compute the same total gradient by the two accumulation
orders: reverse accumulation (bptt_gradient) propagates a state adjoint
backwards, forward accumulation (rtrl_jacobians) carries the full
state-to-parameter influence matrix forwards.  episode_tensors materializes
the per-step adjoints dL_t/dz_s that the variance toolkit consumes.
"""

from dataclasses import dataclass

import numpy as np

from . import rnn
from .errors import ShapeError, SizeGuardError
from .rnn import CutVertex, EpisodeTape

TENSOR_GUARD = 10**5  # cap on T * state_size for the O(T^2) adjoint sweep


@dataclass
class GradientVector:
    """Total gradient dL/dtheta plus the total loss it differentiates."""

    g: np.ndarray
    total_loss: float


def bptt_gradient(tape: EpisodeTape) -> GradientVector:
    """Reverse accumulation: one backward sweep over the tape.

    Maintains delta_t = dL/d(state_t) by
        delta_t = delta_{t+1} J_state(t+1) + dL_t/d(state_t)
    and accumulates delta_t^T d(state_t)/d(theta) at each step.
    """
    if tape.length == 0:
        raise ShapeError("empty tape")
    params = tape.params
    grad = np.zeros(params.num_params)
    delta = np.zeros(params.state_size)
    for t in range(tape.length - 1, -1, -1):
        delta = delta + tape.loss_grad_full(t)
        grad += rnn.vjp_params(tape.caches[t], delta)
        delta = rnn.vjp_state(tape.caches[t], delta)
    return GradientVector(g=grad, total_loss=tape.total_loss())


def rtrl_jacobians(tape: EpisodeTape):
    """Forward accumulation; returns the per-step influence matrices and the
    total gradient they imply.

    The influence matrix G_t = d(state_t)/d(theta) obeys
        G_t = J_state(t) G_{t-1} + d(state_t)/d(theta_t)
    and the gradient is sum_t dL_t/d(state_t) G_t.
    """
    if tape.length == 0:
        raise ShapeError("empty tape")
    params = tape.params
    if params.num_params * params.state_size > rnn.DENSE_GUARD:
        raise SizeGuardError("influence matrix too large to materialize")
    influence = np.zeros((params.state_size, params.num_params))
    jacobians = []
    grad = np.zeros(params.num_params)
    eye = np.eye(params.state_size)
    for t in range(tape.length):
        cache = tape.caches[t]
        j_state = rnn.dense_state_jacobian(cache)
        immediate = np.stack([rnn.vjp_params(cache, eye[i]) for i in range(params.state_size)])
        influence = j_state @ influence + immediate
        jacobians.append(influence.copy())
        grad += tape.loss_grad_full(t) @ influence
    return jacobians, GradientVector(g=grad, total_loss=tape.total_loss())


@dataclass
class EpisodeTensors:
    """Exact per-episode adjoints at a fixed cut vertex.

    b[t, s] = dL_{t+1}/dz_{s+1} (0-indexed; zero for s > t by causality),
    a[s] the augmented inputs, a_norms their Euclidean norms.  For cuts other
    than the preactivation, j_dense[s] holds d(z_s)/d(theta) densely.
    """

    cut: CutVertex
    b: np.ndarray  # (T, T, N_z)
    a: np.ndarray  # (T, A)
    a_norms: np.ndarray  # (T,)
    j_dense: list | None = None

    @property
    def length(self) -> int:
        return self.b.shape[0]

    @property
    def cut_dim(self) -> int:
        return self.b.shape[2]

    def theta_frob_sq(self, s: int) -> float:
        """||d(z_s)/d(theta)||_F^2 (= N_z ||a_s||^2 at the preactivation cut)."""
        if self.cut == CutVertex.PREACTIVATION:
            return self.cut_dim * float(self.a_norms[s] ** 2)
        return float(np.sum(self.j_dense[s] ** 2))

    def total_gradient(self) -> np.ndarray:
        """sum_t sum_{s<=t} b[t,s]^T d(z_s)/d(theta); equals the BPTT gradient."""
        t_len = self.length
        grad = None
        for s in range(t_len):
            coeff = self.b[s:, s].sum(axis=0)
            if self.cut == CutVertex.PREACTIVATION:
                term = np.outer(coeff, self.a[s]).reshape(-1)
            else:
                term = coeff @ self.j_dense[s]
            grad = term if grad is None else grad + term
        return grad


def episode_tensors(tape: EpisodeTape, cut) -> EpisodeTensors:
    """One backward sweep per loss index (O(T^2) work, desk scale only)."""
    cut = rnn.CutVertex(cut) if not isinstance(cut, CutVertex) else cut
    params = tape.params
    t_len = tape.length
    if t_len * params.state_size > TENSOR_GUARD:
        raise SizeGuardError(
            f"episode_tensors guard exceeded: T*S = {t_len * params.state_size}"
        )
    n_z = params.cut_size(cut)
    b = np.zeros((t_len, t_len, n_z))
    for t in range(t_len):
        delta = tape.loss_grad_full(t)
        for s in range(t, -1, -1):
            b[t, s] = rnn.vjp_to_cut(tape.caches[s], cut, delta)
            delta = rnn.vjp_state(tape.caches[s], delta)
    a = np.stack([c.a for c in tape.caches])
    tensors = EpisodeTensors(
        cut=cut,
        b=b,
        a=a,
        a_norms=np.linalg.norm(a, axis=1),
    )
    if cut != CutVertex.PREACTIVATION:
        tensors.j_dense = [rnn.dense_theta_jacobian(c, cut) for c in tape.caches]
    return tensors
