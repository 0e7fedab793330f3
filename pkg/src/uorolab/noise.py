"""Deterministic per-episode noise streams.

Every estimator draws from an EpisodeNoise, which derives four mutually
independent streams from (base_seed, episode_index):

    tau:   per-step scalars, signs or standard normals (tau_kind)
    nu:    per-step standard normal vectors in the projection space
    sigma: independent scalar replica of tau (online second-moment estimator)
    mu:    independent vector replica of nu

and exposes u = tau * nu.  With sign tau, u is exactly standard normal.
Draws are a pure function of (base_seed, episode_index, step, stream), so two
runs over the same episode index are bit-identical and episodes may be
processed in any order.
"""

from dataclasses import dataclass

import numpy as np

SIGN = "sign"
GAUSSIAN = "gaussian"

_STREAMS = {"tau": 0, "nu": 1, "sigma": 2, "mu": 3}


def _generator(base_seed: int, episode_index: int, stream: str) -> np.random.Generator:
    seq = np.random.SeedSequence(
        entropy=int(base_seed), spawn_key=(int(episode_index), _STREAMS[stream])
    )
    return np.random.Generator(np.random.PCG64(seq))


def _scalars(gen: np.random.Generator, length: int, kind: str) -> np.ndarray:
    if kind == SIGN:
        return gen.integers(0, 2, size=length) * 2.0 - 1.0
    if kind == GAUSSIAN:
        return gen.standard_normal(length)
    raise ValueError(f"unknown tau kind {kind!r}")


@dataclass(frozen=True)
class EpisodeNoise:
    """All random draws one estimator needs for one episode."""

    base_seed: int
    episode_index: int
    tau: np.ndarray  # (T,)
    nu: np.ndarray  # (T, dim)
    sigma: np.ndarray  # (T,)
    mu: np.ndarray  # (T, dim)

    @property
    def u(self) -> np.ndarray:
        return self.tau[:, None] * self.nu

    @property
    def length(self) -> int:
        return self.tau.shape[0]

    @property
    def dim(self) -> int:
        return self.nu.shape[1]


def episode_noise(
    base_seed: int,
    episode_index: int,
    length: int,
    dim: int,
    tau_kind: str = SIGN,
) -> EpisodeNoise:
    return EpisodeNoise(
        base_seed=base_seed,
        episode_index=episode_index,
        tau=_scalars(_generator(base_seed, episode_index, "tau"), length, tau_kind),
        nu=_generator(base_seed, episode_index, "nu").standard_normal((length, dim)),
        sigma=_scalars(_generator(base_seed, episode_index, "sigma"), length, tau_kind),
        mu=_generator(base_seed, episode_index, "mu").standard_normal((length, dim)),
    )
