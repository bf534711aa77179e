"""Counter-based random streams.

Every episode gets its own Philox block keyed by ``(seed, stream)`` with the
episode number in the counter, so the uniform used for ``(step, factor)`` does
not depend on how many draws other episodes or factors consumed.
"""
import numpy as np

_MASK64 = (1 << 64) - 1

ENV_STREAM = 0
COST_STREAM = 1
AUX_STREAM = 7


def episode_generator(seed: int, episode: int, stream: int = ENV_STREAM) -> np.random.Generator:
    key = (int(seed) & _MASK64) | ((int(stream) & _MASK64) << 64)
    counter = (int(episode) & _MASK64) << 128
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def episode_uniforms(seed: int, episode: int, shape, stream: int = ENV_STREAM) -> np.ndarray:
    """Uniforms in [0, 1) for one episode; cell ``[step, factor]`` is fixed by its key."""
    return episode_generator(seed, episode, stream).random(shape)


def sample_categorical(cdf: np.ndarray, u: float) -> int:
    """Inverse-CDF draw from a cumulative distribution (last entry ~ 1)."""
    k = int(np.searchsorted(cdf, u, side="right"))
    return min(k, len(cdf) - 1)
