"""
Counter-based Gaussian source

Every stream is an independent numpy Philox generator keyed by
(seed, stream index): key = seed · 2⁶⁴ + stream. Scenario steps use the
step index as the stream, Monte Carlo chunks use the chunk index, so draws
do not depend on evaluation order or thread count.

Standard normals are produced with the Box–Muller transform from pairs of
uniforms (u1, u2), using 1 - u1 so the logarithm never sees 0.
"""

import math

import numpy as np

from .data_models import Gaussian
from .exceptions import InvalidValue

_KEY_LIMIT = 2 ** 64


def stream_generator(seed: int, stream: int) -> np.random.Generator:
    """Generator of one (seed, stream) pair."""
    if not (0 <= int(seed) < _KEY_LIMIT and 0 <= int(stream) < _KEY_LIMIT):
        raise InvalidValue(f"seed and stream must be in [0, 2**64), got ({seed}, {stream})")
    return np.random.Generator(np.random.Philox(key=int(seed) * _KEY_LIMIT + int(stream)))


def standard_normals(generator: np.random.Generator, shape) -> np.ndarray:
    """Box–Muller standard normal draws of the given shape."""
    count = int(np.prod(shape))
    pairs = (count + 1) // 2
    uniforms = generator.random((pairs, 2))
    radius = np.sqrt(-2.0 * np.log(1.0 - uniforms[:, 0]))
    angle = 2.0 * math.pi * uniforms[:, 1]
    normals = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)]).reshape(-1)
    return normals[:count].reshape(shape)


def covariance_root(cov: np.ndarray) -> np.ndarray:
    """
    Matrix S with S Sᵀ = cov, from the symmetric eigendecomposition.

    Singular (even zero) covariances are allowed.
    """
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    return eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))


def sample_gaussian(generator: np.random.Generator, g: Gaussian, count: int) -> np.ndarray:
    """(count, dim) samples of g."""
    normals = standard_normals(generator, (count, g.dim))
    return g.mean + normals @ covariance_root(g.cov).T


def draw_noise(generator: np.random.Generator, cov: np.ndarray) -> np.ndarray:
    """One zero-mean sample with covariance cov."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    normals = standard_normals(generator, (cov.shape[0],))
    return covariance_root(cov) @ normals
