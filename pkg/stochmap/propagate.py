"""
Moment propagation

First- and second-order estimates of the mean and covariance of a function
of uncertain variables, the derivative oracles they are checked against,
and confidence ellipses of planar position blocks.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize, special

from .config import Config
from .data_models import Ellipse, Gaussian, symmetrize
from .exceptions import (
    CorrelationOutOfRange,
    InvalidValue,
    NonPositiveDefinite,
    NumericalFailure,
    ShapeMismatch,
    ZeroVariance,
)
from .random_source import sample_gaussian, stream_generator
from .transforms2d import (
    Pose2,
    compose2,
    inverse2,
    jac_compose2,
    jac_inverse2,
    wrap_angles,
)

logger = logging.getLogger(__name__)

SECOND_ORDER_FORMS = ("gaussian", "subtractive")


def _as_matrix(m) -> np.ndarray:
    return np.atleast_2d(np.asarray(m, dtype=float))


def _wrap_components(values: np.ndarray, angle_outputs: Sequence[int]) -> np.ndarray:
    if not angle_outputs:
        return values
    values = np.array(values, dtype=float, copy=True)
    idx = list(angle_outputs)
    values[..., idx] = wrap_angles(values[..., idx])
    return values


def linear_moments(M, b, g: Gaussian) -> Gaussian:
    """
    Exact moments of y = M x + b.

    Raises:
        ShapeMismatch: If M, b and g do not conform
    """
    M = _as_matrix(M)
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if M.shape[1] != g.dim or b.shape != (M.shape[0],):
        raise ShapeMismatch(f"Cannot map a {g.dim}-vector with M {M.shape} and b {b.shape}")
    return Gaussian(M @ g.mean + b, M @ g.cov @ M.T)


def cross_cov_transform(M, cxz) -> np.ndarray:
    """C(y, z) = M C(x, z) for y = M x + b."""
    M, cxz = _as_matrix(M), _as_matrix(cxz)
    if M.shape[1] != cxz.shape[0]:
        raise ShapeMismatch(f"Cannot apply M {M.shape} to cross-covariance {cxz.shape}")
    return M @ cxz


def propagate_first_order(f: Callable, jacobian, g: Gaussian, angle_outputs: Sequence[int] = ()) -> Gaussian:
    """
    First-order moments: ŷ = f(x̂), C(y) = F C(x) Fᵀ.

    Args:
        f: Function of the variable vector
        jacobian: F evaluated at g.mean
        g: Input moments
        angle_outputs: Output components wrapped to (-π, π]

    Returns:
        Output moments
    """
    F = _as_matrix(jacobian)
    if F.shape[1] != g.dim:
        raise ShapeMismatch(f"Jacobian {F.shape} does not match input dimension {g.dim}")
    mean = np.atleast_1d(np.asarray(f(g.mean), dtype=float))
    if mean.shape != (F.shape[0],):
        raise ShapeMismatch(f"f returned {mean.shape}, Jacobian has {F.shape[0]} rows")
    return Gaussian(_wrap_components(mean, angle_outputs), symmetrize(F @ g.cov @ F.T))


def propagate_second_order(
    f: Callable,
    jacobian,
    hessians,
    g: Gaussian,
    form: str = "gaussian",
    angle_outputs: Sequence[int] = (),
) -> Gaussian:
    """
    Second-order moments.

    The mean gains ½·tr(Hᵢ C) per output. The covariance adds to F C Fᵀ
    either ½·tr(Hᵢ C Hⱼ C) ("gaussian", exact for quadratic f of Gaussian
    inputs) or -¼·v vᵀ with vᵢ = tr(Hᵢ C) ("subtractive").

    Args:
        f: Function of the variable vector
        jacobian: F at g.mean, m × n
        hessians: Per-output Hessians at g.mean, m × n × n
        g: Input moments
        form: "gaussian" or "subtractive"
        angle_outputs: Output components wrapped to (-π, π]

    Raises:
        ShapeMismatch: On non-conforming derivatives
        InvalidValue: On an unknown form
        NonPositiveDefinite: When the chosen form yields an invalid covariance
    """
    if form not in SECOND_ORDER_FORMS:
        raise InvalidValue(f"Unknown second-order form {form!r}; use one of {SECOND_ORDER_FORMS}")
    F = _as_matrix(jacobian)
    H = np.asarray(hessians, dtype=float)
    if H.ndim == 2:
        H = H[np.newaxis]
    m, n = F.shape
    if n != g.dim or H.shape != (m, n, n):
        raise ShapeMismatch(f"Derivatives F {F.shape}, H {H.shape} do not match dimension {g.dim}")

    C = g.cov
    traces = np.einsum("kij,ji->k", H, C)
    mean = np.atleast_1d(np.asarray(f(g.mean), dtype=float)) + 0.5 * traces
    cov = F @ C @ F.T
    if form == "gaussian":
        HC = H @ C
        cov = cov + 0.5 * np.einsum("iab,jba->ij", HC, HC)
    else:
        cov = cov - 0.25 * np.outer(traces, traces)
    return Gaussian(_wrap_components(mean, angle_outputs), symmetrize(cov))


def _default_steps(x: np.ndarray, relative: float, floor: float) -> np.ndarray:
    return np.maximum(floor, relative * np.abs(x))


def _difference_function(f: Callable, x: np.ndarray, angle_outputs: Sequence[int]) -> Callable:
    """Offsets of f from f(x), angle components wrapped."""
    base = np.atleast_1d(np.asarray(f(x), dtype=float))
    if not np.all(np.isfinite(base)):
        raise NumericalFailure(f"Function is not finite at {x}")

    def offset(v: np.ndarray) -> np.ndarray:
        value = np.atleast_1d(np.asarray(f(v), dtype=float))
        if not np.all(np.isfinite(value)):
            raise NumericalFailure(f"Function is not finite at {v}")
        return _wrap_components(value - base, angle_outputs)

    return offset


def finite_difference_jacobian(
    f: Callable,
    x,
    step=None,
    angle_outputs: Sequence[int] = (),
) -> np.ndarray:
    """
    Central-difference Jacobian.

    Args:
        f: Vector function
        x: Evaluation point
        step: Per-component steps (default max(1e-6, 1e-6·|xᵢ|))
        angle_outputs: Output components differenced with wrap

    Raises:
        NumericalFailure: If f is not finite in the stencil
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    steps = (
        _default_steps(x, Config.FD_RELATIVE_STEP, Config.FD_MIN_STEP)
        if step is None else np.broadcast_to(np.asarray(step, dtype=float), x.shape)
    )
    offset = _difference_function(f, x, angle_outputs)
    columns = []
    for i, h in enumerate(steps):
        e = np.zeros_like(x)
        e[i] = h
        diff = _wrap_components(offset(x + e) - offset(x - e), angle_outputs)
        columns.append(diff / (2.0 * h))
    return np.column_stack(columns)


def finite_difference_hessian(
    f: Callable,
    x,
    step=None,
    angle_outputs: Sequence[int] = (),
) -> np.ndarray:
    """
    Central second-difference Hessians, one per output (m × n × n).

    Default steps are max(1e-4, 1e-4·|xᵢ|).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    steps = (
        _default_steps(x, Config.HESSIAN_RELATIVE_STEP, Config.HESSIAN_MIN_STEP)
        if step is None else np.broadcast_to(np.asarray(step, dtype=float), x.shape)
    )
    offset = _difference_function(f, x, angle_outputs)
    n = x.size
    m = offset(x).size
    hessians = np.zeros((m, n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = steps[i]
        hessians[:, i, i] = (offset(x + ei) + offset(x - ei)) / steps[i] ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = steps[j]
            value = (
                offset(x + ei + ej) - offset(x + ei - ej)
                - offset(x - ei + ej) + offset(x - ei - ej)
            ) / (4.0 * steps[i] * steps[j])
            hessians[:, i, j] = value
            hessians[:, j, i] = value
    return hessians


def chi_square_quantile(p: float, dof: int) -> float:
    """
    Quantile of the chi-square distribution, by bisection on the
    regularized lower incomplete gamma function.
    """
    if not 0.0 < p < 1.0:
        raise InvalidValue(f"Probability must be in (0, 1), got {p}")
    if dof < 1:
        raise InvalidValue(f"Degrees of freedom must be positive, got {dof}")
    half = 0.5 * dof

    def excess(x: float) -> float:
        return special.gammainc(half, 0.5 * x) - p

    upper = max(1.0, 2.0 * dof)
    while excess(upper) < 0.0:
        upper *= 2.0
    return float(optimize.bisect(excess, 0.0, upper, xtol=Config.CHI2_XTOL, maxiter=500))


def confidence_ellipse(
    g: Gaussian,
    p: float = Config.DEFAULT_CONFIDENCE,
    indices: Tuple[int, int] = (0, 1),
) -> Ellipse:
    """
    Confidence ellipse of a planar position block.

    Args:
        g: Moments whose `indices` components are the (x, y) position
        p: Enclosed probability
        indices: Components forming the position block

    Returns:
        Ellipse with semi-axes sqrt(k²·λ), k² the 2-DOF chi-square quantile at p

    Raises:
        NonPositiveDefinite: If the 2×2 block is not positive definite
    """
    position = g.marginal(indices)
    eigenvalues, eigenvectors = linalg.eigh(position.cov)
    if eigenvalues[0] <= 0.0:
        raise NonPositiveDefinite(f"Position block is not positive definite (eigenvalues {eigenvalues})")
    k2 = chi_square_quantile(p, 2)
    order = np.argsort(eigenvalues)[::-1]
    semi_axes = np.sqrt(k2 * eigenvalues[order])
    major = eigenvectors[:, order[0]]
    orientation = math.atan2(major[1], major[0])
    if orientation > math.pi / 2:
        orientation -= math.pi
    elif orientation <= -math.pi / 2:
        orientation += math.pi
    return Ellipse(center=position.mean, semi_axes=semi_axes, orientation=orientation, confidence=p)


def correlation(g: Gaussian, i: int, j: int) -> float:
    """
    Correlation coefficient ρᵢⱼ = σᵢⱼ / (σᵢ σⱼ).

    Raises:
        ZeroVariance: If either variance is zero
        CorrelationOutOfRange: If |ρ| exceeds 1 beyond tolerance
    """
    var_i, var_j = g.cov[i, i], g.cov[j, j]
    if var_i <= 0.0 or var_j <= 0.0:
        raise ZeroVariance(f"Component {i if var_i <= 0.0 else j} has zero variance")
    rho = g.cov[i, j] / math.sqrt(var_i * var_j)
    if abs(rho) > 1.0 + Config.CORRELATION_TOL:
        raise CorrelationOutOfRange(f"Correlation {rho} outside [-1, 1]", rho=rho)
    return float(np.clip(rho, -1.0, 1.0))


# Uncertain planar relationships

def _joint_cov(a: Gaussian, b: Gaussian, cross: Optional[np.ndarray]) -> np.ndarray:
    cross = np.zeros((a.dim, b.dim)) if cross is None else _as_matrix(cross)
    if cross.shape != (a.dim, b.dim):
        raise ShapeMismatch(f"Cross-covariance {cross.shape} does not match ({a.dim}, {b.dim})")
    return np.block([[a.cov, cross], [cross.T, b.cov]])


def compound2(a: Gaussian, b: Gaussian, cross: Optional[np.ndarray] = None) -> Gaussian:
    """First-order estimate of a ⊕ b, with C(a, b) when the two are correlated."""
    pa, pb = Pose2.from_array(a.mean), Pose2.from_array(b.mean)
    result = compose2(pa, pb)
    J = jac_compose2(pa, pb, result)
    return Gaussian(result.as_array(), symmetrize(J @ _joint_cov(a, b, cross) @ J.T))


def reverse2(a: Gaussian) -> Gaussian:
    """First-order estimate of ⊖a."""
    pa = Pose2.from_array(a.mean)
    result = inverse2(pa)
    J = jac_inverse2(pa, result)
    return Gaussian(result.as_array(), symmetrize(J @ a.cov @ J.T))


def tail_to_tail_gaussian2(a: Gaussian, b: Gaussian, cross: Optional[np.ndarray] = None) -> Gaussian:
    """
    ⊖a ⊕ b evaluated recursively: reverse a, carry the cross-covariance
    through J⊖, then compound.
    """
    pa = Pose2.from_array(a.mean)
    j_minus = jac_inverse2(pa, inverse2(pa))
    cross = np.zeros((3, 3)) if cross is None else _as_matrix(cross)
    return compound2(reverse2(a), b, cross=j_minus @ cross)


# Monte Carlo oracle

def _chunk_moments(
    f_batch: Callable,
    g: Gaussian,
    count: int,
    seed: int,
    chunk: int,
    reference: np.ndarray,
    angle_outputs: Sequence[int],
):
    samples = sample_gaussian(stream_generator(seed, chunk), g, count)
    values = np.atleast_2d(np.asarray(f_batch(samples), dtype=float))
    if values.shape[0] != count:
        values = values.reshape(count, -1)
    offsets = _wrap_components(values - reference, angle_outputs)
    mean = offsets.mean(axis=0)
    centered = offsets - mean
    return count, mean, centered.T @ centered


def monte_carlo_moments(
    f_batch: Callable,
    g: Gaussian,
    n: int,
    seed: int,
    angle_outputs: Sequence[int] = (),
    reference=None,
    max_workers: Optional[int] = None,
) -> Gaussian:
    """
    Sample moments of f(x), x ~ g.

    Samples are drawn in chunks of Config.MC_CHUNK_SIZE, chunk c from the
    (seed, c) stream, evaluated on a thread pool and merged in chunk order,
    so results do not depend on the number of workers. Angle outputs are
    averaged as wrapped offsets from `reference` (default f at the mean).

    Args:
        f_batch: Function mapping an (n, dim) sample array to (n, m) outputs
        g: Input distribution
        n: Number of samples
        seed: Stream seed
        angle_outputs: Output components that are angles
        reference: Output around which angle offsets are taken
        max_workers: Thread cap (default Config.MAX_THREADS)

    Returns:
        Gaussian with the sample mean and the unbiased sample covariance
    """
    if n < 2:
        raise InvalidValue(f"Need at least 2 samples, got {n}")
    if reference is None:
        reference = np.atleast_2d(np.asarray(f_batch(g.mean[np.newaxis, :]), dtype=float))[0]
    reference = np.asarray(reference, dtype=float)

    chunk_size = Config.MC_CHUNK_SIZE
    sizes = [min(chunk_size, n - start) for start in range(0, n, chunk_size)]
    workers = max(1, min(max_workers or Config.MAX_THREADS, len(sizes)))
    logger.debug(f"Monte Carlo: {n} samples in {len(sizes)} chunks on {workers} threads")

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(
            lambda item: _chunk_moments(f_batch, g, item[1], seed, item[0], reference, angle_outputs),
            enumerate(sizes),
        ))

    total, mean, m2 = 0, None, None
    for count, chunk_mean, chunk_m2 in results:
        if mean is None:
            total, mean, m2 = count, chunk_mean, chunk_m2
            continue
        delta = chunk_mean - mean
        combined = total + count
        mean = mean + delta * (count / combined)
        m2 = m2 + chunk_m2 + np.outer(delta, delta) * (total * count / combined)
        total = combined

    out_mean = _wrap_components(reference + mean, angle_outputs)
    return Gaussian(out_mean, symmetrize(m2 / (total - 1)))
