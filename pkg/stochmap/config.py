"""
Configuration for the stochastic map library
"""

import os

# Environment overrides may live in a local .env file
from dotenv import load_dotenv
load_dotenv()


class Config:
    """
    System-wide configuration for stochmap.

    This class contains all configuration parameters including:
    - Singularity thresholds for 6-DOF orientation parameterizations
    - Finite-difference step rules for derivative oracles
    - Covariance hygiene tolerances
    - Filter iteration limits and confidence levels
    - Monte Carlo validation defaults and parallelism caps

    Configuration values are loaded from environment variables with fallback defaults.
    """

    LOG_LEVEL = os.getenv("STOCHMAP_LOG_LEVEL", "WARNING")
    """str: Logging level used by the command-line entry point"""

    MAX_THREADS = max(1, int(os.getenv("STOCHMAP_THREADS", str(os.cpu_count() or 1))))
    """int: Maximum number of worker threads used by Monte Carlo validation"""

    # Orientation singularities
    SINGULARITY_REJECT_MARGIN = 1e-6
    """float: Jacobian evaluation is refused when the singularity margin falls below this value"""

    SINGULARITY_WARN_MARGIN = 0.05
    """float: A warning is logged when the singularity margin falls below this value"""

    DEGENERATE_EXTRACTION = 1e-12
    """float: Below this magnitude the angle extraction treats the orientation as degenerate"""

    # Derivative oracles
    FD_RELATIVE_STEP = 1e-6
    """float: Relative central-difference step for Jacobians"""

    FD_MIN_STEP = 1e-6
    """float: Smallest central-difference step for Jacobians"""

    HESSIAN_RELATIVE_STEP = 1e-4
    """float: Relative central second-difference step for Hessians"""

    HESSIAN_MIN_STEP = 1e-4
    """float: Smallest central second-difference step for Hessians"""

    # Covariance hygiene
    SYMMETRY_TOL = 1e-10
    """float: Maximum asymmetry tolerated in a supplied covariance"""

    PSD_RELATIVE_TOL = 1e-10
    """float: Eigenvalues down to -PSD_RELATIVE_TOL * trace are accepted as zero"""

    PSD_ABSOLUTE_TOL = 1e-14
    """float: Absolute slack added to the PSD test for covariances with tiny traces"""

    CORRELATION_TOL = 1e-10
    """float: Correlations beyond 1 + CORRELATION_TOL signal a corrupted covariance"""

    CHI2_XTOL = 1e-12
    """float: Bisection tolerance of the chi-square quantile"""

    # Filtering
    DEFAULT_CONFIDENCE = 0.999
    """float: Probability mass enclosed by emitted confidence ellipses"""

    GATE_PROBABILITY = 0.999
    """float: Default chi-square gate probability for data association"""

    EXACT_CONSTRAINT_EPS = float(os.getenv("STOCHMAP_CONSTRAINT_EPS", "1e-10"))
    """float: Noise floor replacing a singular sensor noise covariance (exact constraints)"""

    IEKF_TOLERANCE = 1e-10
    """float: State-change norm below which the iterated update stops"""

    IEKF_MAX_ITERATIONS = 20
    """int: Maximum number of relinearized updates in the iterated filter"""

    # Monte Carlo validation
    MC_CHUNK_SIZE = 65536
    """int: Samples drawn per independently keyed Monte Carlo chunk"""

    MC_MIN_SAMPLES = 10_000
    """int: Smallest sample count accepted by monte_carlo_validate"""

    VALIDATION_DEFAULTS = {
        "sigma_deg": 5.0,
        "translation_sigma": 0.1,
        "samples": 1_000_000,
        "seed": 0,
        "bound": 0.01,
        # head-to-tail pair, each link [x, y, phi_deg]
        "chain": [[2.0, 1.0, 30.0], [1.0, 0.5, 20.0]],
    }
    """dict: Defaults of the validation harness (single compounding of two uncertain links)"""

    # Map modes
    MODES = {
        "2d": {
            "pose_kind": "pose2",
            "convention": None,
            "description": "Planar map of 3-DOF poses (x, y, phi) and 2-DOF points",
        },
        "3d-euler": {
            "pose_kind": "pose3",
            "convention": "euler",
            "description": "Spatial map of 6-DOF poses with z-y'-z'' Euler angles",
        },
        "3d-rpy": {
            "pose_kind": "pose3",
            "convention": "rpy",
            "description": "Spatial map of 6-DOF poses with z-y'-x'' roll, pitch and yaw",
        },
    }
    """dict: Map mode configurations"""
