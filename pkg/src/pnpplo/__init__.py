"""Plug-and-play image restoration as a split convex feasibility problem.

The solver looks for ``x`` in the fixed-point set of a denoiser ``T`` whose
image ``Ax`` lies in a convex set ``Q`` built from the measurements.
"""

from .checks import (
    InfeasibleError,
    check_fejer,
    check_rate_bounds,
    distance_to_solution_set,
    fit_linear_rate,
    oracle_feasible_point,
)
from .denoisers import (
    DCTDenoiser,
    LinearDenoiser,
    ReflectionDenoiser,
    SoftThresholdDenoiser,
    SubspaceDenoiser,
    estimate_alpha,
    relax,
)
from .landweber import StepRule, StepStall, extrapolated_landweber_apply, fidelity, grad_fidelity, landweber_apply, mu, polyak_step, tau
from .operators import (
    CircularConvolution,
    DownsampleBlur,
    MaskedFourier,
    MatrixOperator,
    adjoint_check,
    build_conv2d_circular,
    build_dense,
    build_downsample_blur,
    build_identity,
    build_masked_fourier,
    make_mask,
    op_norm_estimate,
)
from .projections import L1Ball, L2Ball, Singleton, radius_from_noise
from .protocol import ExternalDenoiser, TransportError, external_denoiser
from .solvers import SCFPProblem, SolveConfig, SolveTrace, pnp_fbs, pnp_plo, red_pro, red_sd
from .tensor import NoiseSpec, Signal, add_noise, inner, norm2, psnr

__version__ = "0.1.0"
