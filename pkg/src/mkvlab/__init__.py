"""Interacting-particle simulation and adaptive nonparametric estimation."""

from .models import (
    ConstantScalarDiffusion,
    EmpiricalFileInitialLaw,
    GaussianInitialLaw,
    GeneralLipschitzDrift,
    MeanFieldOUParams,
    PointMassInitialLaw,
    PolynomialBump,
    StateDependentDiffusion,
    TimeGrid,
    TrajectoryEnsemble,
    VlasovPairDrift,
    evaluate_drift,
    mfou_cdf,
    mfou_density_at,
    mfou_drift_at,
    mfou_drift_model,
    mfou_initial_law,
    mfou_moments,
    mfou_vlasov_model,
    quartic_bump_force,
    read_mkv1,
    write_mkv1,
)
from .simulate import SimConfig, empirical_cloud, simulate_ensemble
from .kernels import (
    Kernel1D,
    ProductKernel,
    eval_scaled,
    kernel_from_id,
    make_kernel_1d,
    product_kernel,
    spatial_kernel,
)
from .gl import BandwidthGrid, GLDiagnostics, geometric_grid_1d, geometric_grid_2d, gl_select
from .density import DensityEstimateReport, density_at, density_gl, density_variance_term
from .drift import DriftEstimateReport, drift_field, drift_gl, pi_hat_at, pi_variance_term
from .interaction import (
    DriftFieldSeries,
    FrequencyLattice,
    InteractionEstimateReport,
    LinearForm,
    SpatialGrid,
    apply_linear_form,
    bump_weight,
    centered_grid,
    conjugate_lattice,
    estimate_grad_v,
    estimate_grad_w,
    fourier_quotient,
    grid_fourier,
    grid_inverse_fourier,
    make_linear_form,
    periodogram,
)
from .diagnostics import TailEnvelope, fit_tail_envelope, rate_slope, w1_exact_1d, w1_sliced

__version__ = "0.1.0"
