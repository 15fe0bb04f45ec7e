"""Plug-and-play Poisson image restoration with certified denoisers.

The package splits into thin layers:

* :mod:`cocopnp.imaging`: forward models, Poisson observation synthesis, PSNR.
* :mod:`cocopnp.fileio`: PNG and raw float image formats, kernel loading.
* :mod:`cocopnp.denoisers`: denoisers with exact Jacobian products.
* :mod:`cocopnp.spectral`: matrix-free certification of cocoercivity and
  conservativeness.
* :mod:`cocopnp.theory`: moduli of implicit prox potentials and step bounds.
* :mod:`cocopnp.fidelity`: Poisson data term and its proximal maps.
* :mod:`cocopnp.solvers`: splitting and envelope-gradient restoration loops.
* :mod:`cocopnp.training`: penalty-regularized denoiser training.
* :mod:`cocopnp.cli`: command-line harness tying the layers together.
"""

from .denoisers import (
    AveragedDenoiser,
    DctSoftThresholdDenoiser,
    Denoiser,
    LinearDenoiser,
    SmallNetDenoiser,
    averaged_apply,
    load_denoiser,
    sample_cocoercivity_defect,
    save_denoiser,
    small_net_denoiser,
    symmetric_linear_denoiser,
)
from .errors import NumericalError, ValidationError
from .fidelity import (
    InnerAdmmConfig,
    PoissonFidelity,
    fidelity_value,
    moreau_grad,
    moreau_value,
    prox_general,
    prox_identity,
)
from .imaging import (
    CircularConvolution,
    Decimation,
    IdentityOperator,
    LinearOperator,
    NoiseSpec,
    psnr,
    simulate_poisson,
)
from .solvers import SolverConfig, SolverResult, SolverTrace, coco_admm, coco_pegd, lyapunov_value
from .spectral import (
    MatrixFreeMap,
    SpectralReport,
    cocoercivity_norm,
    hamiltonian_defect,
    helmholtz_split,
    power_iteration,
    symmetry_error,
)
from .theory import (
    ModulusReport,
    TheoryParams,
    admm_margin,
    moduli,
    pegd_step_bound,
    solve_t0,
    verify_prox_property,
)
from .training import (
    LossBreakdown,
    TrainingConfig,
    certify_denoiser,
    loss_terms,
    train_linear,
    train_small_net,
)

__version__ = "0.1.0"

__all__ = [
    "AveragedDenoiser",
    "CircularConvolution",
    "DctSoftThresholdDenoiser",
    "Decimation",
    "Denoiser",
    "IdentityOperator",
    "InnerAdmmConfig",
    "LinearDenoiser",
    "LinearOperator",
    "LossBreakdown",
    "MatrixFreeMap",
    "ModulusReport",
    "NoiseSpec",
    "NumericalError",
    "PoissonFidelity",
    "SmallNetDenoiser",
    "SolverConfig",
    "SolverResult",
    "SolverTrace",
    "SpectralReport",
    "TheoryParams",
    "TrainingConfig",
    "ValidationError",
    "admm_margin",
    "averaged_apply",
    "certify_denoiser",
    "coco_admm",
    "coco_pegd",
    "cocoercivity_norm",
    "fidelity_value",
    "hamiltonian_defect",
    "helmholtz_split",
    "load_denoiser",
    "loss_terms",
    "lyapunov_value",
    "moduli",
    "moreau_grad",
    "moreau_value",
    "pegd_step_bound",
    "power_iteration",
    "prox_general",
    "prox_identity",
    "psnr",
    "sample_cocoercivity_defect",
    "save_denoiser",
    "simulate_poisson",
    "small_net_denoiser",
    "solve_t0",
    "symmetric_linear_denoiser",
    "symmetry_error",
    "train_linear",
    "train_small_net",
    "verify_prox_property",
]
