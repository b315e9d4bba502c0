"""Differentiable multiplane-image rendering with a learned rank-N
view-dependent color model."""

from .backend import active_backend, available_backends
from .camera import CameraPose, identity_pose, orbit_pose, viewing_direction
from .fitting import (FitConfig, DivergenceError, fit_vdr, heldout_set,
                      svd_rank_oracle)
from .losses import (SsimConfig, gan_loss_with_r1, softplus_neg, ssim,
                     view_consistency_loss)
from .mpi import (AlphaWeights, Mpi, composite, compositing_weights, load_mpi,
                  plane_depths, plane_homography, render_mpi, save_mpi,
                  warp_image)
from .nn import Adam, MlpSpec, finite_diff_check, init_mlp_params, mlp_forward
from .sampling import SampleBatch, candidate_mask, sample_pixels
from .synthetic import SceneSpec, build_synthetic_mpi, synthetic_radiance
from .viewdep import (PosEncodingConfig, ViewContext, ViewDepModel,
                      color_representation, create_model, evaluate_batch,
                      expand_view_dependent_mpi, position_coefficients,
                      positional_encode, view_coefficients)

__version__ = "0.1.0"
