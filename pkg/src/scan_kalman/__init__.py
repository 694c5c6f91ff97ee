"""Diagonal linear-Gaussian state space models with time-parallel Kalman inference."""
from .beliefs import BeliefTrajectory
from .elbo import (ElboConfig, ElboReport, GaussianDecoder, RewardHead, SmoothedDynamics, elbo,
                   expected_dyn_kl, full_objective, mahalanobis_reg, recon_term, smoothed_dynamics)
from .model import (DiagGaussian, SsmSpec, StepParams, Trajectory, ValidationError,
                    clamp_transition, random_spec, sample_trajectory, stationary_variance,
                    validate_spec)
from .parallel import (FilterElement, SmoothElement, combine_filter, combine_smooth,
                       make_filter_elements, make_smooth_elements, parallel_filter,
                       parallel_smooth)
from .scan import ScanBreakdown, ScanPlan, check_associativity, scan
from .sequential import filter, filter_step, rts_smooth, smooth

__version__ = "0.1.0"
