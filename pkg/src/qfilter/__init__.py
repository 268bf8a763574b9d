"""Parameter estimation from continuous quantum measurement records."""
from ._backend import backend, get_backend, set_backend
from .density import DensityGrid, weighted_kde
from .ensemble import EnsembleState, ensemble_step, estimates, n_eff, posterior
from .experiments import ConfigError, ExperimentConfig, run
from .observability import ObservabilityReport, Verdict, corollary_check, observable_space, qubit_report
from .operators import IDENTITY, SIGMA_X, SIGMA_Y, SIGMA_Z, OperatorBasis, gram_schmidt
from .particles import ParticleSet, ResampleConfig, UniformPrior, init_particles, liu_west_resample
from .qubit import QubitEnsemble, angle_filter_step, joint_resample, qubit_ensemble_step
from .sme import IntegrationError, MeasurementRecord, SdeConfig, simulate_truth, sme_step

__version__ = "0.1.0"
