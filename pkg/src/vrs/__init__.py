"""Variational rejection sampling for discrete latent-variable models."""

from .errors import (BudgetExhausted, ConfigError, DomainError, FormatError, NumericError,
                     OracleError, ShapeError, VRSError)
from .grad import (GradEstimate, SignalPair, leave_one_out_cov, lemma1_grads, relbo_grad_estimate,
                   relbo_grad_exact, signal_pair)
from .models import (BernoulliLayer, CategoricalProposal, GridTarget, PoissonProposal,
                     SigmoidBeliefNet, TruncatedPoissonTarget, grad_phi_log_q, grad_theta_log_joint,
                     log_joint, log_q, proposal_sample)
from .oracle import (EnumerableSpace, exact_elbo, exact_kl_Q_P, exact_kl_R_P, exact_log_evidence,
                     exact_relbo, exact_ZR, fd_grad)
from .params import ParamVector
from .resampler import (ResampledProposal, SampleBatch, estimate_log_ZR, log_accept_prob,
                        log_ratio_l, log_unnorm_density, sample_resampled)
from .threshold import ThresholdTable, estimate_threshold, refresh_table
from .trainer import TrainConfig, TrainMetrics, eval_is_bound, eval_rs_bound, train

__version__ = "0.1.0"
