"""Stochastic-gradient MCMC for hidden Markov models on long sequences."""
from .adaptivity import (
    BufferPolicy,
    GapPolicy,
    LyapunovEstimate,
    buffer_length,
    estimate_lyapunov,
    mixing_time,
    sample_minibatch,
)
from .datasets import make_dataset, true_params
from .emissions import GaussianEmission, LogNormalEmission, grad_log_density, log_density, natural_metric
from .evaluation import (
    iid_baseline_fit,
    k_step_predictive,
    model_selection_score,
    predictive_report,
    transition_error,
)
from .exceptions import CapacityError, NumericalError, SGHMMError, ValidationError
from .gradients import (
    Minibatch,
    SubsequenceWindow,
    emission_gradient_term,
    full_gradient,
    stochastic_gradient,
    transition_gradient_term,
)
from .hmm import (
    HmmParams,
    MessagePair,
    ObservationSequence,
    backward_likelihood,
    forward_predictive,
    log_marginal_likelihood,
    simulate,
)
from .priors import Prior, default_prior, flat_prior
from .samplers import (
    SamplerConfig,
    SamplerState,
    Trace,
    normalize_transition,
    run_batch_rld,
    run_sg_mcmc,
    sgld_step_gaussian,
    sgld_step_lognormal,
    sgld_step_transition,
)

__all__ = [name for name in dir() if not name.startswith("_")]
