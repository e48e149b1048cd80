"""Binary-weight neural networks trained by Bayesian natural-parameter descent.

The package trains bias-free MLPs whose weights are constrained to {-1, +1}.
The main optimizer keeps a mean-field Bernoulli posterior over the weights in
natural-parameter form and updates it with reparametrized minibatch gradients
(`optimizers.bayesbinn_step`); straight-through Adam and Bop sign-flipping
baselines share the same training loop. `estimators` exposes scikit-learn
style wrappers, `cli` the command-line front end.
"""

from .bernoulli import (
    chain_factor,
    concrete_pdf,
    entropy_bits,
    lambda_from_p,
    mu_from_lambda,
    p_from_lambda,
    relax,
    sample_binary,
    sample_gumbel_noise,
    scale_factor,
)
from .estimators import BinaryMLPClassifier, BinaryMLPRegressor
from .linalg import Rng
from .network import NetworkSpec, backward, cross_entropy, forward, mse
from .optimizers import (
    AdamState,
    BayesBiNNState,
    BopState,
    SteAdamState,
    adam_step,
    bayesbinn_step,
    bop_step,
    lr_at,
    ste_adam_step,
)
from .predictor import predict_mean, predict_mean_outputs, predict_mode

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BayesBiNNState",
    "BinaryMLPClassifier",
    "BinaryMLPRegressor",
    "BopState",
    "NetworkSpec",
    "Rng",
    "SteAdamState",
    "adam_step",
    "backward",
    "bayesbinn_step",
    "bop_step",
    "chain_factor",
    "concrete_pdf",
    "cross_entropy",
    "entropy_bits",
    "forward",
    "lambda_from_p",
    "lr_at",
    "mse",
    "mu_from_lambda",
    "p_from_lambda",
    "predict_mean",
    "predict_mean_outputs",
    "predict_mode",
    "relax",
    "sample_binary",
    "sample_gumbel_noise",
    "scale_factor",
    "ste_adam_step",
]
