"""Adversarial observation attacks on stochastic Gaussian control policies.

The package splits into a policy core (pure-numpy Gaussian MLP with
manual reverse mode), closed-form divergences with gradients, an
L-inf attack family built on those, toy navigation tasks, a clipped
surrogate policy-gradient trainer and an experiment harness with a CLI.
"""

from .attacks import (DAPGD, DI2FGSM, EOTPGD, ESTIMATORS, FGSM, MIFGSM,
                      NIFGSM, PGD, TPGD, AttackConfig, AttackError,
                      AttackKind, attack_batch, run_attack)
from .divergence import (DivergenceKind, DivGrad, bhattacharyya, js_mc, kl,
                         kl_wrt_second, quadrature_oracle, w2)
from .envs import ACTION_DIM, EnvConfig, Task, obs_dim, observe, reset, step
from .harness import (DEFAULT_METHODS, FULL_PROTOCOL_EPISODES,
                      ExperimentManifest, MethodSpec, ResultRow, ResultTable,
                      episode_rewards, evaluate, load_manifest, read_csv,
                      report, run_ablation, run_gradcheck, run_matrix,
                      write_csv, write_markdown)
from .policy import (DiagGaussian, PolicyNet, forward, forward_batch,
                     load_weights, save_weights)
from .seeding import derive_seed, rng_from, split_rngs
from .training import PolicyGradientTrainer, adversarial_train, train

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # attacks
    "AttackConfig", "AttackError", "AttackKind", "attack_batch", "run_attack",
    "FGSM", "PGD", "TPGD", "EOTPGD", "MIFGSM", "NIFGSM", "DI2FGSM", "DAPGD",
    "ESTIMATORS",
    # divergences
    "DivergenceKind", "DivGrad", "bhattacharyya", "kl", "kl_wrt_second",
    "js_mc", "w2", "quadrature_oracle",
    # environments
    "Task", "EnvConfig", "ACTION_DIM", "obs_dim", "reset", "observe", "step",
    # harness
    "ExperimentManifest", "MethodSpec", "DEFAULT_METHODS",
    "FULL_PROTOCOL_EPISODES", "ResultRow", "ResultTable", "episode_rewards",
    "evaluate", "run_matrix", "run_ablation", "run_gradcheck", "load_manifest",
    "read_csv", "report", "write_csv", "write_markdown",
    # policy core
    "DiagGaussian", "PolicyNet", "forward", "forward_batch", "save_weights",
    "load_weights",
    # seeding
    "derive_seed", "rng_from", "split_rngs",
    # training
    "PolicyGradientTrainer", "train", "adversarial_train",
]
