"""Observation-space attacks against Gaussian MLP policies.

All attacks bound the perturbation in the L-infinity norm and ascend a
loss by signed gradient steps.  The baselines (FGSM, PGD, TPGD, EOTPGD,
MI-FGSM, NI-FGSM, DI2-FGSM) use either a sampled-action MSE or a KL head;
DAPGD ascends a divergence between the policy's action distribution at
the perturbed and at the clean observation (Bhattacharyya by default,
with KL / Jensen-Shannon / squared-Wasserstein variants for ablations).

The engine is batched: a whole set of observations is attacked in
lockstep, with one private rng stream per row, and einsum-based linear
algebra keeps each row's result bitwise identical to attacking it alone.
Everything is deterministic given the seed.

Two API layers:

* functional: ``pgd(net, s, cfg)``, ``run_attack(kind, net, s, cfg)``,
  with hyperparameters in an :class:`AttackConfig`;
* sklearn-style estimators (``PGD(policy=net).fit().transform(X)``) for
  composing with the wider ecosystem.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import divergence as dv
from .divergence import DivergenceKind
from .policy import PolicyNet, forward, forward_batch, mean_input_vjp
from .seeding import derive_seed, split_rngs
from .validation import as_matrix, as_vector

__all__ = [
    "AttackKind",
    "AttackConfig",
    "AttackError",
    "project_linf",
    "SampledActionMse",
    "MeanActionMse",
    "DivergenceLoss",
    "ReverseKl",
    "fgsm",
    "pgd",
    "tpgd",
    "eotpgd",
    "mi_fgsm",
    "ni_fgsm",
    "di2_fgsm",
    "dapgd",
    "run_attack",
    "attack_batch",
    "FGSM",
    "PGD",
    "TPGD",
    "EOTPGD",
    "MIFGSM",
    "NIFGSM",
    "DI2FGSM",
    "DAPGD",
    "ESTIMATORS",
]


class AttackKind(enum.Enum):
    FGSM = "fgsm"
    PGD = "pgd"
    TPGD = "tpgd"
    EOTPGD = "eotpgd"
    MIFGSM = "mifgsm"
    NIFGSM = "nifgsm"
    DI2FGSM = "di2fgsm"
    DAPGD = "dapgd"


class AttackError(RuntimeError):
    """Raised when an attack hits non-finite values mid-run."""


@dataclass(frozen=True)
class AttackConfig:
    """Shared attack hyperparameters.

    alpha          step size per iteration
    iters          number of iterations N (0 allowed)
    epsilon        L-inf perturbation budget
    init_scale     std of the Gaussian start-point jitter (also the jitter
                   scale of DI2-FGSM's input transform)
    momentum_decay MI/NI-FGSM momentum factor
    diversity_prob probability DI2-FGSM transforms the input at an iteration
    diversity_scale_range
                   uniform range of DI2-FGSM's multiplicative rescale
    eot_samples    gradient samples averaged per EOTPGD iteration
    js_samples     noise rows K for the Jensen-Shannon estimator
    seed           attack seed (non-negative)
    clamp          optional (lo, hi) interval the output is clipped to,
                   for sensors with hard ranges; off by default
    """

    alpha: float = 2.0 / 255.0
    iters: int = 50
    epsilon: float = 0.1
    init_scale: float = 1e-3
    momentum_decay: float = 1.0
    diversity_prob: float = 0.5
    diversity_scale_range: tuple[float, float] = (0.9, 1.1)
    eot_samples: int = 10
    js_samples: int = 128
    seed: int = 0
    clamp: tuple[float, float] | None = None

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.iters < 0:
            raise ValueError(f"iters must be >= 0, got {self.iters}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.init_scale < 0:
            raise ValueError(f"init_scale must be >= 0, got {self.init_scale}")
        if not 0.0 <= self.diversity_prob <= 1.0:
            raise ValueError(
                f"diversity_prob must be in [0, 1], got {self.diversity_prob}")
        lo, hi = self.diversity_scale_range
        if not lo <= hi:
            raise ValueError(
                f"diversity_scale_range must be ordered, got {(lo, hi)}")
        if self.eot_samples < 1:
            raise ValueError(f"eot_samples must be >= 1, got {self.eot_samples}")
        if self.js_samples < 1:
            raise ValueError(f"js_samples must be >= 1, got {self.js_samples}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if self.clamp is not None:
            clo, chi = self.clamp
            if not clo < chi:
                raise ValueError(f"clamp interval must be ordered, got {self.clamp}")


def project_linf(s: np.ndarray, s_adv: np.ndarray, epsilon: float) -> np.ndarray:
    """Project s_adv onto the L-inf ball of radius epsilon around s."""
    return s + np.clip(s_adv - s, -epsilon, epsilon)


# ---------------------------------------------------------------------------
# loss heads (single-observation protocol: dist -> (value, d_mean))


class SampledActionMse:
    """||a(s*) - a_ref||^2 with a(s*) = mean + std * noise, a_ref held fixed.

    The reference action is a constant: gradient flows only through the
    attacked state's mean.
    """

    name = "sampled_action_mse"

    def __init__(self, reference_action, noise):
        self.reference_action = np.asarray(reference_action, dtype=np.float64)
        self.noise = np.asarray(noise, dtype=np.float64)

    def __call__(self, dist):
        a = dist.mean + dist.std * self.noise
        diff = a - self.reference_action
        return float(diff @ diff), 2.0 * diff


class MeanActionMse:
    """||mean(s*) - a_ref||^2; deterministic variant of SampledActionMse."""

    name = "mean_action_mse"

    def __init__(self, reference_action):
        self.reference_action = np.asarray(reference_action, dtype=np.float64)

    def __call__(self, dist):
        diff = dist.mean - self.reference_action
        return float(diff @ diff), 2.0 * diff


class DivergenceLoss:
    """div(dist, clean) for a fixed clean distribution, gradient wrt dist."""

    def __init__(self, kind: DivergenceKind, clean, base_noise=None):
        self.kind = DivergenceKind(kind)
        self.clean = clean
        self.base_noise = base_noise
        if self.kind is DivergenceKind.JS and base_noise is None:
            raise ValueError("JS loss needs a base_noise matrix")
        self.name = f"divergence_{self.kind.value}"

    def __call__(self, dist):
        if self.kind is DivergenceKind.BD:
            out = dv.bhattacharyya(dist, self.clean)
        elif self.kind is DivergenceKind.KL:
            out = dv.kl(dist, self.clean)
        elif self.kind is DivergenceKind.W2:
            out = dv.w2(dist, self.clean)
        else:
            out = dv.js_mc(dist, self.clean, self.base_noise)
        return out.value, out.d_mean


class ReverseKl:
    """KL(clean || dist), differentiated with respect to dist."""

    name = "reverse_kl"

    def __init__(self, clean):
        self.clean = clean

    def __call__(self, dist):
        out = dv.kl_wrt_second(self.clean, dist)
        return out.value, out.d_mean


# ---------------------------------------------------------------------------
# batched engine

_MSE_FAMILY = frozenset({
    AttackKind.PGD, AttackKind.EOTPGD, AttackKind.MIFGSM,
    AttackKind.NIFGSM, AttackKind.DI2FGSM,
})

_MOMENTUM_KINDS = frozenset({AttackKind.MIFGSM, AttackKind.NIFGSM})


def _apply_clamp(x, cfg):
    if cfg.clamp is None:
        return x
    return np.clip(x, cfg.clamp[0], cfg.clamp[1])


def _div_step(kind, divergence, M, M0, stdB, Z):
    if kind is AttackKind.TPGD:
        return dv.kl_second_kernel(M0, stdB, M, stdB)[:2]
    if divergence is DivergenceKind.BD:
        return dv.bd_kernel(M, stdB, M0, stdB)[:2]
    if divergence is DivergenceKind.KL:
        return dv.kl_kernel(M, stdB, M0, stdB)[:2]
    if divergence is DivergenceKind.W2:
        return dv.w2_kernel(M, stdB, M0, stdB)[:2]
    return dv.js_kernel(M, stdB, M0, stdB, Z)[:2]


def attack_batch(kind, net: PolicyNet, S, seeds, cfg: AttackConfig,
                 loss_override=None, stats=None) -> np.ndarray:
    """Attack a batch of observations in lockstep, one rng stream per row.

    ``seeds`` gives each row its own seed; row results are bitwise
    independent of the batch composition, so a single row can be replayed
    alone.  ``loss_override`` is only meaningful for DAPGD.
    """
    kind = AttackKind(kind)
    if loss_override is not None and kind is not AttackKind.DAPGD:
        raise ValueError(
            f"loss_override is only valid for DAPGD, not {kind.name}")
    divergence = DivergenceKind(loss_override) if loss_override is not None \
        else DivergenceKind.BD

    S = as_matrix(S, "observations", cols=net.obs_dim)
    B, d = S.shape
    # no numpy coercion here: 64-bit seeds above 2**63 - 1 would silently
    # round through float64
    if isinstance(seeds, (int, np.integer)):
        seeds = [int(seeds)]
    else:
        seeds = [int(s) for s in seeds]
    if len(seeds) != B:
        raise ValueError(f"need {B} seeds, got {len(seeds)}")
    act = net.act_dim
    stdB = np.broadcast_to(net.std, (B, act))
    rngs = [split_rngs(s, 2) for s in seeds]

    M0, trace0 = forward_batch(net, S)

    if kind is AttackKind.FGSM:
        # single epsilon-sized step; both actions drawn at the clean state,
        # the first as a fixed reference
        z_ref = np.stack([r[0].standard_normal(act) for r in rngs])
        z_att = np.stack([r[0].standard_normal(act) for r in rngs])
        a_ref = M0 + stdB * z_ref
        d_mean = 2.0 * (M0 + stdB * z_att - a_ref)
        g = mean_input_vjp(net, trace0, d_mean)
        if not np.all(np.isfinite(g)):
            raise AttackError("non-finite gradient in FGSM")
        return _apply_clamp(S + cfg.epsilon * np.sign(g), cfg)

    if cfg.iters == 0 and cfg.init_scale == 0.0:
        return S.copy()

    init = np.stack([r[0].standard_normal(d) for r in rngs])
    s_adv = project_linf(S, S + cfg.init_scale * init, cfg.epsilon)
    s_adv = _apply_clamp(s_adv, cfg)

    a_ref = iter_noise = Z = None
    if kind in _MSE_FAMILY:
        z_ref = np.stack([r[0].standard_normal(act) for r in rngs])
        a_ref = M0 + stdB * z_ref
        if cfg.iters > 0:
            shape = (cfg.iters, cfg.eot_samples, act) if kind is AttackKind.EOTPGD \
                else (cfg.iters, act)
            iter_noise = np.stack([r[0].standard_normal(shape) for r in rngs])
    elif kind is AttackKind.DAPGD and divergence is DivergenceKind.JS:
        Z = np.stack([r[0].standard_normal((cfg.js_samples, act)) for r in rngs])

    lo_scale, hi_scale = cfg.diversity_scale_range
    momentum = np.zeros_like(S)
    for k in range(cfg.iters):
        point = s_adv
        if kind is AttackKind.NIFGSM:
            # gradient at the momentum look-ahead
            point = s_adv + cfg.alpha * cfg.momentum_decay * momentum
        elif kind is AttackKind.DI2FGSM:
            point = s_adv.copy()
            for i, (_, aux) in enumerate(rngs):
                if aux.uniform() < cfg.diversity_prob:
                    u = aux.uniform(lo_scale, hi_scale)
                    point[i] = u * s_adv[i] + cfg.init_scale * aux.standard_normal(d)
                    if stats is not None:
                        stats["diversity_applied"] = stats.get("diversity_applied", 0) + 1

        M, trace = forward_batch(net, point)
        if kind in _MSE_FAMILY:
            if kind is AttackKind.EOTPGD:
                z_eff = iter_noise[:, k].mean(axis=1)
            else:
                z_eff = iter_noise[:, k]
            d_mean = 2.0 * (M + stdB * z_eff - a_ref)
            finite = np.all(np.isfinite(d_mean))
        else:
            vals, d_mean = _div_step(kind, divergence, M, M0, stdB, Z)
            finite = np.all(np.isfinite(vals)) and np.all(np.isfinite(d_mean))
        g = mean_input_vjp(net, trace, d_mean)
        if not (finite and np.all(np.isfinite(g))):
            raise AttackError(
                f"non-finite loss or gradient at iteration {k} of {kind.name}")

        if kind in _MOMENTUM_KINDS:
            l1 = np.sum(np.abs(g), axis=1, keepdims=True)
            momentum = cfg.momentum_decay * momentum + g / np.where(l1 > 0, l1, 1.0)
            direction = momentum
        else:
            direction = g
        s_adv = project_linf(S, s_adv + cfg.alpha * np.sign(direction), cfg.epsilon)
        s_adv = _apply_clamp(s_adv, cfg)
    return s_adv


def _single(kind, net, s, cfg, loss_override=None):
    s = as_vector(s, "observation", size=net.obs_dim)
    return attack_batch(kind, net, s[None], [cfg.seed], cfg,
                        loss_override=loss_override)[0]


def fgsm(net, s, cfg: AttackConfig) -> np.ndarray:
    """Fast gradient sign method: one epsilon step on a sampled-action MSE."""
    return _single(AttackKind.FGSM, net, s, cfg)


def pgd(net, s, cfg: AttackConfig) -> np.ndarray:
    """Iterated signed ascent on the sampled-action MSE."""
    return _single(AttackKind.PGD, net, s, cfg)


def tpgd(net, s, cfg: AttackConfig) -> np.ndarray:
    """PGD on KL(clean || perturbed), gradients through the second argument."""
    return _single(AttackKind.TPGD, net, s, cfg)


def eotpgd(net, s, cfg: AttackConfig) -> np.ndarray:
    """PGD averaging raw gradients over fresh action noise each iteration."""
    return _single(AttackKind.EOTPGD, net, s, cfg)


def mi_fgsm(net, s, cfg: AttackConfig) -> np.ndarray:
    """PGD with L1-normalised gradient momentum."""
    return _single(AttackKind.MIFGSM, net, s, cfg)


def ni_fgsm(net, s, cfg: AttackConfig) -> np.ndarray:
    """Momentum attack with the gradient taken at a Nesterov look-ahead."""
    return _single(AttackKind.NIFGSM, net, s, cfg)


def di2_fgsm(net, s, cfg: AttackConfig) -> np.ndarray:
    """PGD whose gradient point is randomly rescaled and jittered."""
    return _single(AttackKind.DI2FGSM, net, s, cfg)


def dapgd(net, s, cfg: AttackConfig,
          divergence: DivergenceKind = DivergenceKind.BD) -> np.ndarray:
    """PGD ascending a distributional divergence between the policy's
    action distributions at the perturbed and the clean observation."""
    return _single(AttackKind.DAPGD, net, s, cfg, loss_override=divergence)


def run_attack(kind, net, s, cfg: AttackConfig, loss_override=None) -> np.ndarray:
    """Dispatch by kind.  loss_override picks DAPGD's divergence and is
    rejected for every other kind."""
    return _single(AttackKind(kind), net, s, cfg, loss_override=loss_override)


# ---------------------------------------------------------------------------
# sklearn-style estimators

_CFG_DEFAULTS = AttackConfig()


class BaseAttack(BaseEstimator, TransformerMixin):
    """Common estimator machinery; subclasses declare `kind` and params."""

    kind: AttackKind

    def _config(self) -> AttackConfig:
        fields = ["alpha", "iters", "epsilon", "init_scale", "momentum_decay",
                  "diversity_prob", "diversity_scale_range", "eot_samples",
                  "js_samples", "seed", "clamp"]
        kw = {f: getattr(self, f, getattr(_CFG_DEFAULTS, f)) for f in fields}
        return AttackConfig(**kw)

    def _loss_override(self):
        return None

    def fit(self, X=None, y=None):
        """Validate configuration; attacks keep no fitted state beyond it."""
        if self.policy is None or not isinstance(self.policy, PolicyNet):
            raise ValueError(f"{type(self).__name__} needs a PolicyNet via `policy`")
        self._config()
        if X is not None:
            as_matrix(X, "X", cols=self.policy.obs_dim)
        self.n_features_in_ = self.policy.obs_dim
        return self

    def transform(self, X) -> np.ndarray:
        """Perturb each row; row i uses the stream derived from (seed, i)."""
        if not hasattr(self, "n_features_in_"):
            raise NotFittedError(
                f"{type(self).__name__} must be fitted before transform")
        X = as_matrix(X, "X", cols=self.n_features_in_)
        cfg = self._config()
        seeds = [derive_seed(cfg.seed, i) for i in range(X.shape[0])]
        return attack_batch(self.kind, self.policy, X, seeds, cfg,
                            loss_override=self._loss_override())

    def perturb(self, obs, seed=None) -> np.ndarray:
        """Single-observation attack, bypassing the per-row seed derivation."""
        cfg = self._config()
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        return run_attack(self.kind, self.policy, obs, cfg,
                          loss_override=self._loss_override())


class FGSM(BaseAttack):
    kind = AttackKind.FGSM

    def __init__(self, policy=None, epsilon=0.1, seed=0, clamp=None):
        self.policy = policy
        self.epsilon = epsilon
        self.seed = seed
        self.clamp = clamp


class PGD(BaseAttack):
    kind = AttackKind.PGD

    def __init__(self, policy=None, alpha=2.0 / 255.0, iters=50, epsilon=0.1,
                 init_scale=1e-3, seed=0, clamp=None):
        self.policy = policy
        self.alpha = alpha
        self.iters = iters
        self.epsilon = epsilon
        self.init_scale = init_scale
        self.seed = seed
        self.clamp = clamp


class TPGD(PGD):
    kind = AttackKind.TPGD


class EOTPGD(BaseAttack):
    kind = AttackKind.EOTPGD

    def __init__(self, policy=None, alpha=2.0 / 255.0, iters=50, epsilon=0.1,
                 init_scale=1e-3, eot_samples=10, seed=0, clamp=None):
        self.policy = policy
        self.alpha = alpha
        self.iters = iters
        self.epsilon = epsilon
        self.init_scale = init_scale
        self.eot_samples = eot_samples
        self.seed = seed
        self.clamp = clamp


class MIFGSM(BaseAttack):
    kind = AttackKind.MIFGSM

    def __init__(self, policy=None, alpha=2.0 / 255.0, iters=50, epsilon=0.1,
                 init_scale=1e-3, momentum_decay=1.0, seed=0, clamp=None):
        self.policy = policy
        self.alpha = alpha
        self.iters = iters
        self.epsilon = epsilon
        self.init_scale = init_scale
        self.momentum_decay = momentum_decay
        self.seed = seed
        self.clamp = clamp


class NIFGSM(MIFGSM):
    kind = AttackKind.NIFGSM


class DI2FGSM(BaseAttack):
    kind = AttackKind.DI2FGSM

    def __init__(self, policy=None, alpha=2.0 / 255.0, iters=50, epsilon=0.1,
                 init_scale=1e-3, diversity_prob=0.5,
                 diversity_scale_range=(0.9, 1.1), seed=0, clamp=None):
        self.policy = policy
        self.alpha = alpha
        self.iters = iters
        self.epsilon = epsilon
        self.init_scale = init_scale
        self.diversity_prob = diversity_prob
        self.diversity_scale_range = diversity_scale_range
        self.seed = seed
        self.clamp = clamp


class DAPGD(BaseAttack):
    kind = AttackKind.DAPGD

    def __init__(self, policy=None, alpha=2.0 / 255.0, iters=50, epsilon=0.1,
                 init_scale=1e-3, loss="bd", js_samples=128, seed=0, clamp=None):
        self.policy = policy
        self.alpha = alpha
        self.iters = iters
        self.epsilon = epsilon
        self.init_scale = init_scale
        self.loss = loss
        self.js_samples = js_samples
        self.seed = seed
        self.clamp = clamp

    def _loss_override(self):
        return DivergenceKind(self.loss)


ESTIMATORS = {
    AttackKind.FGSM: FGSM,
    AttackKind.PGD: PGD,
    AttackKind.TPGD: TPGD,
    AttackKind.EOTPGD: EOTPGD,
    AttackKind.MIFGSM: MIFGSM,
    AttackKind.NIFGSM: NIFGSM,
    AttackKind.DI2FGSM: DI2FGSM,
    AttackKind.DAPGD: DAPGD,
}
