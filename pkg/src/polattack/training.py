"""Policy-gradient training for the navigation tasks.

A clipped-surrogate policy gradient with generalized advantage
estimation, a separate value network sharing the policy's architecture,
and a hand-rolled Adam.  Everything reuses the policy module's einsum
kernels, so training is bitwise reproducible from the seed.

``PolicyGradientTrainer`` follows the sklearn estimator protocol:
hyperparameters go to ``__init__`` verbatim, ``fit`` produces trailing-
underscore attributes (``policy_``, ``value_``, ``history_``) and
returns the estimator.  Setting ``attack_iters > 0`` trains against an
observation attacker: the policy acts on perturbed observations while
the environment runs on the true state.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .attacks import AttackConfig, pgd
from .envs import ACTION_DIM, EnvConfig, obs_dim, observe, reset, step
from .policy import (
    HIDDEN,
    PolicyNet,
    _mm_t,
    _outer,
    forward_batch,
    mean_param_gradient,
    orthogonal,
    param_gradient,
)
from .seeding import derive_seed, rng_from
from .validation import as_vector

__all__ = [
    "ValueNet",
    "forward_value",
    "gae_advantages",
    "normalize_advantages",
    "clipped_surrogate",
    "Adam",
    "PolicyGradientTrainer",
    "train",
    "adversarial_train",
    "random_action_baseline",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class ValueNet:
    """State-value network: the policy body with a scalar head."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    wv: np.ndarray
    bv: float

    @property
    def obs_dim(self) -> int:
        return self.W1.shape[1]

    @staticmethod
    def random(obs_dim: int, rng: np.random.Generator) -> "ValueNet":
        return ValueNet(
            W1=orthogonal(HIDDEN, obs_dim, np.sqrt(2.0), rng),
            b1=np.zeros(HIDDEN),
            W2=orthogonal(HIDDEN, HIDDEN, np.sqrt(2.0), rng),
            b2=np.zeros(HIDDEN),
            wv=orthogonal(1, HIDDEN, 1.0, rng)[0],
            bv=0.0,
        )


def forward_value(vnet: ValueNet, X: np.ndarray):
    """Values (B,) and the activations needed for the backward pass."""
    z1 = np.einsum("bd,hd->bh", X, vnet.W1) + vnet.b1
    h1 = np.tanh(z1)
    z2 = np.einsum("bd,hd->bh", h1, vnet.W2) + vnet.b2
    h2 = np.tanh(z2)
    v = h2 @ vnet.wv + vnet.bv
    return v, (X, h1, h2)


def _value_gradients(vnet: ValueNet, cache, dv: np.ndarray) -> dict:
    X, h1, h2 = cache
    dh2 = dv[:, None] * vnet.wv
    dz2 = dh2 * (1.0 - h2 ** 2)
    dh1 = _mm_t(dz2, vnet.W2)
    dz1 = dh1 * (1.0 - h1 ** 2)
    return {
        "W1": _outer(dz1, X),
        "b1": dz1.sum(axis=0),
        "W2": _outer(dz2, h1),
        "b2": dz2.sum(axis=0),
        "wv": np.einsum("b,bh->h", dv, h2),
        "bv": float(dv.sum()),
    }


def gae_advantages(rewards, values, bootstrap: float,
                   gamma: float, lam: float):
    """Generalized advantage estimation over one contiguous segment.

    ``bootstrap`` is the value of the state following the last step: zero
    when the segment ended in a terminal state, the critic's estimate
    when it was cut off (horizon or rollout boundary).  Returns
    (advantages, value targets).
    """
    rewards = as_vector(rewards, "rewards")
    values = as_vector(values, "values", size=rewards.shape[0])
    T = rewards.shape[0]
    adv = np.empty(T)
    acc = 0.0
    next_value = float(bootstrap)
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
        next_value = values[t]
    return adv, adv + values


class Adam:
    """Plain Adam over a dict of arrays (scalars allowed)."""

    def __init__(self, params: dict, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(np.asarray(v, dtype=np.float64))
                  for k, v in params.items()}
        self.v = {k: np.zeros_like(np.asarray(v, dtype=np.float64))
                  for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        out = {}
        for k, p in params.items():
            g = np.asarray(grads[k], dtype=np.float64)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g ** 2
            update = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            out[k] = np.asarray(p, dtype=np.float64) - update
        return out


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Shift to zero mean and scale to unit variance (up to the epsilon guard)."""
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def clipped_surrogate(net: PolicyNet, X, A, logp_old, adv, clip_ratio):
    """Clipped importance-ratio objective and its per-sample loss cotangent.

    Returns (objective, dlogp) where dlogp feeds ``param_gradient`` to get
    the gradient of the *loss* (negative objective).  The unclipped branch
    keeps the gradient on ties, so ratio == 1 samples stay live.
    """
    means, _ = forward_batch(net, X)
    z = (A - means) / net.std
    logp = (-0.5 * (z ** 2).sum(axis=1)
            - float(np.sum(net.log_std)) - 0.5 * A.shape[1] * _LOG_2PI)
    ratio = np.exp(logp - logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * adv
    use = unclipped <= clipped
    objective = float(np.minimum(unclipped, clipped).mean())
    dlogp = -(use * ratio * adv) / X.shape[0]
    return objective, dlogp


def _policy_params(net: PolicyNet) -> dict:
    return {f.name: getattr(net, f.name) for f in dataclasses.fields(PolicyNet)}


def _value_params(vnet: ValueNet) -> dict:
    return {f.name: getattr(vnet, f.name) for f in dataclasses.fields(ValueNet)}


@dataclass
class _Segment:
    obs: list
    actions: list
    noises: list
    rewards: list
    terminal: bool = False
    final_obs: np.ndarray | None = None


def random_action_baseline(env_config: EnvConfig, episodes: int = 50,
                           seed: int = 0):
    """Mean and sample std of episode returns under uniform random actions."""
    totals = []
    for ep in range(episodes):
        state = reset(env_config, derive_seed(seed, 9, ep))
        rng = rng_from(seed, 10, ep)
        total = 0.0
        while True:
            state, tr = step(env_config, state, rng.uniform(-1.0, 1.0, ACTION_DIM))
            total += tr.reward
            if tr.done:
                break
        totals.append(total)
    totals = np.asarray(totals)
    return float(totals.mean()), float(totals.std(ddof=1))


class PolicyGradientTrainer(BaseEstimator):
    """Clipped-surrogate policy gradient.

    fit(env_config, policy=None) trains from scratch or from a warm
    start and exposes:

    policy_          trained PolicyNet
    value_           trained ValueNet
    history_         one dict per update (step, mean_episode_reward, ...)
    baseline_mean_   random-action reference return
    beats_baseline_  whether the trained mean cleared the baseline by
                     three standard errors (a health flag, not an error)
    """

    def __init__(self, gamma=0.99, gae_lambda=0.95, clip_ratio=0.2, lr=3e-4,
                 epochs=10, minibatch=128, rollout_steps=4096,
                 total_steps=200_000, value_coeff=0.5, mean_penalty=0.01,
                 seed=0, attack_iters=0, attack_epsilon=0.1,
                 attack_alpha=2.0 / 255.0, baseline_episodes=50):
        self.gamma = gamma
        self.gae_lambda = gae_lambda
        self.clip_ratio = clip_ratio
        self.lr = lr
        self.epochs = epochs
        self.minibatch = minibatch
        self.rollout_steps = rollout_steps
        self.total_steps = total_steps
        self.value_coeff = value_coeff
        self.mean_penalty = mean_penalty
        self.seed = seed
        self.attack_iters = attack_iters
        self.attack_epsilon = attack_epsilon
        self.attack_alpha = attack_alpha
        self.baseline_episodes = baseline_episodes

    # -- rollout ----------------------------------------------------------

    def _perturb(self, net, obs, global_step):
        cfg = AttackConfig(alpha=self.attack_alpha, iters=self.attack_iters,
                           epsilon=self.attack_epsilon,
                           seed=derive_seed(self.seed, 5, global_step))
        return pgd(net, obs, cfg)

    def _collect(self, net, env_config, action_rng, counters):
        segments = []
        completed = []
        std = net.std
        log_std_sum = float(np.sum(net.log_std))
        state = None
        seg = None
        episode_total = 0.0
        n = 0
        while n < self.rollout_steps:
            if state is None:
                state = reset(env_config, derive_seed(self.seed, 4, counters["episode"]))
                counters["episode"] += 1
                seg = _Segment(obs=[], actions=[], noises=[], rewards=[])
                episode_total = 0.0
            raw = observe(env_config, state)
            used = self._perturb(net, raw, counters["step"]) \
                if self.attack_iters > 0 else raw
            mean = forward_batch(net, used[None])[0][0]
            z = action_rng.standard_normal(ACTION_DIM)
            action = mean + std * z
            state, tr = step(env_config, state, action)
            seg.obs.append(used)
            seg.actions.append(action)
            seg.noises.append(z)
            seg.rewards.append(tr.reward)
            episode_total += tr.reward
            counters["step"] += 1
            n += 1
            if tr.done:
                reached = state.step < env_config.horizon
                seg.terminal = reached
                seg.final_obs = tr.next_obs
                segments.append(seg)
                completed.append(episode_total)
                state = None
            elif n == self.rollout_steps:
                seg.terminal = False
                seg.final_obs = tr.next_obs
                segments.append(seg)
                state = None  # start fresh next rollout
        # logp under the collection policy, from the stored noise
        d = ACTION_DIM
        for s in segments:
            zmat = np.asarray(s.noises)
            s.logp = (-0.5 * (zmat ** 2).sum(axis=1)
                      - log_std_sum - 0.5 * d * _LOG_2PI)
        return segments, completed

    # -- update -----------------------------------------------------------

    def _update(self, net, vnet, segments, opt_pi, opt_v, shuffle_rng):
        X = np.concatenate([np.asarray(s.obs) for s in segments])
        A = np.concatenate([np.asarray(s.actions) for s in segments])
        logp_old = np.concatenate([s.logp for s in segments])

        values, _ = forward_value(vnet, X)
        finals = np.stack([s.final_obs for s in segments])
        final_values, _ = forward_value(vnet, finals)

        adv_parts, ret_parts = [], []
        offset = 0
        for i, s in enumerate(segments):
            T = len(s.rewards)
            bootstrap = 0.0 if s.terminal else float(final_values[i])
            a, r = gae_advantages(np.asarray(s.rewards), values[offset:offset + T],
                                  bootstrap, self.gamma, self.gae_lambda)
            adv_parts.append(a)
            ret_parts.append(r)
            offset += T
        adv = normalize_advantages(np.concatenate(adv_parts))
        ret = np.concatenate(ret_parts)

        n = X.shape[0]
        pi_losses, v_losses = [], []
        for _ in range(self.epochs):
            order = shuffle_rng.permutation(n)
            for start in range(0, n, self.minibatch):
                idx = order[start:start + self.minibatch]
                m = idx.shape[0]
                objective, dlogp = clipped_surrogate(
                    net, X[idx], A[idx], logp_old[idx], adv[idx], self.clip_ratio)
                grads = param_gradient(net, X[idx], A[idx], dlogp)
                gdict = {f.name: getattr(grads, f.name)
                         for f in dataclasses.fields(type(grads))}
                if self.mean_penalty > 0:
                    # keep the action mean inside the actuator's responsive
                    # range; saturated policies are trivially noise-immune
                    means, _ = forward_batch(net, X[idx])
                    pen = mean_param_gradient(
                        net, X[idx], 2.0 * self.mean_penalty * means / m)
                    for f in dataclasses.fields(type(pen)):
                        gdict[f.name] = gdict[f.name] + getattr(pen, f.name)
                net = PolicyNet(**opt_pi.step(_policy_params(net), gdict))

                v, cache = forward_value(vnet, X[idx])
                err = v - ret[idx]
                v_loss = float((err ** 2).mean())
                dv = self.value_coeff * 2.0 * err / m
                vnet = ValueNet(**opt_v.step(_value_params(vnet),
                                             _value_gradients(vnet, cache, dv)))
                pi_losses.append(-float(objective))
                v_losses.append(v_loss)
        return net, vnet, float(np.mean(pi_losses)), float(np.mean(v_losses))

    # -- public API --------------------------------------------------------

    def fit(self, env_config: EnvConfig, policy: PolicyNet | None = None):
        env_config = env_config if isinstance(env_config, EnvConfig) \
            else EnvConfig(task=env_config)
        d = obs_dim(env_config)
        net = policy if policy is not None \
            else PolicyNet.random(d, ACTION_DIM, rng_from(self.seed, 0))
        if net.obs_dim != d:
            raise ValueError(
                f"policy expects {net.obs_dim} features, task produces {d}")
        vnet = ValueNet.random(d, rng_from(self.seed, 1))
        action_rng = rng_from(self.seed, 2)
        shuffle_rng = rng_from(self.seed, 3)
        opt_pi = Adam(_policy_params(net), self.lr)
        opt_v = Adam(_value_params(vnet), self.lr)

        history = []
        counters = {"step": 0, "episode": 0}
        while counters["step"] < self.total_steps:
            segments, completed = self._collect(net, env_config, action_rng,
                                                counters)
            net, vnet, pi_loss, v_loss = self._update(net, vnet, segments,
                                                      opt_pi, opt_v, shuffle_rng)
            history.append({
                "step": counters["step"],
                "mean_episode_reward": float(np.mean(completed)) if completed
                else float("nan"),
                "policy_loss": pi_loss,
                "value_loss": v_loss,
                "entropy": float(np.sum(net.log_std)
                                 + 0.5 * ACTION_DIM * (1.0 + _LOG_2PI)),
            })

        self.policy_ = net
        self.value_ = vnet
        self.history_ = history
        self.n_features_in_ = d
        self.env_config_ = env_config

        base_mean, base_std = random_action_baseline(
            env_config, episodes=self.baseline_episodes, seed=self.seed)
        self.baseline_mean_ = base_mean
        self.baseline_std_ = base_std
        self.trained_mean_ = self._evaluate(net, env_config)
        margin = 3.0 * base_std / np.sqrt(self.baseline_episodes)
        self.beats_baseline_ = bool(self.trained_mean_ > base_mean + margin)
        return self

    def _evaluate(self, net, env_config, episodes=None):
        episodes = episodes or self.baseline_episodes
        std = net.std
        totals = []
        for ep in range(episodes):
            state = reset(env_config, derive_seed(self.seed, 11, ep))
            rng = rng_from(self.seed, 12, ep)
            total = 0.0
            while True:
                mean = forward_batch(net, observe(env_config, state)[None])[0][0]
                state, tr = step(env_config, state,
                                 mean + std * rng.standard_normal(ACTION_DIM))
                total += tr.reward
                if tr.done:
                    break
            totals.append(total)
        return float(np.mean(totals))


def train(env_config, total_steps=200_000, seed=0, **kwargs) -> PolicyGradientTrainer:
    """Train a policy from scratch; returns the fitted trainer."""
    return PolicyGradientTrainer(total_steps=total_steps, seed=seed,
                                 **kwargs).fit(env_config)


def adversarial_train(env_config, policy: PolicyNet, total_steps=50_000,
                      attack_iters=10, seed=0, **kwargs) -> PolicyGradientTrainer:
    """Fine-tune a policy while an observation attacker perturbs its inputs.

    The attacker runs against the current policy at every rollout step;
    the environment itself always sees the true state.
    """
    return PolicyGradientTrainer(total_steps=total_steps, seed=seed,
                                 attack_iters=attack_iters,
                                 **kwargs).fit(env_config, policy=policy)
