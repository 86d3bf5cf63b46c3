"""Diagonal-Gaussian MLP policy with hand-rolled forward and reverse passes.

The network is a fixed-architecture tanh MLP (two hidden layers of 64)
producing the mean of a diagonal Gaussian over actions; the log standard
deviation is a free state-independent parameter clamped to [-10, 2].
Everything is float64 numpy.  Matrix products go through einsum rather
than BLAS so that a batched forward pass is bitwise identical, row by
row, to single-observation calls regardless of batch size; attack and
evaluation determinism relies on this.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .validation import as_matrix, as_vector, check_finite

__all__ = [
    "HIDDEN",
    "LOG_STD_MIN",
    "LOG_STD_MAX",
    "WEIGHTS_FORMAT",
    "DiagGaussian",
    "PolicyNet",
    "orthogonal",
    "ForwardTrace",
    "PolicyGrads",
    "forward",
    "forward_batch",
    "mean_input_vjp",
    "sample",
    "log_prob",
    "entropy",
    "input_gradient",
    "param_gradient",
    "mean_param_gradient",
    "save_weights",
    "load_weights",
]

HIDDEN = 64
LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
WEIGHTS_FORMAT = "polattack-weights-v1"
_LOG_2PI = float(np.log(2.0 * np.pi))


def _mm(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    # (B, d) x (h, d)^T -> (B, h); einsum keeps per-row accumulation order
    # independent of B, unlike BLAS gemm
    return np.einsum("bd,hd->bh", X, W)


def _mm_t(G: np.ndarray, W: np.ndarray) -> np.ndarray:
    # (B, h) x (h, d) -> (B, d)
    return np.einsum("bh,hd->bd", G, W)


def _outer(G: np.ndarray, X: np.ndarray) -> np.ndarray:
    # sum_b outer(G[b], X[b]) -> (h, d)
    return np.einsum("bh,bd->hd", G, X)


@dataclass(frozen=True, eq=False)
class DiagGaussian:
    """Diagonal Gaussian over actions: independent N(mean_i, std_i^2) per dim."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = as_vector(self.mean, "mean")
        std = as_vector(self.std, "std", size=mean.shape[0])
        if not np.all(std > 0):
            raise ValueError("std must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def orthogonal(rows: int, cols: int, gain: float,
               rng: np.random.Generator) -> np.ndarray:
    """Orthogonal weight initialisation with a sign-fixed QR."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def _field_vector(value, name, size=None):
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ValueError(f"{name} must have length {size}, got {arr.shape[0]}")
    check_finite(arr, name)
    return arr


def _field_matrix(value, name, rows=None, cols=None):
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got {arr.shape[1]}")
    check_finite(arr, name)
    return arr


@dataclass(frozen=True, eq=False)
class PolicyNet:
    """Parameters of the policy network.

    Shapes: W1 (64, obs_dim), b1 (64,), W2 (64, 64), b2 (64,),
    Wmu (act_dim, 64), bmu (act_dim,), log_std (act_dim,).
    log_std is clamped to [LOG_STD_MIN, LOG_STD_MAX] at construction.
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    Wmu: np.ndarray
    bmu: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        W1 = _field_matrix(self.W1, "W1", rows=HIDDEN)
        b1 = _field_vector(self.b1, "b1", size=HIDDEN)
        W2 = _field_matrix(self.W2, "W2", rows=HIDDEN, cols=HIDDEN)
        b2 = _field_vector(self.b2, "b2", size=HIDDEN)
        Wmu = _field_matrix(self.Wmu, "Wmu", cols=HIDDEN)
        act_dim = Wmu.shape[0]
        bmu = _field_vector(self.bmu, "bmu", size=act_dim)
        log_std = np.clip(
            _field_vector(self.log_std, "log_std", size=act_dim),
            LOG_STD_MIN,
            LOG_STD_MAX,
        )
        for name, arr in [
            ("W1", W1), ("b1", b1), ("W2", W2), ("b2", b2),
            ("Wmu", Wmu), ("bmu", bmu), ("log_std", log_std),
        ]:
            object.__setattr__(self, name, arr)

    @property
    def obs_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def act_dim(self) -> int:
        return self.Wmu.shape[0]

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    @staticmethod
    def random(obs_dim: int, act_dim: int, rng: np.random.Generator,
               init_log_std: float = -0.5) -> "PolicyNet":
        """Orthogonal-initialised network (gain sqrt(2) hidden, 0.01 mean head)."""
        return PolicyNet(
            W1=orthogonal(HIDDEN, obs_dim, np.sqrt(2.0), rng),
            b1=np.zeros(HIDDEN),
            W2=orthogonal(HIDDEN, HIDDEN, np.sqrt(2.0), rng),
            b2=np.zeros(HIDDEN),
            Wmu=orthogonal(act_dim, HIDDEN, 0.01, rng),
            bmu=np.zeros(act_dim),
            log_std=np.full(act_dim, init_log_std),
        )


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Cached activations from one forward pass.  All fields are (B, .)."""

    obs: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    h2: np.ndarray


def forward_batch(net: PolicyNet, X: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    """Batched forward pass: X (B, obs_dim) -> means (B, act_dim) plus trace."""
    X = as_matrix(X, "obs", cols=net.obs_dim)
    z1 = _mm(X, net.W1) + net.b1
    h1 = np.tanh(z1)
    z2 = _mm(h1, net.W2) + net.b2
    h2 = np.tanh(z2)
    means = _mm(h2, net.Wmu) + net.bmu
    return means, ForwardTrace(obs=X, z1=z1, h1=h1, z2=z2, h2=h2)


def forward(net: PolicyNet, obs: np.ndarray) -> tuple[DiagGaussian, ForwardTrace]:
    """Single-observation forward pass returning the action distribution."""
    obs = as_vector(obs, "obs", size=net.obs_dim)
    means, trace = forward_batch(net, obs[None, :])
    return DiagGaussian(mean=means[0], std=net.std), trace


def mean_input_vjp(net: PolicyNet, trace: ForwardTrace, d_mean: np.ndarray) -> np.ndarray:
    """Pull a cotangent on the mean (B, act_dim) back to the observation (B, obs_dim).

    std is state-independent, so it contributes no observation gradient.
    """
    d_mean = np.asarray(d_mean, dtype=np.float64)
    if d_mean.ndim == 1:
        d_mean = d_mean[None, :]
    dh2 = _mm_t(d_mean, net.Wmu)
    dz2 = dh2 * (1.0 - trace.h2 ** 2)
    dh1 = _mm_t(dz2, net.W2)
    dz1 = dh1 * (1.0 - trace.h1 ** 2)
    return _mm_t(dz1, net.W1)


def sample(dist: DiagGaussian, noise: np.ndarray) -> np.ndarray:
    """Reparameterised draw: mean + std * noise, noise ~ N(0, I) supplied by caller."""
    noise = as_vector(noise, "noise", size=dist.dim)
    return dist.mean + dist.std * noise


def log_prob(dist: DiagGaussian, action: np.ndarray) -> float:
    """Log density of the diagonal Gaussian at `action`."""
    action = as_vector(action, "action", size=dist.dim)
    z = (action - dist.mean) / dist.std
    return float(np.sum(-0.5 * z ** 2 - np.log(dist.std) - 0.5 * _LOG_2PI))


def entropy(dist: DiagGaussian) -> float:
    return float(np.sum(0.5 * (1.0 + _LOG_2PI) + np.log(dist.std)))


def input_gradient(net: PolicyNet, obs: np.ndarray, loss_head) -> np.ndarray:
    """Gradient of loss_head(distribution at obs) with respect to obs.

    loss_head maps a DiagGaussian to (value, d_mean); non-finite results
    are a hard error naming the head.
    """
    dist, trace = forward(net, obs)
    value, d_mean = loss_head(dist)
    grad = mean_input_vjp(net, trace, np.asarray(d_mean, dtype=np.float64))[0]
    if not (np.isfinite(value) and np.all(np.isfinite(grad))):
        name = getattr(loss_head, "name", type(loss_head).__name__)
        raise FloatingPointError(
            f"non-finite value or input gradient from loss head '{name}'"
        )
    return grad


@dataclass(eq=False)
class PolicyGrads:
    """Parameter cotangents, one array per PolicyNet field."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    Wmu: np.ndarray
    bmu: np.ndarray
    log_std: np.ndarray

    @staticmethod
    def zeros(net: PolicyNet) -> "PolicyGrads":
        return PolicyGrads(*(np.zeros_like(getattr(net, f.name))
                             for f in dataclasses.fields(PolicyGrads)))


def param_gradient(net: PolicyNet, obs: np.ndarray, actions: np.ndarray,
                   dlogp: np.ndarray) -> PolicyGrads:
    """Reverse-mode gradient of sum_b dlogp[b] * log pi(actions[b] | obs[b]).

    The caller supplies the per-sample cotangent dlogp (the chain factor
    of whatever scalar objective sits on top of the log-probabilities),
    which keeps this reusable for any surrogate built from log pi.
    """
    X = as_matrix(obs, "obs", cols=net.obs_dim)
    A = as_matrix(actions, "actions", cols=net.act_dim)
    if A.shape[0] != X.shape[0]:
        raise ValueError("obs and actions must have the same batch size")
    dlogp = as_vector(np.asarray(dlogp, dtype=np.float64), "dlogp", size=X.shape[0])

    means, trace = forward_batch(net, X)
    std = net.std
    z = (A - means) / std

    # d logp / d mean = (a - mean) / std^2 ; d logp / d log_std = z^2 - 1
    d_mean = dlogp[:, None] * z / std
    d_log_std = np.einsum("b,bi->i", dlogp, z ** 2 - 1.0)
    grads = _mean_backward(net, trace, d_mean)
    grads.log_std = d_log_std
    return grads


def mean_param_gradient(net: PolicyNet, obs: np.ndarray,
                        d_mean: np.ndarray) -> PolicyGrads:
    """Gradient of sum_b d_mean[b] . mean(obs[b]) with respect to parameters.

    log_std gets a zero gradient: the mean path does not touch it.
    """
    X = as_matrix(obs, "obs", cols=net.obs_dim)
    d_mean = as_matrix(d_mean, "d_mean", cols=net.act_dim)
    if d_mean.shape[0] != X.shape[0]:
        raise ValueError("obs and d_mean must have the same batch size")
    _, trace = forward_batch(net, X)
    return _mean_backward(net, trace, d_mean)


def _mean_backward(net: PolicyNet, trace: ForwardTrace,
                   d_mean: np.ndarray) -> PolicyGrads:
    dWmu = _outer(d_mean, trace.h2)
    dbmu = d_mean.sum(axis=0)
    dh2 = _mm_t(d_mean, net.Wmu)
    dz2 = dh2 * (1.0 - trace.h2 ** 2)
    dW2 = _outer(dz2, trace.h1)
    db2 = dz2.sum(axis=0)
    dh1 = _mm_t(dz2, net.W2)
    dz1 = dh1 * (1.0 - trace.h1 ** 2)
    dW1 = _outer(dz1, trace.obs)
    db1 = dz1.sum(axis=0)
    return PolicyGrads(W1=dW1, b1=db1, W2=dW2, b2=db2,
                       Wmu=dWmu, bmu=dbmu,
                       log_std=np.zeros_like(net.log_std))


_WEIGHT_FIELDS = ["W1", "b1", "W2", "b2", "Wmu", "bmu", "log_std"]


def save_weights(net: PolicyNet, path: str) -> None:
    """Write the network to a JSON weights file (format polattack-weights-v1)."""
    payload = {
        "format": WEIGHTS_FORMAT,
        "obs_dim": net.obs_dim,
        "act_dim": net.act_dim,
        "activation": "tanh",
    }
    for name in _WEIGHT_FIELDS:
        payload[name] = getattr(net, name).tolist()
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_weights(path: str) -> PolicyNet:
    """Read a JSON weights file, validating the schema field by field."""
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"weights file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ValueError("weights file must contain a JSON object")
    fmt = payload.get("format")
    if fmt != WEIGHTS_FORMAT:
        raise ValueError(f"unsupported weights format {fmt!r}, expected {WEIGHTS_FORMAT!r}")
    for key in ["obs_dim", "act_dim", "activation", *_WEIGHT_FIELDS]:
        if key not in payload:
            raise ValueError(f"weights file is missing field '{key}'")
    if payload["activation"] != "tanh":
        raise ValueError(f"unsupported activation {payload['activation']!r}")
    obs_dim = int(payload["obs_dim"])
    act_dim = int(payload["act_dim"])
    try:
        net = PolicyNet(*(payload[name] for name in _WEIGHT_FIELDS))
    except ValueError:
        raise
    if net.obs_dim != obs_dim:
        raise ValueError(
            f"W1 implies obs_dim {net.obs_dim} but file declares {obs_dim}")
    if net.act_dim != act_dim:
        raise ValueError(
            f"Wmu implies act_dim {net.act_dim} but file declares {act_dim}")
    return net
