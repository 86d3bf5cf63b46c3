"""Divergences between diagonal Gaussians, with gradients.

Closed forms for Bhattacharyya distance, KL, and squared 2-Wasserstein;
a reparameterised Monte-Carlo estimator for Jensen-Shannon (no closed
form exists).  Each returns the value together with the gradient with
respect to the first argument's mean and std, which is what an attack
ascending the divergence through the policy network needs.

Internally everything is computed batched; the public functions wrap a
batch of one.  The JS estimator is written in terms of the mean gap and
the std ratio so that identical distributions give exactly zero for any
noise (x/x == 1.0 in IEEE arithmetic).

A slow Simpson-refinement quadrature oracle is included for testing the
closed forms; it supports 1- and 2-dim action spaces only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .policy import DiagGaussian

__all__ = [
    "DivergenceKind",
    "DivGrad",
    "bhattacharyya",
    "kl",
    "kl_wrt_second",
    "w2",
    "js_mc",
    "quadrature_oracle",
]

_LOG_2PI = float(np.log(2.0 * np.pi))
_LN_2 = float(np.log(2.0))
_VALUE_FLOOR = -1e-12


class DivergenceKind(enum.Enum):
    BD = "bd"
    KL = "kl"
    JS = "js"
    W2 = "w2"


@dataclass(frozen=True, eq=False)
class DivGrad:
    """Divergence value plus gradient wrt the first distribution's parameters."""

    value: float
    d_mean: np.ndarray
    d_std: np.ndarray


def _clamp_value(value: float, mc: bool = False) -> float:
    if value >= 0.0:
        return value
    if mc or value > _VALUE_FLOOR:
        # closed forms can round a true zero to ~-1e-16; MC estimates of a
        # non-negative quantity may dip further below zero
        return 0.0
    raise FloatingPointError(f"divergence evaluated to {value}, expected >= 0")


def _check_pair(p: DiagGaussian, q: DiagGaussian) -> None:
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")


# ---------------------------------------------------------------------------
# batched kernels: Mp, Sp, Mq, Sq all (B, a); return (val (B,), dM, dS (B, a))


def bd_kernel(Mp, Sp, Mq, Sq):
    dmu = Mp - Mq
    vbar = 0.5 * (Sp ** 2 + Sq ** 2)
    val = np.sum(dmu ** 2 / (8.0 * vbar) + 0.5 * np.log(vbar / (Sp * Sq)), axis=-1)
    d_mean = dmu / (4.0 * vbar)
    d_std = -dmu ** 2 * Sp / (8.0 * vbar ** 2) + Sp / (2.0 * vbar) - 0.5 / Sp
    return val, d_mean, d_std


def kl_kernel(Mp, Sp, Mq, Sq):
    dmu = Mp - Mq
    val = np.sum(np.log(Sq / Sp) + (Sp ** 2 + dmu ** 2) / (2.0 * Sq ** 2) - 0.5,
                 axis=-1)
    d_mean = dmu / Sq ** 2
    d_std = Sp / Sq ** 2 - 1.0 / Sp
    return val, d_mean, d_std


def kl_second_kernel(Mp, Sp, Mq, Sq):
    # value KL(p || q); gradients with respect to q
    dmu = Mp - Mq
    val = np.sum(np.log(Sq / Sp) + (Sp ** 2 + dmu ** 2) / (2.0 * Sq ** 2) - 0.5,
                 axis=-1)
    d_mean = (Mq - Mp) / Sq ** 2
    d_std = 1.0 / Sq - (Sp ** 2 + dmu ** 2) / Sq ** 3
    return val, d_mean, d_std


def w2_kernel(Mp, Sp, Mq, Sq):
    dmu = Mp - Mq
    dsig = Sp - Sq
    val = np.sum(dmu ** 2 + dsig ** 2, axis=-1)
    return val, 2.0 * dmu, 2.0 * dsig


def _softplus(u):
    return np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))


def _sigmoid(u):
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def js_kernel(Mp, Sp, Mq, Sq, Z):
    """Monte-Carlo Jensen-Shannon with shared noise.

    Z has shape (B, K, a); the same noise reparameterises both
    distributions' samples, which makes the estimator exactly symmetric
    and exactly zero when p == q.
    """
    D = (Mp - Mq)[:, None, :]          # mean gap (B, 1, a)
    sp = Sp[:, None, :]
    sq = Sq[:, None, :]
    # r_p[k] = (a_p[k] - Mq) / Sq with a_p = Mp + Sp * Z, written in
    # gap/ratio form so p == q collapses to r_p == Z bitwise
    r_p = D / sq + (sp / sq) * Z       # (B, K, a)
    r_q = -D / sp + (sq / sp) * Z
    log_ratio_pq = np.log(sp / sq)     # ln(Sp / Sq), (B, 1, a)

    # u_p[k] = ln q(a_p[k]) - ln p(a_p[k]); u_q the mirror image
    u_p = np.sum(0.5 * (Z * Z - r_p * r_p) + log_ratio_pq, axis=-1)   # (B, K)
    u_q = np.sum(0.5 * (Z * Z - r_q * r_q) - log_ratio_pq, axis=-1)

    # ln m(a) - ln p(a) = softplus(u) - ln 2 for the mixture m = (p + q) / 2
    term_p = _LN_2 - _softplus(u_p)
    term_q = _LN_2 - _softplus(u_q)
    K = Z.shape[1]
    val = 0.5 * (np.sum(term_p, axis=-1) + np.sum(term_q, axis=-1)) / K

    wq_ap = _sigmoid(u_p)[:, :, None]  # mixture weight of q at p's samples
    wp_aq = _sigmoid(u_q)[:, :, None]
    # d/dMp: only the mixture terms survive (reparam cancels the rest)
    d_mean = 0.5 * np.sum(wq_ap * (r_p / sq) - wp_aq * (r_q / sp), axis=1) / K
    # d/dSp, assembled from the two halves of the estimator:
    #   p-half: -w_q(a_p) * (1/Sp + Z * dlnq/da(a_p)),  dlnq/da(a_p) = -r_p/Sq
    #   q-half: -w_p(a_q) * (r_q^2 - 1)/Sp
    d_std = -0.5 * np.sum(
        wq_ap * (1.0 / sp - Z * (r_p / sq)) + wp_aq * (r_q * r_q - 1.0) / sp,
        axis=1) / K
    return val, d_mean, d_std


# ---------------------------------------------------------------------------
# public single-pair API


def _single(kernel, p: DiagGaussian, q: DiagGaussian, mc: bool = False, **kw) -> DivGrad:
    _check_pair(p, q)
    val, d_mean, d_std = kernel(p.mean[None], p.std[None], q.mean[None], q.std[None], **kw)
    return DivGrad(value=_clamp_value(float(val[0]), mc=mc),
                   d_mean=d_mean[0], d_std=d_std[0])


def bhattacharyya(p: DiagGaussian, q: DiagGaussian) -> DivGrad:
    """Bhattacharyya distance -ln integral sqrt(p q), gradients wrt p."""
    return _single(bd_kernel, p, q)


def kl(p: DiagGaussian, q: DiagGaussian) -> DivGrad:
    """KL(p || q), gradients wrt p."""
    return _single(kl_kernel, p, q)


def kl_wrt_second(p: DiagGaussian, q: DiagGaussian) -> DivGrad:
    """KL(p || q), but gradients taken wrt q (the second argument)."""
    return _single(kl_second_kernel, p, q)


def w2(p: DiagGaussian, q: DiagGaussian) -> DivGrad:
    """Squared 2-Wasserstein distance, gradients wrt p."""
    return _single(w2_kernel, p, q)


def js_mc(p: DiagGaussian, q: DiagGaussian, base_noise: np.ndarray) -> DivGrad:
    """Monte-Carlo Jensen-Shannon divergence from a fixed noise matrix.

    base_noise must be (K, act_dim) standard normal draws; the caller owns
    the noise so repeated evaluations are deterministic and differentiable.
    """
    _check_pair(p, q)
    Z = np.asarray(base_noise, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != p.dim:
        raise ValueError(
            f"base_noise must have shape (K, {p.dim}), got {Z.shape}")
    if Z.shape[0] < 1:
        raise ValueError("base_noise needs at least one sample")
    return _single(js_kernel, p, q, mc=True, Z=Z[None])


# ---------------------------------------------------------------------------
# quadrature oracle


def _simpson_1d(f, lo, hi, tol, relative, max_points=1 << 14):
    n = 64
    prev = None
    while n <= max_points:
        x = np.linspace(lo, hi, n + 1)
        w = np.ones(n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        total = float(np.dot(w, f(x)) * (hi - lo) / (3.0 * n))
        if prev is not None:
            gate = tol * max(abs(total), 1e-300) if relative else tol
            if abs(total - prev) < gate:
                return total
        prev = total
        n *= 2
    raise RuntimeError(
        f"quadrature did not converge to {tol} within {max_points} points")


def _simpson_2d(f, lo, hi, tol, relative, max_points=1 << 12):
    n = 64
    prev = None
    while n <= max_points:
        xs = [np.linspace(lo[i], hi[i], n + 1) for i in range(2)]
        w = np.ones(n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        vals = f(xs[0], xs[1])
        scale = (hi[0] - lo[0]) * (hi[1] - lo[1]) / (3.0 * n) ** 2
        total = float(w @ vals @ w) * scale
        if prev is not None:
            gate = tol * max(abs(total), 1e-300) if relative else tol
            if abs(total - prev) < gate:
                return total
        prev = total
        n *= 2
    raise RuntimeError(
        f"quadrature did not converge to {tol} within {max_points}^2 points")


def _log_density_1d(x, mu, sigma):
    z = (x - mu) / sigma
    return -0.5 * z ** 2 - np.log(sigma) - 0.5 * _LOG_2PI


def quadrature_oracle(p: DiagGaussian, q: DiagGaussian, kind: DivergenceKind,
                      tol: float = 1e-8) -> float:
    """Divergence by grid refinement, for testing the closed forms.

    Composite Simpson on [mu - 10 sigma, mu + 10 sigma] per dimension
    (the union over both distributions), doubling the grid until two
    successive refinements agree; non-convergence is a hard error.
    Supports act_dim 1 and 2 only.
    """
    _check_pair(p, q)
    kind = DivergenceKind(kind)
    dim = p.dim
    if dim not in (1, 2):
        raise ValueError(f"quadrature oracle supports 1 or 2 dims, got {dim}")

    if kind is DivergenceKind.W2:
        # 1-dim marginals couple monotonically: per dim,
        # integral of (dmu + dsigma * t)^2 phi(t) dt
        total = 0.0
        for i in range(dim):
            dmu = p.mean[i] - q.mean[i]
            dsig = p.std[i] - q.std[i]

            def integrand(t, dmu=dmu, dsig=dsig):
                phi = np.exp(-0.5 * t ** 2) / np.sqrt(2.0 * np.pi)
                return (dmu + dsig * t) ** 2 * phi

            total += _simpson_1d(integrand, -10.0, 10.0, tol, relative=False)
        return total

    lo = np.minimum(p.mean - 10.0 * p.std, q.mean - 10.0 * q.std)
    hi = np.maximum(p.mean + 10.0 * p.std, q.mean + 10.0 * q.std)

    def logs(xs):
        # per-dim log densities on per-dim grids
        lps = [_log_density_1d(xs[i], p.mean[i], p.std[i]) for i in range(dim)]
        lqs = [_log_density_1d(xs[i], q.mean[i], q.std[i]) for i in range(dim)]
        return lps, lqs

    if kind is DivergenceKind.BD:
        if dim == 1:
            def f(x):
                lp, lq = logs([x])
                return np.exp(0.5 * (lp[0] + lq[0]))
            integral = _simpson_1d(f, lo[0], hi[0], tol, relative=True)
        else:
            def f(x0, x1):
                lps, lqs = logs([x0, x1])
                g0 = np.exp(0.5 * (lps[0] + lqs[0]))
                g1 = np.exp(0.5 * (lps[1] + lqs[1]))
                return np.outer(g0, g1)
            integral = _simpson_2d(f, lo, hi, tol, relative=True)
        return -float(np.log(integral))

    if kind is DivergenceKind.KL:
        if dim == 1:
            def f(x):
                lp, lq = logs([x])
                return np.exp(lp[0]) * (lp[0] - lq[0])
            return _simpson_1d(f, lo[0], hi[0], tol, relative=False)

        def f(x0, x1):
            lps, lqs = logs([x0, x1])
            P = np.exp(lps[0])[:, None] * np.exp(lps[1])[None, :]
            diff = (lps[0] - lqs[0])[:, None] + (lps[1] - lqs[1])[None, :]
            return P * diff
        return _simpson_2d(f, lo, hi, tol, relative=False)

    # JS via the mixture integral
    if dim == 1:
        def f(x):
            lp, lq = logs([x])
            P, Q = np.exp(lp[0]), np.exp(lq[0])
            m = 0.5 * (P + Q)
            return 0.5 * P * (lp[0] - np.log(m)) + 0.5 * Q * (lq[0] - np.log(m))
        return _simpson_1d(f, lo[0], hi[0], tol, relative=False)

    def f(x0, x1):
        lps, lqs = logs([x0, x1])
        lp = lps[0][:, None] + lps[1][None, :]
        lq = lqs[0][:, None] + lqs[1][None, :]
        P, Q = np.exp(lp), np.exp(lq)
        lm = np.log(0.5 * (P + Q))
        return 0.5 * P * (lp - lm) + 0.5 * Q * (lq - lm)
    return _simpson_2d(f, lo, hi, tol, relative=False)
