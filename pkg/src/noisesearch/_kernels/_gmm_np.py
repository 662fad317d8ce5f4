"""Pure-numpy kernels: diffused Gaussian-mixture score and Heun integrator.

Reference implementation for the compiled extension. Every array operation
here is row-independent (elementwise ops, per-row reductions, and
``einsum`` with ``optimize=False``), so evaluating a batch is bitwise
identical to evaluating its rows one at a time — a property the transport
layer relies on and the kernel tests pin down.
"""

from __future__ import annotations

import math

import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)


def alpha_bar(t: float, beta_min: float, beta_max: float) -> float:
    """Signal retention exp(-∫β) for the linear variance-preserving schedule."""
    return math.exp(-(beta_min * t + 0.5 * (beta_max - beta_min) * t * t))


def beta(t: float, beta_min: float, beta_max: float) -> float:
    return beta_min + t * (beta_max - beta_min)


def _diffused_components(t, weights, means, covs, beta_min, beta_max):
    """Per-component (log weight, diffused mean, precision, log det) at time t."""
    ab = alpha_bar(t, beta_min, beta_max)
    sqrt_ab = math.sqrt(ab)
    m = means.shape[1]
    eye = np.eye(m)
    mus = sqrt_ab * means
    precs = []
    logdets = []
    for k in range(means.shape[0]):
        sigma_t = ab * covs[k] + (1.0 - ab) * eye
        precs.append(np.linalg.inv(sigma_t))
        sign, logdet = np.linalg.slogdet(sigma_t)
        if sign <= 0:
            raise np.linalg.LinAlgError("diffused covariance is not positive-definite")
        logdets.append(logdet)
    return np.log(weights), mus, precs, logdets


def gmm_score_batch(x, t, weights, means, covs, beta_min, beta_max):
    """∇_x log p_t(x) for the VP-diffused mixture, for a batch of points.

    x: (B, m); weights: (K,); means: (K, m); covs: (K, m, m). Returns (B, m).
    """
    x = np.asarray(x, dtype=np.float64)
    logw, mus, precs, logdets = _diffused_components(t, weights, means, covs, beta_min, beta_max)
    k_count, m = means.shape
    b = x.shape[0]

    loglik = np.empty((b, k_count))
    pulls = np.empty((k_count, b, m))
    for k in range(k_count):
        diff = mus[k][None, :] - x
        y = np.einsum("ab,ib->ia", precs[k], diff, optimize=False)
        maha = np.sum(diff * y, axis=1)
        loglik[:, k] = logw[k] - 0.5 * (maha + logdets[k] + m * _LOG_2PI)
        pulls[k] = y

    amax = np.max(loglik, axis=1)
    resp = np.exp(loglik - amax[:, None])
    resp /= np.sum(resp, axis=1)[:, None]

    score = np.zeros((b, m))
    for k in range(k_count):
        score += resp[:, k][:, None] * pulls[k]
    return score


def _drift(x, t, weights, means, covs, beta_min, beta_max):
    b = beta(t, beta_min, beta_max)
    return -0.5 * b * (x + gmm_score_batch(x, t, weights, means, covs, beta_min, beta_max))


def heun_denoise_batch(x1, steps, weights, means, covs, beta_min, beta_max, t_min):
    """Integrate the probability-flow ODE from t=1 down to t_min with Heun.

    dx/dt = -0.5*β(t)*(x + score(x, t)), uniform grid with `steps` steps.
    x1: (B, m) latents at t=1. Returns the (B, m) samples at t=t_min.
    """
    x = np.array(x1, dtype=np.float64, copy=True)
    ts = np.linspace(1.0, t_min, steps + 1)
    for j in range(steps):
        t0 = ts[j]
        t1 = ts[j + 1]
        h = t1 - t0
        f0 = _drift(x, t0, weights, means, covs, beta_min, beta_max)
        xe = x + h * f0
        f1 = _drift(xe, t1, weights, means, covs, beta_min, beta_max)
        x = x + (0.5 * h) * (f0 + f1)
    return x
