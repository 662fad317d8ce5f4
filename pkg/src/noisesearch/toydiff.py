"""Analytic diffusion sampler: probability-flow ODE over a Gaussian mixture.

The data distribution is a finite Gaussian mixture whose diffused score is
available in closed form, so the latent-to-sample map is an exactly
computable, deterministic function. This makes search behavior over noise
latents testable without any pretrained model: the hot loop lives in
``noisesearch._kernels`` (compiled when available).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from . import _kernels
from .core import (
    BudgetExhaustedError,
    InvalidDimensionError,
    InvalidParameterError,
    Latent,
    NfeLedger,
    Sample,
)

_WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Finite Gaussian mixture: weights (K,), means (K, m), covs (K, m, m)."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        cov = np.asarray(self.covs, dtype=np.float64)
        if w.ndim != 1 or mu.ndim != 2 or cov.ndim != 3:
            raise InvalidDimensionError("expected weights (K,), means (K,m), covs (K,m,m)")
        k, m = mu.shape
        if w.shape[0] != k or cov.shape != (k, m, m):
            raise InvalidDimensionError(
                f"inconsistent component shapes: weights {w.shape}, means {mu.shape}, covs {cov.shape}"
            )
        if np.any(w <= 0.0) or np.any(w > 1.0):
            raise InvalidParameterError("component weights must lie in (0, 1]")
        if abs(float(np.sum(w)) - 1.0) > _WEIGHT_SUM_TOL:
            raise InvalidParameterError(f"weights must sum to 1 within {_WEIGHT_SUM_TOL}, got {np.sum(w)!r}")
        for idx in range(k):
            if not np.allclose(cov[idx], cov[idx].T, rtol=0.0, atol=1e-12):
                raise InvalidParameterError(f"covariance {idx} is not symmetric")
            try:
                np.linalg.cholesky(cov[idx])
            except np.linalg.LinAlgError as exc:
                raise InvalidParameterError(f"covariance {idx} is not positive-definite") from exc
        for name, arr in (("weights", w), ("means", mu), ("covs", cov)):
            arr = np.array(arr, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @classmethod
    def from_components(cls, components: Sequence[tuple[float, Any, Any]]) -> "GaussianMixture":
        """Build from (weight, mean, cov) triples; cov may be scalar, diag vector, or matrix."""
        if not components:
            raise InvalidParameterError("mixture needs at least one component")
        means = np.asarray([np.asarray(mu, dtype=np.float64) for _, mu, _ in components])
        m = means.shape[1]
        covs = []
        for _, _, cov in components:
            arr = np.asarray(cov, dtype=np.float64)
            if arr.ndim == 0:
                arr = float(arr) * np.eye(m)
            elif arr.ndim == 1:
                arr = np.diag(arr)
            covs.append(arr)
        weights = np.asarray([w for w, _, _ in components], dtype=np.float64)
        return cls(weights=weights, means=means, covs=np.asarray(covs))

    def component_sampler(self, component: int, seed: int) -> np.ndarray:
        """One exact draw from a single component, keyed by seed."""
        if not (0 <= component < self.n_components):
            raise InvalidParameterError(f"component index {component} out of range")
        rng = np.random.Generator(np.random.Philox(key=seed & ((1 << 64) - 1)))
        chol = np.linalg.cholesky(self.covs[component])
        return self.means[component] + chol @ rng.standard_normal(self.dim)


def default_mixture() -> GaussianMixture:
    """Desk-scale benchmark problem: four well-separated modes in the plane."""
    return GaussianMixture.from_components(
        [
            (0.25, [3.0, 3.0], 0.25),
            (0.25, [3.0, -3.0], 0.25),
            (0.25, [-3.0, 3.0], 0.25),
            (0.25, [-3.0, -3.0], 0.25),
        ]
    )


@dataclass(frozen=True)
class VpSchedule:
    """Linear variance-preserving noise schedule with a fixed step count."""

    beta_min: float = 0.1
    beta_max: float = 20.0
    steps: int = 64
    t_min: float = 1e-3

    def __post_init__(self) -> None:
        if self.beta_min <= 0.0 or self.beta_max <= self.beta_min:
            raise InvalidParameterError(
                f"need 0 < beta_min < beta_max, got ({self.beta_min}, {self.beta_max})"
            )
        if self.steps < 1:
            raise InvalidParameterError(f"steps must be positive, got {self.steps}")
        if not (0.0 < self.t_min < 1.0):
            raise InvalidParameterError(f"t_min must lie in (0, 1), got {self.t_min}")

    def beta(self, t: float) -> float:
        return _kernels.beta(t, self.beta_min, self.beta_max)

    def alpha_bar(self, t: float) -> float:
        return _kernels.alpha_bar(t, self.beta_min, self.beta_max)


def _check_point(mixture: GaussianMixture, x: np.ndarray) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != mixture.dim:
        raise InvalidDimensionError(
            f"point has shape {arr.shape}, mixture dimension is {mixture.dim}"
        )
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("point contains non-finite values")
    return arr


def score(mixture: GaussianMixture, x: np.ndarray, t: float, schedule: VpSchedule) -> np.ndarray:
    """∇_x log p_t(x) of the mixture diffused to time t (closed form)."""
    arr = _check_point(mixture, x)
    if not (0.0 <= t <= 1.0):
        raise InvalidParameterError(f"t must lie in [0, 1], got {t}")
    out = _kernels.gmm_score_batch(
        arr[None, :], t, mixture.weights, mixture.means, mixture.covs,
        schedule.beta_min, schedule.beta_max,
    )
    return np.asarray(out)[0]


def log_density(mixture: GaussianMixture, x: np.ndarray, t: float, schedule: VpSchedule) -> float:
    """log p_t(x) of the diffused mixture; companion to :func:`score`."""
    arr = _check_point(mixture, x)
    ab = schedule.alpha_bar(t)
    m = mixture.dim
    terms = []
    for k in range(mixture.n_components):
        sigma_t = ab * mixture.covs[k] + (1.0 - ab) * np.eye(m)
        diff = arr - math.sqrt(ab) * mixture.means[k]
        sol = np.linalg.solve(sigma_t, diff)
        _, logdet = np.linalg.slogdet(sigma_t)
        terms.append(
            math.log(mixture.weights[k])
            - 0.5 * (float(diff @ sol) + logdet + m * math.log(2.0 * math.pi))
        )
    amax = max(terms)
    return amax + math.log(sum(math.exp(v - amax) for v in terms))


def denoise(mixture: GaussianMixture, latent: Latent, schedule: VpSchedule,
            ledger: NfeLedger) -> Sample:
    """Map one latent to a sample along the probability-flow ODE.

    Charges exactly ``schedule.steps`` NFEs; refuses (ledger untouched) when
    the remaining budget is short.
    """
    return denoise_batch(mixture, [latent], schedule, ledger)[0]


def denoise_batch(mixture: GaussianMixture, latents: Sequence[Latent], schedule: VpSchedule,
                  ledger: NfeLedger) -> list[Sample]:
    """Denoise several latents; the batch result is identical to one-at-a-time calls."""
    if not latents:
        return []
    for latent in latents:
        if latent.dim != mixture.dim:
            raise InvalidDimensionError(
                f"latent dimension {latent.dim} does not match mixture dimension {mixture.dim}"
            )
    total = schedule.steps * len(latents)
    if ledger.remaining() < total:
        raise BudgetExhaustedError(
            f"denoise needs {total} NFEs but only {ledger.remaining()} of {ledger.budget} remain"
        )
    for _ in latents:
        ledger.charge("denoise", schedule.steps)
    x1 = np.stack([latent.values for latent in latents])
    out = _kernels.heun_denoise_batch(
        x1, schedule.steps, mixture.weights, mixture.means, mixture.covs,
        schedule.beta_min, schedule.beta_max, schedule.t_min,
    )
    out = np.asarray(out)
    return [Sample.vector(out[i], producer="toy-gmm") for i in range(len(latents))]


class ToySampler:
    """Search-facing adapter holding the mixture and schedule parameters."""

    producer = "toy-gmm"

    def __init__(self, mixture: GaussianMixture, beta_min: float = 0.1,
                 beta_max: float = 20.0, t_min: float = 1e-3) -> None:
        self.mixture = mixture
        self.beta_min = beta_min
        self.beta_max = beta_max
        self.t_min = t_min

    @property
    def latent_dim(self) -> int:
        return self.mixture.dim

    def schedule(self, steps: int) -> VpSchedule:
        return VpSchedule(beta_min=self.beta_min, beta_max=self.beta_max,
                          steps=steps, t_min=self.t_min)

    def denoise(self, latent: Latent, steps: int, ledger: NfeLedger) -> Sample:
        return denoise(self.mixture, latent, self.schedule(steps), ledger)

    def denoise_batch(self, latents: Sequence[Latent], steps: int,
                      ledger: NfeLedger) -> list[Sample]:
        return denoise_batch(self.mixture, latents, self.schedule(steps), ledger)
