"""Shared domain types: noise latents, samples, seeds, and NFE accounting.

Every type here is an immutable value (arrays are marked read-only); the one
mutable object, :class:`NfeLedger`, is meant to have a single owner per search
run. All randomness flows through counter-based Philox streams keyed by a
64-bit seed, so identical seeds give identical draws regardless of call order
or scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

MASK64 = (1 << 64) - 1

# Philox key domains keep prior draws and perturbation noise on distinct
# streams even when the 64-bit seeds coincide.
_DOMAIN_PRIOR = 0
_DOMAIN_PERTURB = 1


class InvalidDimensionError(ValueError):
    """Latent/sample dimension is zero, negative, or inconsistent."""


class InvalidParameterError(ValueError):
    """A numeric parameter is outside its legal range."""


class BudgetExhaustedError(RuntimeError):
    """An operation would push the NFE ledger past its budget."""


def _rng(seed: int, domain: int) -> np.random.Generator:
    key = (domain << 64) | (seed & MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def splitmix64(x: int) -> int:
    """One splitmix64 step; the standard 64-bit bijective mixer."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(base: int, *parts: int) -> int:
    """Deterministically derive a child seed from a base seed and indices."""
    s = splitmix64(base & MASK64)
    for p in parts:
        s = splitmix64(s ^ (p & MASK64))
    return s


def _frozen(values: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PriorOrigin:
    kind: str = "prior"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "prior"}


@dataclass(frozen=True)
class NeighborhoodOrigin:
    parent_seed: int
    lam: float
    kind: str = "neighborhood"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "neighborhood", "parent_seed": self.parent_seed, "lambda": self.lam}


def _origin_from_dict(d: dict[str, Any]) -> PriorOrigin | NeighborhoodOrigin:
    if d["kind"] == "prior":
        return PriorOrigin()
    if d["kind"] == "neighborhood":
        return NeighborhoodOrigin(parent_seed=int(d["parent_seed"]), lam=float(d["lambda"]))
    raise InvalidParameterError(f"unknown latent origin kind {d['kind']!r}")


@dataclass(frozen=True, eq=False)
class Latent:
    """A point in the sampler's noise space with seed provenance."""

    values: np.ndarray
    seed: int
    origin: PriorOrigin | NeighborhoodOrigin

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.ndim != 1 or self.values.shape[0] == 0:
            raise InvalidDimensionError(f"latent must be a nonempty vector, got shape {self.values.shape}")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def to_dict(self) -> dict[str, Any]:
        return {"values": self.values.tolist(), "seed": self.seed, "origin": self.origin.to_dict()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Latent":
        return cls(values=np.asarray(d["values"], dtype=np.float64), seed=int(d["seed"]),
                   origin=_origin_from_dict(d["origin"]))


@dataclass(frozen=True, eq=False)
class Sample:
    """A generated sample: a point in R^m (toy) or an h×w grayscale image."""

    values: np.ndarray
    producer: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen(self.values))

    @classmethod
    def vector(cls, values: np.ndarray, producer: str) -> "Sample":
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1:
            raise InvalidDimensionError(f"vector sample must be 1-d, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidParameterError("vector sample contains non-finite values")
        return cls(values=arr, producer=producer)

    @classmethod
    def image(cls, values: np.ndarray, producer: str) -> "Sample":
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidDimensionError(f"image sample must be 2-d, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise InvalidParameterError("image sample intensities must lie in [0, 1]")
        return cls(values=arr, producer=producer)

    @property
    def is_image(self) -> bool:
        return self.values.ndim == 2

    def to_dict(self) -> dict[str, Any]:
        return {"values": self.values.tolist(), "producer": self.producer}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Sample":
        arr = np.asarray(d["values"], dtype=np.float64)
        if arr.ndim == 2:
            return cls.image(arr, d["producer"])
        return cls.vector(arr, d["producer"])


class NfeLedger:
    """Budgeted counter of denoiser forward passes.

    ``spent`` always equals the sum of per-call counts, and a charge that
    would exceed ``budget`` refuses atomically before any work happens.
    Zero-count entries (see :meth:`note`) record non-NFE work such as
    verifier calls without touching the budget.
    """

    def __init__(self, budget: int) -> None:
        if budget < 0:
            raise InvalidParameterError(f"budget must be non-negative, got {budget}")
        self.budget = int(budget)
        self._spent = 0
        self._per_call: list[tuple[str, int]] = []

    @property
    def spent(self) -> int:
        return self._spent

    @property
    def per_call(self) -> tuple[tuple[str, int], ...]:
        return tuple(self._per_call)

    def remaining(self) -> int:
        return self.budget - self._spent

    def charge(self, label: str, count: int) -> None:
        if count <= 0:
            raise InvalidParameterError(f"charge count must be positive, got {count}")
        if self._spent + count > self.budget:
            raise BudgetExhaustedError(
                f"charging {count} NFEs ({label}) would exceed budget: "
                f"spent {self._spent} of {self.budget}"
            )
        self._spent += count
        self._per_call.append((label, count))

    def note(self, label: str) -> None:
        """Record zero-cost work (e.g. one verifier call) in the call log."""
        self._per_call.append((label, 0))

    def to_dict(self) -> dict[str, Any]:
        return {"budget": self.budget, "spent": self._spent,
                "per_call": [[label, count] for label, count in self._per_call]}


@dataclass(frozen=True, eq=False)
class SampleTrace:
    """One evaluated candidate: latent, sample, verifier scores, NFE cost."""

    latent: Latent
    sample: Sample
    scores: dict[str, float]
    nfe_cost: int

    def __post_init__(self) -> None:
        if self.nfe_cost <= 0:
            raise InvalidParameterError(f"nfe_cost must be positive, got {self.nfe_cost}")

    def to_dict(self) -> dict[str, Any]:
        return {"latent": self.latent.to_dict(), "sample": self.sample.to_dict(),
                "scores": dict(self.scores), "nfe_cost": self.nfe_cost}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SampleTrace":
        return cls(latent=Latent.from_dict(d["latent"]), sample=Sample.from_dict(d["sample"]),
                   scores={k: float(v) for k, v in d["scores"].items()}, nfe_cost=int(d["nfe_cost"]))


def sample_prior(seed: int, d: int) -> Latent:
    """Draw a d-dimensional standard-normal latent from the stream keyed by seed."""
    if d <= 0:
        raise InvalidDimensionError(f"latent dimension must be positive, got {d}")
    values = _rng(seed, _DOMAIN_PRIOR).standard_normal(d)
    return Latent(values=values, seed=seed & MASK64, origin=PriorOrigin())


def perturb(pivot: Latent, lam: float, seed: int) -> Latent:
    """Spherical step in noise space: sqrt(1-lam^2)*pivot + lam*eps.

    Keeps the standard-normal marginal intact (the two weights are a unit
    vector), so neighborhoods never drift off the prior's typical set.
    """
    if not (0.0 < lam < 1.0):
        raise InvalidParameterError(f"lambda must lie in (0, 1), got {lam}")
    eps = _rng(seed, _DOMAIN_PERTURB).standard_normal(pivot.dim)
    values = math.sqrt(1.0 - lam * lam) * pivot.values + lam * eps
    return Latent(values=values, seed=seed & MASK64,
                  origin=NeighborhoodOrigin(parent_seed=pivot.seed, lam=lam))


def prior_batch(seeds: Sequence[int], d: int) -> list[Latent]:
    return [sample_prior(s, d) for s in seeds]
