"""Noise-space search: naive sampling, random search, zero-order search.

Each strategy maps (sampler, verifier, candidate latents) to the best latent
by combined score, with exact NFE bookkeeping: random search costs
N * steps, zero-order costs k * N * steps (the pivot is re-denoised every
iteration unless `cache_pivot` is set, which changes the ledger but never
the selection). Candidate seed streams are nested so scaling in N is
paired and monotone by construction; ties break toward the lowest
candidate index, making results independent of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Protocol, Sequence

from .core import (
    BudgetExhaustedError,
    InvalidParameterError,
    Latent,
    NfeLedger,
    Sample,
    SampleTrace,
    derive_seed,
    perturb,
    sample_prior,
)


class Strategy(str, Enum):
    NAIVE = "naive"
    RANDOM = "random"
    ZERO_ORDER = "zero_order"


class SamplerLike(Protocol):
    latent_dim: int

    def denoise(self, latent: Latent, steps: int, ledger: NfeLedger) -> Sample: ...

    def denoise_batch(self, latents: Sequence[Latent], steps: int,
                      ledger: NfeLedger) -> list[Sample]: ...


class VerifierLike(Protocol):
    def score(self, sample: Sample) -> dict[str, float]: ...


@dataclass(frozen=True)
class SearchConfig:
    strategy: Strategy
    steps: int
    n_candidates: int = 1
    iterations: int = 1
    lam: float = 0.25
    base_seed: int = 0
    cache_pivot: bool = False
    name: str = ""

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise InvalidParameterError(f"steps must be positive, got {self.steps}")
        if self.n_candidates < 1 or self.iterations < 1:
            raise InvalidParameterError("n_candidates and iterations must be positive")
        if self.strategy is Strategy.NAIVE and (self.n_candidates != 1 or self.iterations != 1):
            raise InvalidParameterError("naive sampling implies n_candidates=1 and iterations=1")
        if self.strategy is Strategy.RANDOM and self.iterations != 1:
            raise InvalidParameterError("random search has no iteration axis; set iterations=1")
        if self.strategy is Strategy.ZERO_ORDER:
            if self.n_candidates < 2:
                raise InvalidParameterError("zero-order search needs n_candidates >= 2")
            if not (0.0 < self.lam < 1.0):
                raise InvalidParameterError(f"lambda must lie in (0, 1), got {self.lam}")
        if not self.name:
            object.__setattr__(self, "name", self.default_name())

    def default_name(self) -> str:
        if self.strategy is Strategy.NAIVE:
            return "naive"
        if self.strategy is Strategy.RANDOM:
            return f"random-n{self.n_candidates}"
        return f"zero_order-k{self.iterations}-n{self.n_candidates}"

    @property
    def required_nfes(self) -> int:
        """Closed-form budget: N*steps (naive/random), k*N*steps (zero-order)."""
        if self.strategy is Strategy.ZERO_ORDER:
            if self.cache_pivot:
                n_denoised = self.n_candidates + (self.iterations - 1) * (self.n_candidates - 1)
                return n_denoised * self.steps
            return self.iterations * self.n_candidates * self.steps
        return self.n_candidates * self.steps

    def with_seed(self, base_seed: int) -> "SearchConfig":
        return replace(self, base_seed=base_seed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy.value,
            "steps": self.steps,
            "n_candidates": self.n_candidates,
            "iterations": self.iterations,
            "lambda": self.lam,
            "base_seed": self.base_seed,
            "cache_pivot": self.cache_pivot,
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SearchConfig":
        return cls(
            strategy=Strategy(d["strategy"]),
            steps=int(d["steps"]),
            n_candidates=int(d.get("n_candidates", 1)),
            iterations=int(d.get("iterations", 1)),
            lam=float(d.get("lambda", 0.25)),
            base_seed=int(d.get("base_seed", 0)),
            cache_pivot=bool(d.get("cache_pivot", False)),
            name=str(d.get("name", "")),
        )


@dataclass(frozen=True, eq=False)
class IterationRecord:
    iteration: int
    candidates: tuple[SampleTrace, ...]
    selected: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "candidates": [t.to_dict() for t in self.candidates],
            "selected": self.selected,
        }


@dataclass(frozen=True, eq=False)
class SearchReport:
    best: SampleTrace
    history: tuple[IterationRecord, ...]
    ledger: NfeLedger
    config: SearchConfig

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "best": self.best.to_dict(),
            "history": [rec.to_dict() for rec in self.history],
            "ledger": self.ledger.to_dict(),
        }


def _argmax_combined(traces: Sequence[SampleTrace]) -> int:
    """Highest combined score; ties break toward the lowest index."""
    best = 0
    for i in range(1, len(traces)):
        if traces[i].scores["combined"] > traces[best].scores["combined"]:
            best = i
    return best


def _evaluate(sampler: SamplerLike, verifier: VerifierLike, latents: Sequence[Latent],
              steps: int, ledger: NfeLedger) -> list[SampleTrace]:
    samples = sampler.denoise_batch(latents, steps, ledger)
    traces = []
    for latent, sample in zip(latents, samples):
        scores = verifier.score(sample)
        ledger.note("verify")
        traces.append(SampleTrace(latent=latent, sample=sample, scores=scores, nfe_cost=steps))
    return traces


def _require_budget(config: SearchConfig, ledger: NfeLedger) -> None:
    need = config.required_nfes
    if ledger.remaining() < need:
        raise BudgetExhaustedError(
            f"{config.strategy.value} needs {need} NFEs but only "
            f"{ledger.remaining()} of {ledger.budget} remain"
        )


def random_search(sampler: SamplerLike, verifier: VerifierLike, config: SearchConfig,
                  ledger: NfeLedger) -> SearchReport:
    """Best-of-N over prior latents drawn from seeds base_seed .. base_seed+N-1."""
    if config.strategy not in (Strategy.RANDOM, Strategy.NAIVE):
        raise InvalidParameterError(f"random_search got a {config.strategy.value} config")
    _require_budget(config, ledger)
    n = config.n_candidates
    latents = [sample_prior(config.base_seed + i, sampler.latent_dim) for i in range(n)]
    traces = _evaluate(sampler, verifier, latents, config.steps, ledger)
    sel = _argmax_combined(traces)
    record = IterationRecord(iteration=0, candidates=tuple(traces), selected=sel)
    return SearchReport(best=traces[sel], history=(record,), ledger=ledger, config=config)


def naive_sample(sampler: SamplerLike, verifier: VerifierLike, config: SearchConfig,
                 ledger: NfeLedger) -> SearchReport:
    """One prior latent, one denoise, one score: the baseline row."""
    if config.strategy is not Strategy.NAIVE:
        raise InvalidParameterError(f"naive_sample got a {config.strategy.value} config")
    return random_search(sampler, verifier, config, ledger)


def zero_order_search(sampler: SamplerLike, verifier: VerifierLike, config: SearchConfig,
                      ledger: NfeLedger) -> SearchReport:
    """Iterative pivot search: each round scores the pivot plus N-1 neighbors.

    The pivot sits at candidate index 0, so lowest-index tie-breaking keeps
    it in place unless a neighbor strictly improves; pivot score is
    therefore non-decreasing across iterations.
    """
    if config.strategy is not Strategy.ZERO_ORDER:
        raise InvalidParameterError(f"zero_order_search got a {config.strategy.value} config")
    _require_budget(config, ledger)
    pivot = sample_prior(config.base_seed, sampler.latent_dim)
    pivot_trace: SampleTrace | None = None
    history: list[IterationRecord] = []
    for j in range(config.iterations):
        neighbors = [
            perturb(pivot, config.lam, derive_seed(config.base_seed, j, i))
            for i in range(1, config.n_candidates)
        ]
        if config.cache_pivot and pivot_trace is not None:
            traces = [pivot_trace] + _evaluate(sampler, verifier, neighbors, config.steps, ledger)
        else:
            traces = _evaluate(sampler, verifier, [pivot] + neighbors, config.steps, ledger)
        sel = _argmax_combined(traces)
        history.append(IterationRecord(iteration=j, candidates=tuple(traces), selected=sel))
        pivot_trace = traces[sel]
        pivot = pivot_trace.latent
    assert pivot_trace is not None
    return SearchReport(best=pivot_trace, history=tuple(history), ledger=ledger, config=config)


def run_search(sampler: SamplerLike, verifier: VerifierLike, config: SearchConfig,
               ledger: NfeLedger) -> SearchReport:
    if config.strategy is Strategy.ZERO_ORDER:
        return zero_order_search(sampler, verifier, config, ledger)
    if config.strategy is Strategy.RANDOM:
        return random_search(sampler, verifier, config, ledger)
    return naive_sample(sampler, verifier, config, ledger)
