"""Verifier layer: dual-prompt contrastive scoring of generated samples.

A verifier maps (sample, condition) to a scalar quality. Here the scalar is
a weighted contrast between two cosine similarities — sample vs an
"INFRARED photo" prompt minus sample vs a "GRAYSCALE photo" prompt — so
that desaturated look-alikes are penalized even when superficially close.
Scores are stored unscaled; the conventional ×10 display factor is applied
only at presentation time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .core import InvalidParameterError, Sample
from .toydiff import GaussianMixture

IR_TEMPLATE = "An INFRARED photo of {caption}."
GRAY_TEMPLATE = "A GRAYSCALE photo of {caption}."

_IR_PREFIX = "An INFRARED photo of "
_GRAY_PREFIX = "A GRAYSCALE photo of "


class DegenerateEmbeddingError(ValueError):
    """An embedding with zero norm: a broken backend, not a score of 0."""


class BackendError(RuntimeError):
    """An embedding backend failed; message carries the backend identity."""


@dataclass(frozen=True)
class PromptPair:
    """Caption plus its two templated prompts (verbatim substitution)."""

    caption: str
    ir_prompt: str
    gray_prompt: str

    def __post_init__(self) -> None:
        if self.ir_prompt != IR_TEMPLATE.format(caption=self.caption):
            raise InvalidParameterError(f"ir_prompt does not match template for caption {self.caption!r}")
        if self.gray_prompt != GRAY_TEMPLATE.format(caption=self.caption):
            raise InvalidParameterError(f"gray_prompt does not match template for caption {self.caption!r}")

    @classmethod
    def from_caption(cls, caption: str) -> "PromptPair":
        return cls(
            caption=caption,
            ir_prompt=IR_TEMPLATE.format(caption=caption),
            gray_prompt=GRAY_TEMPLATE.format(caption=caption),
        )


@dataclass(frozen=True)
class ScoreWeights:
    """Contrast weight alpha in [0, 1] plus the display-only scale factor."""

    alpha: float = 0.5
    report_scale: float = 10.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha <= 1.0):
            raise InvalidParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.report_scale <= 0.0:
            raise InvalidParameterError(f"report_scale must be positive, got {self.report_scale}")


@dataclass(frozen=True)
class ScorePair:
    """The two cosine similarities entering the combined score."""

    ir_similarity: float
    gray_similarity: float

    def __post_init__(self) -> None:
        for name, v in (("ir_similarity", self.ir_similarity), ("gray_similarity", self.gray_similarity)):
            if not (-1.0 <= v <= 1.0):
                raise InvalidParameterError(f"{name} must be a cosine in [-1, 1], got {v}")


class EmbeddingBackend(Protocol):
    """Paired sample/text encoders sharing one embedding space."""

    name: str
    embed_dim: int
    reentrant: bool

    def embed_sample(self, sample: Sample) -> np.ndarray: ...

    def embed_text(self, text: str) -> np.ndarray: ...


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, clipped to [-1, 1]; zero-norm inputs are an error."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidParameterError(f"cosine needs equal-length vectors, got {a.shape} and {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateEmbeddingError("zero-norm embedding (degenerate backend output)")
    return float(np.clip(float(a @ b) / (na * nb), -1.0, 1.0))


def ir_score(pair: ScorePair, weights: ScoreWeights) -> float:
    """Combined contrast (1-alpha)*ir - alpha*gray, unscaled."""
    return (1.0 - weights.alpha) * pair.ir_similarity - weights.alpha * pair.gray_similarity


def score_sample(backend: EmbeddingBackend, sample: Sample, prompts: PromptPair,
                 weights: ScoreWeights) -> tuple[ScorePair, float]:
    """Embed the sample and both prompts; return similarities and combined score."""
    try:
        e_img = backend.embed_sample(sample)
        e_ir = backend.embed_text(prompts.ir_prompt)
        e_gray = backend.embed_text(prompts.gray_prompt)
    except DegenerateEmbeddingError:
        raise
    except Exception as exc:
        raise BackendError(f"backend {backend.name!r} failed: {exc}") from exc
    pair = ScorePair(
        ir_similarity=cosine(e_ir, e_img),
        gray_similarity=cosine(e_gray, e_img),
    )
    return pair, ir_score(pair, weights)


def _lift(x: np.ndarray) -> np.ndarray:
    """Affine lift x -> (x, 1) then normalize; never zero-norm."""
    v = np.concatenate([np.asarray(x, dtype=np.float64), [1.0]])
    return v / float(np.linalg.norm(v))


class ToyEmbeddingBackend:
    """Desk-scale embedding backend over the toy mixture's sample space.

    Samples are lifted through a fixed affine map and normalized; the
    INFRARED template maps to the lifted mean of the target component and
    the GRAYSCALE template to the lifted mean of the distractor, so the
    combined score rewards proximity to the target mode and penalizes
    proximity to the distractor. Text outside the two templates is refused.
    """

    reentrant = True

    def __init__(self, mixture: GaussianMixture, target: int, distractor: int) -> None:
        n = mixture.n_components
        for label, idx in (("target", target), ("distractor", distractor)):
            if not (0 <= idx < n):
                raise InvalidParameterError(f"{label} component {idx} out of range [0, {n})")
        if target == distractor:
            raise InvalidParameterError("target and distractor must be distinct components")
        self.mixture = mixture
        self.target = target
        self.distractor = distractor
        self.embed_dim = mixture.dim + 1
        self.name = f"toy-embed[target={target},distractor={distractor}]"
        self._ir_vec = _lift(mixture.means[target])
        self._gray_vec = _lift(mixture.means[distractor])

    def embed_sample(self, sample: Sample) -> np.ndarray:
        if sample.is_image:
            raise InvalidParameterError("toy backend embeds vector samples only")
        if sample.values.shape[0] != self.mixture.dim:
            raise InvalidParameterError(
                f"sample dimension {sample.values.shape[0]} does not match mixture dimension {self.mixture.dim}"
            )
        return _lift(sample.values)

    def embed_text(self, text: str) -> np.ndarray:
        if text.startswith(_IR_PREFIX) and text.endswith("."):
            return self._ir_vec.copy()
        if text.startswith(_GRAY_PREFIX) and text.endswith("."):
            return self._gray_vec.copy()
        raise InvalidParameterError(f"toy text space covers only the two prompt templates, got {text!r}")


class ContrastVerifier:
    """Bundles backend, prompts, and weights into the callable used by search."""

    def __init__(self, backend: EmbeddingBackend, prompts: PromptPair,
                 weights: ScoreWeights) -> None:
        self.backend = backend
        self.prompts = prompts
        self.weights = weights
        self.name = f"irscore[{backend.name}]"

    def score(self, sample: Sample) -> dict[str, float]:
        pair, combined = score_sample(self.backend, sample, self.prompts, self.weights)
        return {
            "ir_similarity": pair.ir_similarity,
            "gray_similarity": pair.gray_similarity,
            "combined": combined,
        }
