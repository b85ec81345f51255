"""Softmax probabilities, confidence scoring, threshold filtering, and averaging.

The decision rule: every view (the original image is view 0, variants are
1..N) yields a probability distribution and a confidence equal to its maximum
class probability. Views with confidence >= tau are retained; the final
distribution is the plain arithmetic mean of the retained ones. If nothing
survives the threshold, the original view's distribution is used unchanged,
so a valid output exists in all circumstances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shift stabilized softmax; sums to 1 within 1e-9."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size < 1:
        raise InvalidArgumentError(f"logits must be a nonempty 1-D vector, got shape {z.shape}")
    if not np.isfinite(z).all():
        raise InvalidArgumentError("logits contain non-finite values")
    shifted = np.exp(z - z.max())
    return shifted / shifted.sum()


def confidence(probs: np.ndarray) -> float:
    """Maximum class probability of a distribution."""
    return float(np.max(probs))


@dataclass(frozen=True)
class ScoredPrediction:
    """One view's distribution with its confidence; source_index 0 is the original."""

    probs: np.ndarray
    confidence: float
    source_index: int

    @classmethod
    def from_probs(cls, probs: np.ndarray, source_index: int) -> "ScoredPrediction":
        p = np.asarray(probs, dtype=np.float64)
        return cls(probs=p, confidence=confidence(p), source_index=source_index)


@dataclass(frozen=True)
class EnsembleDecision:
    """Final distribution, class, and provenance of one ensembled prediction."""

    final_probs: np.ndarray
    predicted_class: int
    retained_count: int
    fallback_used: bool


def filter_by_confidence(preds: list[ScoredPrediction], tau: float) -> list[ScoredPrediction]:
    """Keep predictions with confidence >= tau, preserving input order."""
    if not 0.0 <= tau <= 1.0:
        raise InvalidArgumentError(f"tau must be in [0, 1], got {tau}")
    return [p for p in preds if p.confidence >= tau]


def aggregate(retained: list[ScoredPrediction], original: ScoredPrediction) -> EnsembleDecision:
    """Average the retained distributions; fall back to the original if none.

    The mean is accumulated in input order (source_index order) so results
    never depend on scheduling. A set of identical distributions averages to
    that distribution exactly, and the mean is renormalized only when float
    drift pushes its sum more than 1e-12 away from 1, so degenerate cases
    (single view, all views identical, fallback) are bit-exact. Argmax ties
    break toward the lowest class index.
    """
    if not retained:
        probs = original.probs.copy()
        return EnsembleDecision(
            final_probs=probs,
            predicted_class=int(np.argmax(probs)),
            retained_count=0,
            fallback_used=True,
        )
    first = retained[0].probs
    if all(np.array_equal(p.probs, first) for p in retained[1:]):
        mean = first.copy()
    else:
        total = np.zeros_like(first)
        for pred in retained:
            total += pred.probs
        mean = total / len(retained)
    drift = float(mean.sum())
    if abs(drift - 1.0) > 1e-12:
        mean = mean / drift
    return EnsembleDecision(
        final_probs=mean,
        predicted_class=int(np.argmax(mean)),
        retained_count=len(retained),
        fallback_used=False,
    )
