"""End-to-end inference: augment, predict, filter, aggregate.

One image fans out into the original view plus N deformed variants, every
view is classified, low-confidence views are dropped, and the survivors are
averaged (falling back to the original view's distribution when nothing
survives). Results are a pure function of (image, weights, config, seed,
image_id): per-view random streams make worker count and scheduling
irrelevant.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .deform import DeformationConfig, make_variants
from .ensemble import EnsembleDecision, ScoredPrediction, aggregate, filter_by_confidence, softmax
from .errors import BackendFailure, InvalidArgumentError
from .imgcore import read_image
from .inference import Backend

DEFAULT_N_VARIANTS = 100


@dataclass(frozen=True)
class PipelineConfig:
    """Inference-time configuration; defaults: N=100 variants, 4x4 grid, tau=0.7."""

    n_variants: int = DEFAULT_N_VARIANTS
    deform: DeformationConfig = field(default_factory=DeformationConfig)
    tau: float = 0.7
    filtering_enabled: bool = True
    seed: int = 0
    batch_chunk: int | None = None

    def __post_init__(self) -> None:
        if self.n_variants < 0:
            raise InvalidArgumentError(f"n_variants must be >= 0, got {self.n_variants}")
        if not 0.0 <= self.tau <= 1.0:
            raise InvalidArgumentError(f"tau must be in [0, 1], got {self.tau}")
        if self.batch_chunk is not None and self.batch_chunk < 1:
            raise InvalidArgumentError(f"batch_chunk must be >= 1, got {self.batch_chunk}")


@dataclass
class ImageResult:
    """Outcome for one image: decision plus per-view diagnostics.

    per_view_confidences[0] and per_view_classes[0] describe the original
    view; entries 1..N the variants. ``error`` is set (and ``decision`` is
    None) when the image could not be evaluated.
    """

    image_id: int
    decision: EnsembleDecision | None
    per_view_confidences: np.ndarray
    per_view_classes: np.ndarray
    elapsed: float
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _chunked(items: list, size: int | None) -> Iterable[list]:
    if size is None or size >= len(items):
        yield items
        return
    for start in range(0, len(items), size):
        yield items[start : start + size]


def score_views(
    img: np.ndarray, backend: Backend, cfg: PipelineConfig, image_id: int
) -> list[ScoredPrediction]:
    """Classify the original view and its N variants; view j=0 is the original."""
    variants = make_variants(img, cfg.n_variants, cfg.deform, cfg.seed, image_id)
    views = [img] + variants
    logits: list[np.ndarray] = []
    for chunk in _chunked(views, cfg.batch_chunk):
        logits.extend(backend.predict_batch(chunk))
    return [ScoredPrediction.from_probs(softmax(z), j) for j, z in enumerate(logits)]


def decide(preds: list[ScoredPrediction], cfg: PipelineConfig) -> EnsembleDecision:
    """Filter at cfg.tau (when enabled) and aggregate; preds[0] is the fallback."""
    original = preds[0]
    retained = filter_by_confidence(preds, cfg.tau) if cfg.filtering_enabled else list(preds)
    return aggregate(retained, original)


def result_from_predictions(
    preds: list[ScoredPrediction], cfg: PipelineConfig, image_id: int, elapsed: float = 0.0
) -> ImageResult:
    decision = decide(preds, cfg)
    return ImageResult(
        image_id=image_id,
        decision=decision,
        per_view_confidences=np.array([p.confidence for p in preds]),
        per_view_classes=np.array([int(np.argmax(p.probs)) for p in preds]),
        elapsed=elapsed,
    )


def _error_result(image_id: int, message: str, elapsed: float) -> ImageResult:
    return ImageResult(
        image_id=image_id,
        decision=None,
        per_view_confidences=np.zeros(0),
        per_view_classes=np.zeros(0, dtype=np.int64),
        elapsed=elapsed,
        error=message,
    )


def infer_one(img: np.ndarray, backend: Backend, cfg: PipelineConfig, image_id: int) -> ImageResult:
    """Run the four-stage pipeline on one image.

    A backend failure aborts this image and is reported as an error result
    rather than raised, so dataset runs can continue.
    """
    start = time.perf_counter()
    try:
        preds = score_views(img, backend, cfg, image_id)
    except BackendFailure as exc:
        return _error_result(image_id, f"backend failure: {exc}", time.perf_counter() - start)
    return result_from_predictions(preds, cfg, image_id, time.perf_counter() - start)


def content_hash_id(path: str) -> int:
    """Stable (u64) id from file content, for manifest-order-independent keying."""
    import hashlib

    digest = hashlib.blake2b(open(path, "rb").read(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def infer_dataset(
    entries: Sequence[tuple[str, int]],
    backend: Backend,
    cfg: PipelineConfig,
    workers: int = 1,
    hash_ids: bool = False,
) -> tuple[list[ImageResult], dict]:
    """Evaluate every manifest entry; results stay in manifest order.

    By default image_id is the entry's index in the manifest (so subsetting a
    manifest changes ids); with hash_ids, ids come from image file content.
    Unreadable images become error entries and the run continues.
    """
    entries = list(entries)

    def run_one(index: int) -> ImageResult:
        path, _label = entries[index]
        start = time.perf_counter()
        try:
            img = read_image(path)
            image_id = content_hash_id(path) if hash_ids else index
        except Exception as exc:  # unreadable or malformed image
            return _error_result(index, f"cannot read {path}: {exc}", time.perf_counter() - start)
        try:
            return infer_one(img, backend, cfg, image_id)
        except InvalidArgumentError as exc:  # e.g. shape mismatch with the backend
            return _error_result(index, f"cannot evaluate {path}: {exc}", time.perf_counter() - start)

    start = time.perf_counter()
    if workers <= 1 or len(entries) <= 1:
        results = [run_one(i) for i in range(len(entries))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, range(len(entries))))
    summary = summarize(results, entries)
    summary["elapsed"] = time.perf_counter() - start
    return results, summary


def summarize(results: list[ImageResult], entries: Sequence[tuple[str, int]]) -> dict:
    """Top-1 accuracy over evaluated images, plus retention statistics."""
    evaluated = 0
    correct = 0
    retained_total = 0
    fallbacks = 0
    for result, (_path, label) in zip(results, entries):
        if not result.ok:
            continue
        evaluated += 1
        if result.decision.predicted_class == label:
            correct += 1
        retained_total += result.decision.retained_count
        fallbacks += 1 if result.decision.fallback_used else 0
    return {
        "total": len(results),
        "evaluated": evaluated,
        "skipped": len(results) - evaluated,
        "correct": correct,
        "accuracy": (correct / evaluated) if evaluated else None,
        "mean_retained": (retained_total / evaluated) if evaluated else None,
        "fallback_rate": (fallbacks / evaluated) if evaluated else None,
    }


def with_tau(cfg: PipelineConfig, tau: float) -> PipelineConfig:
    return replace(cfg, tau=tau)


def with_sigma(cfg: PipelineConfig, sigma: float) -> PipelineConfig:
    return replace(cfg, deform=replace(cfg.deform, sigma=sigma))


def with_filtering(cfg: PipelineConfig, enabled: bool) -> PipelineConfig:
    return replace(cfg, filtering_enabled=enabled)
