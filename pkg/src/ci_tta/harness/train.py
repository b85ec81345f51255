"""Minibatch SGD fitter for the builtin MLP, just big enough for desk-scale runs.

Trains softmax cross-entropy over the CITM architecture (affine layers with
ReLU between them) on flattened raw pixels, deterministically from a seed.
This exists to produce a working classifier for the synthetic experiments;
anything serious should be attached through the external backend protocol.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..deform import keyed_generator
from ..errors import InvalidArgumentError, TrainingFailure
from ..imgcore import read_image
from ..inference import save_builtin_model
from .manifest import Manifest

_TRAIN_TAG = 0x5452414E


@dataclass(frozen=True)
class TrainReport:
    final_loss: float
    train_accuracy: float
    epochs: int
    model_path: str | None


def _forward(x: np.ndarray, weights: list[np.ndarray], biases: list[np.ndarray]) -> list[np.ndarray]:
    acts = [x]
    for w, b in zip(weights[:-1], biases[:-1]):
        acts.append(np.maximum(acts[-1] @ w.T + b, 0.0))
    acts.append(acts[-1] @ weights[-1].T + biases[-1])
    return acts


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def train_tiny_model(
    manifest: Manifest,
    layers: list[int],
    epochs: int,
    lr: float,
    seed: int,
    out_path: str | Path | None = None,
    batch_size: int = 32,
) -> TrainReport:
    """Fit an MLP with the given hidden sizes on a manifest; optionally save CITM.

    Deterministic from (manifest, layers, epochs, lr, seed, batch_size): the
    same inputs always produce identical weight bytes. Raises TrainingFailure
    with the failing epoch when the loss goes non-finite.
    """
    if len(manifest) == 0:
        raise InvalidArgumentError("manifest is empty")
    if epochs < 0 or batch_size < 1:
        raise InvalidArgumentError("epochs must be >= 0 and batch_size >= 1")
    images = []
    labels = []
    for path, label in manifest:
        images.append(read_image(path).ravel())
        labels.append(label)
    dims = {img.size for img in images}
    if len(dims) != 1:
        raise InvalidArgumentError(f"images must share one shape, got flattened sizes {sorted(dims)}")
    x_all = np.stack(images)
    y_all = np.asarray(labels, dtype=np.int64)
    n, in_dim = x_all.shape
    num_classes = manifest.num_classes
    if num_classes < 2:
        raise InvalidArgumentError(f"need >= 2 classes, got {num_classes}")

    rng = keyed_generator(seed, _TRAIN_TAG)
    sizes = [in_dim, *layers, num_classes]
    weights = [
        rng.standard_normal((sizes[i + 1], sizes[i])) * np.sqrt(2.0 / sizes[i])
        for i in range(len(sizes) - 1)
    ]
    biases = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]

    # divergence is detected explicitly via the loss, so let overflow produce
    # inf/nan silently instead of warning
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = order[start : start + batch_size]
                xb, yb = x_all[idx], y_all[idx]
                acts = _forward(xb, weights, biases)
                probs = _softmax_rows(acts[-1])
                loss = float(-np.log(np.maximum(probs[np.arange(len(idx)), yb], 1e-300)).mean())
                if not np.isfinite(loss):
                    raise TrainingFailure(f"loss diverged at epoch {epoch} (lr={lr})")
                grad = probs
                grad[np.arange(len(idx)), yb] -= 1.0
                grad /= len(idx)
                for layer in range(len(weights) - 1, -1, -1):
                    d_w = grad.T @ acts[layer]
                    d_b = grad.sum(axis=0)
                    if layer > 0:
                        grad = (grad @ weights[layer]) * (acts[layer] > 0)
                    weights[layer] = weights[layer] - lr * d_w
                    biases[layer] = biases[layer] - lr * d_b

        final_logits = _forward(x_all, weights, biases)[-1]
        final_probs = _softmax_rows(final_logits)
        final_loss = float(-np.log(np.maximum(final_probs[np.arange(n), y_all], 1e-300)).mean())
    if not np.isfinite(final_loss):
        raise TrainingFailure(f"final loss is non-finite (lr={lr})")
    accuracy = float((final_logits.argmax(axis=1) == y_all).mean())
    if out_path is not None:
        save_builtin_model(out_path, list(zip(weights, biases)))
    return TrainReport(
        final_loss=final_loss,
        train_accuracy=accuracy,
        epochs=epochs,
        model_path=str(out_path) if out_path is not None else None,
    )
