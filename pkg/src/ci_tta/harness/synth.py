"""Synthetic two-domain shape dataset: class = shape, domain = texture.

Each image is 32x32x1: a filled disk, square, or triangle at random position
and scale. The source domain adds only low-amplitude pixel noise; the shifted
domain overlays a high-frequency sinusoidal stripe pattern on top of the same
kind of rendering. A texture-leaning model fit on source therefore loses
accuracy on shifted while shape (the class) is unchanged, which is exactly
the tension deformation-based test-time augmentation targets.

Generation is bit-reproducible from the seed; images are written as IMGF.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..deform import keyed_generator
from ..errors import InvalidArgumentError
from ..imgcore import write_imgf
from .manifest import Manifest, save_manifest

IMAGE_SIZE = 32
_SUPERSAMPLE = 4
_SYNTH_TAG = 0x53594E54  # stream namespace, keeps synth draws disjoint from warps
SHAPE_NAMES = ("disk", "square", "triangle")


def _shape_mask(label: int, cx: float, cy: float, size: float) -> np.ndarray:
    """Anti-aliased coverage of one shape on the IMAGE_SIZE grid."""
    n = IMAGE_SIZE * _SUPERSAMPLE
    coords = (np.arange(n) + 0.5) / _SUPERSAMPLE - 0.5
    px, py = np.meshgrid(coords, coords, indexing="xy")
    if label == 0:  # disk of radius size
        inside = (px - cx) ** 2 + (py - cy) ** 2 <= size**2
    elif label == 1:  # square of half-side 0.85*size
        half = 0.85 * size
        inside = np.maximum(np.abs(px - cx), np.abs(py - cy)) <= half
    elif label == 2:  # upright equilateral triangle, circumradius 1.25*size
        radius = 1.25 * size
        angles = np.deg2rad([-90.0, 30.0, 150.0])
        vx = cx + radius * np.cos(angles)
        vy = cy + radius * np.sin(angles)
        inside = np.ones_like(px, dtype=bool)
        for i in range(3):
            j = (i + 1) % 3
            cross = (vx[j] - vx[i]) * (py - vy[i]) - (vy[j] - vy[i]) * (px - vx[i])
            inside &= cross >= 0
    else:
        raise InvalidArgumentError(f"no shape for label {label}")
    block = inside.reshape(IMAGE_SIZE, _SUPERSAMPLE, IMAGE_SIZE, _SUPERSAMPLE)
    return block.mean(axis=(1, 3))


def _render(label: int, domain: int, rng: np.random.Generator) -> np.ndarray:
    size = rng.uniform(5.0, 8.0)
    margin = 1.25 * size + 1.0
    cx = rng.uniform(margin, IMAGE_SIZE - 1 - margin)
    cy = rng.uniform(margin, IMAGE_SIZE - 1 - margin)
    fg = rng.uniform(0.70, 0.85)
    bg = rng.uniform(0.15, 0.30)
    img = bg + (fg - bg) * _shape_mask(label, cx, cy, size)
    if domain == 1:  # high-frequency stripe texture
        freq = rng.uniform(0.25, 0.45)
        theta = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        xs, ys = np.meshgrid(np.arange(IMAGE_SIZE), np.arange(IMAGE_SIZE), indexing="xy")
        ramp = xs * np.cos(theta) + ys * np.sin(theta)
        img = img + 0.18 * np.sin(2.0 * np.pi * freq * ramp + phase)
    img = img + rng.normal(0.0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0)[:, :, None]


def generate_synthetic_dg(
    out_dir: str | Path,
    classes: int = 3,
    per_domain: int = 30,
    seed: int = 0,
) -> tuple[Manifest, Manifest]:
    """Render the source and shifted domains and write manifests.

    Produces per_domain images per domain, label i % classes, under
    out_dir/source and out_dir/shifted, plus source.csv and shifted.csv with
    paths relative to out_dir. Returns both manifests with resolved paths.
    """
    if per_domain < 1:
        raise InvalidArgumentError(f"per_domain must be >= 1, got {per_domain}")
    if not 1 <= classes <= len(SHAPE_NAMES):
        raise InvalidArgumentError(f"classes must be in [1, {len(SHAPE_NAMES)}], got {classes}")
    out_dir = Path(out_dir)
    manifests: list[Manifest] = []
    for domain, name in enumerate(("source", "shifted")):
        domain_dir = out_dir / name
        domain_dir.mkdir(parents=True, exist_ok=True)
        entries: list[tuple[str, int]] = []
        for i in range(per_domain):
            label = i % classes
            rng = keyed_generator(seed, _SYNTH_TAG, domain, i)
            img = _render(label, domain, rng)
            path = domain_dir / f"img_{i:05d}.imgf"
            write_imgf(path, img)
            entries.append((str(path), label))
        manifest = Manifest(tuple(entries))
        save_manifest(out_dir / f"{name}.csv", manifest, relative_to=out_dir)
        manifests.append(manifest)
    return manifests[0], manifests[1]
