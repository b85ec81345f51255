"""Random displacement fields (elastic and control-grid) and image warping.

The deformation strength ``sigma`` is a fraction of min(H, W): the per-axis
displacement scale in pixels is ``sigma * min(h, w)``, so the same sigma means
the same relative distortion at any resolution. Elastic fields are i.i.d.
Gaussian noise smoothed by a Gaussian kernel; grid fields draw displacements
at sparse control points and interpolate them densely. Both are zero-mean, so
variants are locally perturbed but never systematically shifted.

Randomness comes from counter-based Philox streams keyed by a
(seed, image_id, variant_index) triple, so every variant is reproducible in
isolation and generation order or worker count never changes results.
"""

from __future__ import annotations

import hashlib
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError
from .imgcore import (
    Kernel1D,
    bicubic_upsample_grid,
    gaussian_kernel,
    sample_bilinear,
    separable_blur,
    validate_image,
    write_imgf,
)

_U64 = 2**64


def keyed_generator(*parts: int) -> np.random.Generator:
    """Philox generator keyed by a BLAKE2b hash of the given integers.

    The 128-bit digest of the packed little-endian u64 parts keys a Philox4x64
    counter-based bit generator; normal draws then use numpy's ziggurat.
    Identical parts always produce bit-identical streams.
    """
    for p in parts:
        if not 0 <= p < _U64:
            raise InvalidArgumentError(f"stream key parts must be u64, got {p}")
    digest = hashlib.blake2b(struct.pack(f"<{len(parts)}Q", *parts), digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))


@dataclass(frozen=True)
class SeededStream:
    """Key of one reproducible random stream: (seed, image_id, variant_index)."""

    seed: int
    image_id: int
    variant_index: int

    def __post_init__(self) -> None:
        for name in ("seed", "image_id", "variant_index"):
            value = getattr(self, name)
            if not 0 <= value < _U64:
                raise InvalidArgumentError(f"{name} must be in [0, 2^64), got {value}")

    def generator(self) -> np.random.Generator:
        """Fresh generator for this triple; every call restarts the stream."""
        return keyed_generator(self.seed, self.image_id, self.variant_index)


@dataclass(frozen=True)
class DeformationConfig:
    """Parameters of the class-invariant deformation family.

    sigma: displacement scale as a fraction of min(H, W); 0 disables deformation.
    kappa: elastic smoothing kernel size in pixels (odd); None picks
        2*floor(0.05*min(H, W)) + 1, a correlation length of ~5% of the image.
    grid_rows/grid_cols: control grid dimensions for grid deformation.
    elastic_fraction: share of variants using elastic (vs. grid) deformation.
    rescale_after_smoothing: rescale each smoothed plane back to the target
        standard deviation so sigma keeps one meaning regardless of kappa.
    """

    sigma: float = 0.01
    kappa: int | None = None
    grid_rows: int = 4
    grid_cols: int = 4
    elastic_fraction: float = 0.5
    rescale_after_smoothing: bool = True

    def __post_init__(self) -> None:
        if not self.sigma >= 0:
            raise InvalidArgumentError(f"sigma must be >= 0, got {self.sigma}")
        if not 0.0 <= self.elastic_fraction <= 1.0:
            raise InvalidArgumentError(f"elastic_fraction must be in [0, 1], got {self.elastic_fraction}")
        if self.kappa is not None and (self.kappa < 1 or self.kappa % 2 == 0):
            raise InvalidArgumentError(f"kappa must be odd and >= 1, got {self.kappa}")
        if self.grid_rows < 2 or self.grid_cols < 2:
            raise InvalidArgumentError(
                f"control grid must be at least 2x2, got {self.grid_rows}x{self.grid_cols}"
            )

    def resolve_kappa(self, h: int, w: int) -> int:
        if self.kappa is not None:
            return self.kappa
        return 2 * int(0.05 * min(h, w)) + 1

    def smoothing_kernel(self, h: int, w: int) -> Kernel1D:
        kappa = self.resolve_kappa(h, w)
        return gaussian_kernel(kappa, kappa / 4.0)


@dataclass(frozen=True)
class DisplacementField:
    """Per-pixel (dx, dy) offsets in pixels for an H x W plane."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self) -> None:
        dx = np.asarray(self.dx, dtype=np.float64)
        dy = np.asarray(self.dy, dtype=np.float64)
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "dy", dy)
        if dx.ndim != 2 or dx.shape != dy.shape:
            raise InvalidArgumentError(f"dx/dy must be matching 2-D planes, got {dx.shape} and {dy.shape}")
        if not (np.isfinite(dx).all() and np.isfinite(dy).all()):
            raise InvalidArgumentError("displacement field contains non-finite values")

    @property
    def height(self) -> int:
        return self.dx.shape[0]

    @property
    def width(self) -> int:
        return self.dx.shape[1]


def zero_field(h: int, w: int) -> DisplacementField:
    return DisplacementField(np.zeros((h, w)), np.zeros((h, w)))


def sample_gaussian_plane(
    stream: SeededStream | np.random.Generator, h: int, w: int, std: float
) -> np.ndarray:
    """i.i.d. N(0, std^2) plane from a seeded stream.

    Passing a SeededStream always restarts the stream (pure function of the
    triple); passing a Generator continues it, which is how one stream yields
    several independent planes.
    """
    if std < 0:
        raise InvalidArgumentError(f"std must be >= 0, got {std}")
    if std == 0:
        return np.zeros((h, w))
    rng = stream.generator() if isinstance(stream, SeededStream) else stream
    return rng.standard_normal((h, w)) * std


def _rescale_to_std(plane: np.ndarray, target_std: float) -> np.ndarray:
    current = float(plane.std())
    if current < 1e-12:
        return plane
    return plane * (target_std / current)


def elastic_field(
    stream: SeededStream | np.random.Generator, h: int, w: int, cfg: DeformationConfig
) -> DisplacementField:
    """Gaussian-smoothed i.i.d. noise displacement field.

    Each axis plane is N(0, sigma_px^2) noise convolved with the config's
    Gaussian kernel, where sigma_px = cfg.sigma * min(h, w). With
    rescale_after_smoothing the plane is scaled back to empirical std sigma_px
    (smoothing contracts variance); near-constant planes are left untouched.
    """
    sigma_px = cfg.sigma * min(h, w)
    rng = stream.generator() if isinstance(stream, SeededStream) else stream
    noise_x = sample_gaussian_plane(rng, h, w, sigma_px)
    noise_y = sample_gaussian_plane(rng, h, w, sigma_px)
    kernel = cfg.smoothing_kernel(h, w)
    dx = separable_blur(noise_x, kernel)
    dy = separable_blur(noise_y, kernel)
    if cfg.rescale_after_smoothing:
        dx = _rescale_to_std(dx, sigma_px)
        dy = _rescale_to_std(dy, sigma_px)
    return DisplacementField(dx, dy)


def grid_field_from_controls(ctrl_dx: np.ndarray, ctrl_dy: np.ndarray, h: int, w: int) -> DisplacementField:
    """Densify per-axis control-point displacements to an H x W field."""
    return DisplacementField(
        bicubic_upsample_grid(ctrl_dx, h, w),
        bicubic_upsample_grid(ctrl_dy, h, w),
    )


def grid_field(
    stream: SeededStream | np.random.Generator, h: int, w: int, cfg: DeformationConfig
) -> DisplacementField:
    """Control-grid displacement field.

    Draws grid_rows x grid_cols displacements per axis from N(0, sigma_px^2)
    and interpolates them to a dense field; the dense field reproduces the
    drawn values exactly at the control-point pixels.
    """
    sigma_px = cfg.sigma * min(h, w)
    rng = stream.generator() if isinstance(stream, SeededStream) else stream
    shape = (cfg.grid_rows, cfg.grid_cols)
    if sigma_px == 0:
        ctrl_dx = np.zeros(shape)
        ctrl_dy = np.zeros(shape)
    else:
        ctrl_dx = rng.standard_normal(shape) * sigma_px
        ctrl_dy = rng.standard_normal(shape) * sigma_px
    return grid_field_from_controls(ctrl_dx, ctrl_dy, h, w)


def warp(img: np.ndarray, field: DisplacementField) -> np.ndarray:
    """Resample an image through a displacement field: out(x) = img(x + d(x)).

    The same displacement applies to every channel; sampling is bilinear with
    clamp-to-edge, so a zero field reproduces the input bit for bit.
    """
    arr = validate_image(img)
    h, w = arr.shape[0], arr.shape[1]
    if (field.height, field.width) != (h, w):
        raise InvalidArgumentError(
            f"field is {field.height}x{field.width}, image is {h}x{w}"
        )
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return sample_bilinear(arr, xs + field.dx, ys + field.dy)


def elastic_count(n: int, elastic_fraction: float) -> int:
    """Number of elastic variants out of n: round half up of fraction * n."""
    return int(np.floor(elastic_fraction * n + 0.5))


def make_variants(
    img: np.ndarray,
    n: int,
    cfg: DeformationConfig,
    seed: int,
    image_id: int,
    workers: int = 1,
) -> list[np.ndarray]:
    """Generate the n class-invariant variants of an image.

    The first round(elastic_fraction * n) variants use elastic fields, the rest
    grid fields; variant i draws from SeededStream(seed, image_id, i). Output
    order and content depend only on the arguments, never on worker count.
    """
    if n < 0:
        raise InvalidArgumentError(f"variant count must be >= 0, got {n}")
    arr = validate_image(img)
    h, w = arr.shape[0], arr.shape[1]
    n_elastic = elastic_count(n, cfg.elastic_fraction)

    def build(i: int) -> np.ndarray:
        stream = SeededStream(seed, image_id, i)
        if i < n_elastic:
            field = elastic_field(stream, h, w, cfg)
        else:
            field = grid_field(stream, h, w, cfg)
        return warp(arr, field)

    if workers <= 1 or n <= 1:
        return [build(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(build, range(n)))


def dump_field(path: str | Path, field: DisplacementField) -> None:
    """Debug dump of a field as a 2-channel IMGF file (dx, dy)."""
    write_imgf(path, np.stack([field.dx, field.dy], axis=-1))


def read_field(path: str | Path) -> DisplacementField:
    """Read a field written by ``dump_field``."""
    from .imgcore import read_image

    arr = read_image(path)
    if arr.shape[2] != 2:
        raise InvalidArgumentError(f"field dump must have 2 channels, got {arr.shape[2]}")
    return DisplacementField(arr[:, :, 0], arr[:, :, 1])
